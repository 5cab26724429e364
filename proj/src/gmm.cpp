#include "flens/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "flens/rng.hpp"

namespace flens::gmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
constexpr double kEigFloor = 1e-12;

struct Cov2 {
    double a, b, d;  // [[a,b],[b,d]]

    double det() const { return a * d - b * b; }
    double min_eig() const {
        const double tr = a + d;
        const double disc = std::sqrt(std::max((a - d) * (a - d) + 4.0 * b * b, 0.0));
        return 0.5 * (tr - disc);
    }
};

Cov2 cov_at(const Tensor& covs, int64_t k) {
    const double* p = covs.data() + k * 4;
    return Cov2{p[0], p[1], p[3]};
}

void cov_store(Tensor& covs, int64_t k, const Cov2& c) {
    double* p = covs.data() + k * 4;
    p[0] = c.a;
    p[1] = c.b;
    p[2] = c.b;
    p[3] = c.d;
}

// log N(x | mu, Sigma) for a 2x2 covariance
double log_gauss(double dx, double dy, const Cov2& s) {
    const double det = s.det();
    if (!(det > 0.0) || !std::isfinite(det)) {
        throw NumericError("gmm: covariance not positive-definite (det=" + std::to_string(det) +
                           ")");
    }
    const double inv_a = s.d / det, inv_d = s.a / det, inv_b = -s.b / det;
    const double quad = dx * (inv_a * dx + inv_b * dy) + dy * (inv_b * dx + inv_d * dy);
    return -kLog2Pi - 0.5 * std::log(det) - 0.5 * quad;
}

Cov2 sample_covariance(const Tensor& points) {
    const int64_t b = points.dim(0);
    double mx = 0.0, my = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        mx += points.at2(i, 0);
        my += points.at2(i, 1);
    }
    mx /= static_cast<double>(b);
    my /= static_cast<double>(b);
    Cov2 c{0.0, 0.0, 0.0};
    for (int64_t i = 0; i < b; ++i) {
        const double dx = points.at2(i, 0) - mx;
        const double dy = points.at2(i, 1) - my;
        c.a += dx * dx;
        c.b += dx * dy;
        c.d += dy * dy;
    }
    const double denom = static_cast<double>(std::max<int64_t>(b - 1, 1));
    c.a /= denom;
    c.b /= denom;
    c.d /= denom;
    return c;
}

void regularize(Cov2& c, double reg, double global_scale) {
    const double tr_half = 0.5 * (c.a + c.d);
    const double ridge = reg * std::max(tr_half, global_scale) + kEigFloor;
    c.a += ridge;
    c.d += ridge;
}

// index of the data point with maximum distance to its nearest mean
int64_t farthest_point(const Tensor& points, const Tensor& means, int64_t k_used) {
    const int64_t b = points.dim(0);
    int64_t best = 0;
    double best_d = -1.0;
    for (int64_t i = 0; i < b; ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (int64_t k = 0; k < k_used; ++k) {
            const double dx = points.at2(i, 0) - means.at2(k, 0);
            const double dy = points.at2(i, 1) - means.at2(k, 1);
            nearest = std::min(nearest, dx * dx + dy * dy);
        }
        if (nearest > best_d) {
            best_d = nearest;
            best = i;
        }
    }
    return best;
}

}  // namespace

std::pair<GmmParams, ClusterAssignment> gmm_fit(const Tensor& points, int64_t k, uint64_t seed,
                                                const GmmConfig& config) {
    require_rank(points, 2, "gmm_fit points");
    if (points.dim(1) != 2) throw InputError("gmm_fit: points must be [B,2]");
    const int64_t b = points.dim(0);
    if (k < 1) throw InputError("gmm_fit: K must be >= 1");
    if (b < k) {
        throw InputError("gmm_fit: " + std::to_string(b) + " points cannot support K=" +
                         std::to_string(k));
    }
    points.require_finite("gmm_fit points");

    const Cov2 global_cov = sample_covariance(points);
    const double global_scale = std::max(0.5 * (global_cov.a + global_cov.d), kEigFloor);

    GmmParams params;
    params.k = k;
    params.weights.assign(static_cast<size_t>(k), 1.0 / static_cast<double>(k));
    params.means = Tensor({k, 2});
    params.covariances = Tensor({k, 2, 2});

    // farthest-point init seeded by the first draw
    Rng rng(mix_seed(seed, 0x63636));
    const int64_t first = rng.uniform_int(b);
    params.means.at2(0, 0) = points.at2(first, 0);
    params.means.at2(0, 1) = points.at2(first, 1);
    for (int64_t j = 1; j < k; ++j) {
        const int64_t far = farthest_point(points, params.means, j);
        params.means.at2(j, 0) = points.at2(far, 0);
        params.means.at2(j, 1) = points.at2(far, 1);
    }
    for (int64_t j = 0; j < k; ++j) {
        Cov2 c = global_cov;
        regularize(c, config.reg, global_scale);
        cov_store(params.covariances, j, c);
    }

    ClusterAssignment assign;
    assign.responsibilities = Tensor({b, k});
    assign.labels.assign(static_cast<size_t>(b), 0);

    std::vector<double> logw(static_cast<size_t>(k));
    auto e_step = [&]() {
        double ll = 0.0;
        for (int64_t i = 0; i < b; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int64_t j = 0; j < k; ++j) {
                const Cov2 c = cov_at(params.covariances, j);
                const double lw = std::log(params.weights[static_cast<size_t>(j)]) +
                                  log_gauss(points.at2(i, 0) - params.means.at2(j, 0),
                                            points.at2(i, 1) - params.means.at2(j, 1), c);
                logw[static_cast<size_t>(j)] = lw;
                mx = std::max(mx, lw);
            }
            double denom = 0.0;
            for (int64_t j = 0; j < k; ++j) {
                denom += std::exp(logw[static_cast<size_t>(j)] - mx);
            }
            ll += mx + std::log(denom);
            for (int64_t j = 0; j < k; ++j) {
                assign.responsibilities.at2(i, j) =
                    std::exp(logw[static_cast<size_t>(j)] - mx) / denom;
            }
        }
        if (!std::isfinite(ll)) throw NumericError("gmm_fit: non-finite log-likelihood");
        assign.log_likelihood_trace.push_back(ll);
        return ll;
    };

    double prev_ll = -std::numeric_limits<double>::infinity();
    bool converged = false;
    for (int iter = 0; iter < config.max_iter; ++iter) {
        const double ll = e_step();
        const double rel = std::fabs(ll - prev_ll) / (std::fabs(prev_ll) + 1e-12);
        if (iter > 0 && rel < config.tol) {
            converged = true;
            break;
        }
        prev_ll = ll;

        // M-step
        bool reinit_this_iter = false;
        for (int64_t j = 0; j < k; ++j) {
            double nk = 0.0, sx = 0.0, sy = 0.0;
            for (int64_t i = 0; i < b; ++i) {
                const double r = assign.responsibilities.at2(i, j);
                nk += r;
                sx += r * points.at2(i, 0);
                sy += r * points.at2(i, 1);
            }
            if (nk < 2.0) {
                // collapsed component: restart it at the point farthest
                // from the current means
                const int64_t far = farthest_point(points, params.means, k);
                params.means.at2(j, 0) = points.at2(far, 0);
                params.means.at2(j, 1) = points.at2(far, 1);
                Cov2 c = global_cov;
                regularize(c, config.reg, global_scale);
                cov_store(params.covariances, j, c);
                params.weights[static_cast<size_t>(j)] = 1.0 / static_cast<double>(b);
                assign.reinit_count += 1;
                reinit_this_iter = true;
                continue;
            }
            const double mux = sx / nk, muy = sy / nk;
            Cov2 c{0.0, 0.0, 0.0};
            for (int64_t i = 0; i < b; ++i) {
                const double r = assign.responsibilities.at2(i, j);
                const double dx = points.at2(i, 0) - mux;
                const double dy = points.at2(i, 1) - muy;
                c.a += r * dx * dx;
                c.b += r * dx * dy;
                c.d += r * dy * dy;
            }
            c.a /= nk;
            c.b /= nk;
            c.d /= nk;
            regularize(c, config.reg, global_scale);

            params.weights[static_cast<size_t>(j)] = nk / static_cast<double>(b);
            params.means.at2(j, 0) = mux;
            params.means.at2(j, 1) = muy;
            cov_store(params.covariances, j, c);
        }
        double wsum = 0.0;
        for (double w : params.weights) wsum += w;
        for (auto& w : params.weights) w /= wsum;
        if (reinit_this_iter) {
            // restart convergence tracking after a discontinuous jump
            prev_ll = -std::numeric_limits<double>::infinity();
        }
    }
    if (!converged) {
        // loop ended on an M-step: refresh responsibilities so labels
        // reflect the final parameters
        e_step();
    }

    for (int64_t i = 0; i < b; ++i) {
        int64_t best = 0;
        for (int64_t j = 1; j < k; ++j) {
            if (assign.responsibilities.at2(i, j) > assign.responsibilities.at2(i, best)) {
                best = j;
            }
        }
        assign.labels[static_cast<size_t>(i)] = best;
    }
    return {std::move(params), std::move(assign)};
}

std::vector<double> gmm_posterior(const GmmParams& params, const std::array<double, 2>& x) {
    if (params.k < 1) throw InputError("gmm_posterior: empty mixture");
    std::vector<double> logw(static_cast<size_t>(params.k));
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < params.k; ++j) {
        const Cov2 c = cov_at(params.covariances, j);
        if (!(c.min_eig() >= kEigFloor)) {
            throw NumericError("gmm_posterior: covariance " + std::to_string(j) +
                               " below the regularization floor");
        }
        logw[static_cast<size_t>(j)] =
            std::log(params.weights[static_cast<size_t>(j)]) +
            log_gauss(x[0] - params.means.at2(j, 0), x[1] - params.means.at2(j, 1), c);
        mx = std::max(mx, logw[static_cast<size_t>(j)]);
    }
    double denom = 0.0;
    for (double lw : logw) denom += std::exp(lw - mx);
    std::vector<double> post(static_cast<size_t>(params.k));
    for (int64_t j = 0; j < params.k; ++j) {
        post[static_cast<size_t>(j)] = std::exp(logw[static_cast<size_t>(j)] - mx) / denom;
    }
    return post;
}

CHReport ch_index(const Tensor& points, const std::vector<int64_t>& labels) {
    require_rank(points, 2, "ch_index points");
    if (points.dim(1) != 2) throw InputError("ch_index: points must be [B,2]");
    const int64_t n = points.dim(0);
    if (static_cast<int64_t>(labels.size()) != n) {
        throw InputError("ch_index: label count does not match points");
    }

    int64_t k = 0;
    for (int64_t l : labels) {
        if (l < 0) throw InputError("ch_index: negative label");
        k = std::max(k, l + 1);
    }
    if (k < 2) throw InputError("ch_index: needs K >= 2 clusters, got K=" + std::to_string(k));
    if (n <= k) throw InputError("ch_index: needs N > K");

    CHReport r;
    r.k = k;
    r.n = n;
    r.cluster_sizes.assign(static_cast<size_t>(k), 0);
    r.centroids = Tensor({k, 2});
    for (int64_t i = 0; i < n; ++i) {
        const int64_t l = labels[static_cast<size_t>(i)];
        r.cluster_sizes[static_cast<size_t>(l)] += 1;
        r.centroids.at2(l, 0) += points.at2(i, 0);
        r.centroids.at2(l, 1) += points.at2(i, 1);
        r.global_centroid[0] += points.at2(i, 0);
        r.global_centroid[1] += points.at2(i, 1);
    }
    for (int64_t j = 0; j < k; ++j) {
        const int64_t sz = r.cluster_sizes[static_cast<size_t>(j)];
        if (sz == 0) throw InputError("ch_index: cluster " + std::to_string(j) + " is empty");
        r.centroids.at2(j, 0) /= static_cast<double>(sz);
        r.centroids.at2(j, 1) /= static_cast<double>(sz);
    }
    r.global_centroid[0] /= static_cast<double>(n);
    r.global_centroid[1] /= static_cast<double>(n);

    for (int64_t i = 0; i < n; ++i) {
        const int64_t l = labels[static_cast<size_t>(i)];
        const double dx = points.at2(i, 0) - r.centroids.at2(l, 0);
        const double dy = points.at2(i, 1) - r.centroids.at2(l, 1);
        r.ssw += dx * dx + dy * dy;
    }
    for (int64_t j = 0; j < k; ++j) {
        const double dx = r.centroids.at2(j, 0) - r.global_centroid[0];
        const double dy = r.centroids.at2(j, 1) - r.global_centroid[1];
        r.ssb += static_cast<double>(r.cluster_sizes[static_cast<size_t>(j)]) * (dx * dx + dy * dy);
    }
    if (r.ssw == 0.0) {
        r.ch = std::numeric_limits<double>::infinity();
    } else {
        r.ch = (r.ssb / static_cast<double>(k - 1)) / (r.ssw / static_cast<double>(n - k));
    }
    return r;
}

SelectKResult select_k(const Tensor& points, int64_t k_min, int64_t k_max, uint64_t seed,
                       const GmmConfig& config) {
    const int64_t b = points.dim(0);
    if (k_min < 2 || k_min > k_max || k_max > b - 1) {
        throw InputError("select_k: need 2 <= k_min <= k_max <= B-1 (B=" + std::to_string(b) +
                         ", range [" + std::to_string(k_min) + "," + std::to_string(k_max) + "])");
    }

    SelectKResult best;
    bool found = false;
    for (int64_t k = k_min; k <= k_max; ++k) {
        auto [params, assign] = gmm_fit(points, k, mix_seed(seed, static_cast<uint64_t>(k)), config);
        bool empty_cluster = false;
        {
            std::vector<int64_t> counts(static_cast<size_t>(k), 0);
            for (int64_t l : assign.labels) counts[static_cast<size_t>(l)] += 1;
            for (int64_t c : counts) {
                if (c == 0) empty_cluster = true;
            }
        }
        if (empty_cluster) {
            best.skipped_k.push_back(k);
            continue;
        }
        CHReport report = ch_index(points, assign.labels);
        // strict > keeps the smaller K on ties
        if (!found || report.ch > best.report.ch) {
            found = true;
            best.k = k;
            best.params = std::move(params);
            best.assignment = std::move(assign);
            best.report = std::move(report);
        }
    }
    if (!found) {
        throw InputError("select_k: degenerate input, every K in [" + std::to_string(k_min) +
                         "," + std::to_string(k_max) + "] produced an empty cluster");
    }
    return best;
}

}  // namespace flens::gmm
