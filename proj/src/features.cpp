#include "flens/features.hpp"

#include <algorithm>
#include <exception>
#include <cmath>
#include <set>

#include "flens/nn_ops.hpp"
#include "flens/rng.hpp"

namespace flens::features {

namespace {

// Cyclic Jacobi is exact and cheap for the small covariances; above
// kJacobiLimit a 2-column subspace iteration finds the top-2 pairs.
constexpr int64_t kJacobiLimit = 64;

void apply_sign_convention(Tensor& basis) {
    const int64_t d = basis.dim(1);
    for (int64_t r = 0; r < 2; ++r) {
        double* v = basis.data() + r * d;
        int64_t arg = 0;
        for (int64_t i = 1; i < d; ++i) {
            if (std::fabs(v[i]) > std::fabs(v[arg])) arg = i;
        }
        if (v[arg] < 0.0) {
            for (int64_t i = 0; i < d; ++i) v[i] = -v[i];
        }
    }
}

// Top-2 eigenpairs of a symmetric matrix by block power iteration with
// Gram-Schmidt re-orthonormalization and a final 2x2 Rayleigh-Ritz
// rotation. Deterministic start from the two largest diagonal entries.
void top2_subspace(const Tensor& c, double out_values[2], Tensor& out_vectors) {
    const int64_t n = c.dim(0);
    std::vector<double> q1(static_cast<size_t>(n), 0.0), q2(static_cast<size_t>(n), 0.0);
    int64_t d0 = 0, d1 = -1;
    for (int64_t i = 1; i < n; ++i) {
        if (c.at2(i, i) > c.at2(d0, d0)) d0 = i;
    }
    for (int64_t i = 0; i < n; ++i) {
        if (i != d0 && (d1 < 0 || c.at2(i, i) > c.at2(d1, d1))) d1 = i;
    }
    q1[static_cast<size_t>(d0)] = 1.0;
    q2[static_cast<size_t>(d1)] = 1.0;

    double trace = 0.0;
    for (int64_t i = 0; i < n; ++i) trace += c.at2(i, i);
    const double tol = std::max(trace, 1e-300) * 1e-14;

    std::vector<double> z1(static_cast<size_t>(n)), z2(static_cast<size_t>(n));
    auto matvec = [&](const std::vector<double>& x, std::vector<double>& y) {
        for (int64_t i = 0; i < n; ++i) {
            const double* row = c.data() + i * n;
            double s = 0.0;
            for (int64_t j = 0; j < n; ++j) s += row[j] * x[static_cast<size_t>(j)];
            y[static_cast<size_t>(i)] = s;
        }
    };
    auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (int64_t i = 0; i < n; ++i) s += a[static_cast<size_t>(i)] * b[static_cast<size_t>(i)];
        return s;
    };
    auto normalize = [&](std::vector<double>& v) {
        double nv = std::sqrt(dot(v, v));
        if (nv == 0.0) return false;
        for (auto& x : v) x /= nv;
        return true;
    };

    double prev_sum = -1.0;
    for (int iter = 0; iter < 3000; ++iter) {
        matvec(q1, z1);
        matvec(q2, z2);
        if (!normalize(z1)) {
            // zero image: the operator annihilates q1 (rank-deficient
            // covariance); keep the old direction
            z1 = q1;
        }
        double proj = dot(z2, z1);
        for (int64_t i = 0; i < n; ++i) z2[static_cast<size_t>(i)] -= proj * z1[static_cast<size_t>(i)];
        if (!normalize(z2)) {
            // rebuild an orthogonal companion from the largest free axis
            z2.assign(static_cast<size_t>(n), 0.0);
            for (int64_t i = 0; i < n; ++i) {
                std::vector<double> e(static_cast<size_t>(n), 0.0);
                e[static_cast<size_t>(i)] = 1.0;
                double p = dot(e, z1);
                for (int64_t j = 0; j < n; ++j) e[static_cast<size_t>(j)] -= p * z1[static_cast<size_t>(j)];
                if (normalize(e)) {
                    z2 = e;
                    break;
                }
            }
        }
        q1.swap(z1);
        q2.swap(z2);

        // Rayleigh quotients stabilize when the subspace has converged.
        matvec(q1, z1);
        matvec(q2, z2);
        const double r11 = dot(q1, z1), r22 = dot(q2, z2);
        const double sum = r11 + r22;
        if (iter > 2 && std::fabs(sum - prev_sum) <= tol) break;
        prev_sum = sum;
    }

    // Rayleigh-Ritz on the 2-D subspace: diagonalize [[a,b],[b,d]].
    matvec(q1, z1);
    matvec(q2, z2);
    const double a = dot(q1, z1), b = dot(q1, z2), d = dot(q2, z2);
    double ct = 1.0, st = 0.0;
    if (std::fabs(b) > 1e-300) {
        const double theta = 0.5 * std::atan2(2.0 * b, a - d);
        ct = std::cos(theta);
        st = std::sin(theta);
    }
    const double l1 = ct * ct * a + 2.0 * ct * st * b + st * st * d;
    const double l2 = st * st * a - 2.0 * ct * st * b + ct * ct * d;

    std::vector<double> v1(static_cast<size_t>(n)), v2(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        v1[static_cast<size_t>(i)] = ct * q1[static_cast<size_t>(i)] + st * q2[static_cast<size_t>(i)];
        v2[static_cast<size_t>(i)] = -st * q1[static_cast<size_t>(i)] + ct * q2[static_cast<size_t>(i)];
    }
    if (l2 > l1) {
        std::swap(v1, v2);
        out_values[0] = l2;
        out_values[1] = l1;
    } else {
        out_values[0] = l1;
        out_values[1] = l2;
    }
    // one clean re-orthonormalization pass
    double nv = std::sqrt(dot(v1, v1));
    for (auto& x : v1) x /= nv;
    double p = dot(v2, v1);
    for (int64_t i = 0; i < n; ++i) v2[static_cast<size_t>(i)] -= p * v1[static_cast<size_t>(i)];
    nv = std::sqrt(dot(v2, v2));
    for (auto& x : v2) x /= nv;

    out_vectors = Tensor({2, n});
    for (int64_t i = 0; i < n; ++i) {
        out_vectors.at2(0, i) = v1[static_cast<size_t>(i)];
        out_vectors.at2(1, i) = v2[static_cast<size_t>(i)];
    }
}

}  // namespace

void FeatureMapSet::validate() const {
    require_rank(maps, 4, "feature maps");
    if (static_cast<int64_t>(sample_ids.size()) != maps.dim(0)) {
        throw InputError("feature map set: " + std::to_string(sample_ids.size()) +
                         " sample ids for " + std::to_string(maps.dim(0)) + " rows");
    }
    std::set<int64_t> uniq(sample_ids.begin(), sample_ids.end());
    if (uniq.size() != sample_ids.size()) {
        throw InputError("feature map set: duplicate sample ids");
    }
}

Tensor flatten_channel(const FeatureMapSet& fms, int64_t channel) {
    if (channel < 0 || channel >= fms.channels()) {
        throw InputError("flatten_channel: channel " + std::to_string(channel) +
                         " out of range [0," + std::to_string(fms.channels()) + ")");
    }
    const int64_t b = fms.maps.dim(0), c = fms.maps.dim(1);
    const int64_t hw = fms.maps.dim(2) * fms.maps.dim(3);
    Tensor s({b, hw});
    for (int64_t i = 0; i < b; ++i) {
        const double* src = fms.maps.data() + (i * c + channel) * hw;
        std::copy(src, src + hw, s.data() + i * hw);
    }
    return s;
}

void jacobi_eigen(const Tensor& sym, std::vector<double>& values, Tensor& vectors) {
    require_rank(sym, 2, "jacobi_eigen");
    const int64_t n = sym.dim(0);
    if (sym.dim(1) != n) throw InputError("jacobi_eigen: matrix not square");

    Tensor a = sym;
    vectors = Tensor({n, n});
    for (int64_t i = 0; i < n; ++i) vectors.at2(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int64_t p = 0; p < n; ++p) {
            for (int64_t q = p + 1; q < n; ++q) off += a.at2(p, q) * a.at2(p, q);
        }
        if (off <= 1e-300) break;
        for (int64_t p = 0; p < n; ++p) {
            for (int64_t q = p + 1; q < n; ++q) {
                const double apq = a.at2(p, q);
                if (std::fabs(apq) < 1e-300) continue;
                const double app = a.at2(p, p), aqq = a.at2(q, q);
                const double theta = 0.5 * std::atan2(2.0 * apq, app - aqq);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int64_t k = 0; k < n; ++k) {
                    const double akp = a.at2(k, p), akq = a.at2(k, q);
                    a.at2(k, p) = c * akp + s * akq;
                    a.at2(k, q) = -s * akp + c * akq;
                }
                for (int64_t k = 0; k < n; ++k) {
                    const double apk = a.at2(p, k), aqk = a.at2(q, k);
                    a.at2(p, k) = c * apk + s * aqk;
                    a.at2(q, k) = -s * apk + c * aqk;
                }
                for (int64_t k = 0; k < n; ++k) {
                    const double vkp = vectors.at2(k, p), vkq = vectors.at2(k, q);
                    vectors.at2(k, p) = c * vkp + s * vkq;
                    vectors.at2(k, q) = -s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](int64_t x, int64_t y) { return a.at2(x, x) > a.at2(y, y); });

    values.resize(static_cast<size_t>(n));
    Tensor sorted({n, n});
    for (int64_t j = 0; j < n; ++j) {
        const int64_t src = order[static_cast<size_t>(j)];
        values[static_cast<size_t>(j)] = a.at2(src, src);
        for (int64_t i = 0; i < n; ++i) sorted.at2(i, j) = vectors.at2(i, src);
    }
    vectors = std::move(sorted);
}

EmbeddedPoints pca_2d(const Tensor& s) {
    require_rank(s, 2, "pca_2d input");
    const int64_t b = s.dim(0), d = s.dim(1);
    if (b < 3) throw InputError("pca_2d: need at least 3 rows, got " + std::to_string(b));
    if (d < 2) throw InputError("pca_2d: need at least 2 features, got " + std::to_string(d));

    EmbeddedPoints e;
    e.points = Tensor({b, 2});
    e.mean = Tensor({d});
    for (int64_t j = 0; j < d; ++j) {
        double m = 0.0;
        for (int64_t i = 0; i < b; ++i) m += s.at2(i, j);
        e.mean[j] = m / static_cast<double>(b);
    }

    Tensor centered({b, d});
    double max_dev = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < d; ++j) {
            const double v = s.at2(i, j) - e.mean[j];
            centered.at2(i, j) = v;
            max_dev = std::max(max_dev, std::fabs(v));
        }
    }

    if (max_dev == 0.0) {
        // single point mass: all projections zero, arbitrary fixed basis
        e.degenerate = true;
        e.basis = Tensor({2, d});
        e.basis.at2(0, 0) = 1.0;
        e.basis.at2(1, 1) = 1.0;
        return e;
    }

    Tensor cov({d, d});
    nn::matmul_at_b_acc(centered.data(), centered.data(), cov.data(), d, b, d);
    const double scale = 1.0 / static_cast<double>(b - 1);
    for (int64_t i = 0; i < d * d; ++i) cov[i] *= scale;

    double vals[2];
    if (d <= kJacobiLimit) {
        std::vector<double> values;
        Tensor vectors;
        jacobi_eigen(cov, values, vectors);
        vals[0] = values[0];
        vals[1] = values[1];
        e.basis = Tensor({2, d});
        for (int64_t j = 0; j < d; ++j) {
            e.basis.at2(0, j) = vectors.at2(j, 0);
            e.basis.at2(1, j) = vectors.at2(j, 1);
        }
    } else {
        top2_subspace(cov, vals, e.basis);
    }
    // tiny negative eigenvalues are rounding of a PSD matrix
    e.variances[0] = std::max(vals[0], 0.0);
    e.variances[1] = std::max(vals[1], 0.0);

    apply_sign_convention(e.basis);
    for (int64_t i = 0; i < b; ++i) {
        double x = 0.0, y = 0.0;
        const double* row = centered.data() + i * d;
        const double* v1 = e.basis.data();
        const double* v2 = e.basis.data() + d;
        for (int64_t j = 0; j < d; ++j) {
            x += row[j] * v1[j];
            y += row[j] * v2[j];
        }
        e.points.at2(i, 0) = x;
        e.points.at2(i, 1) = y;
    }
    return e;
}

std::vector<EmbeddedPoints> embed_layer(const FeatureMapSet& fms) {
    fms.validate();
    const int64_t c = fms.channels();
    std::vector<EmbeddedPoints> out(static_cast<size_t>(c));
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int64_t ch = 0; ch < c; ++ch) {
        try {
            EmbeddedPoints e = pca_2d(flatten_channel(fms, ch));
            e.layer_id = fms.layer_id;
            e.channel = ch;
            out[static_cast<size_t>(ch)] = std::move(e);
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

double channel_activation(const FeatureMapSet& fms, int64_t channel) {
    if (channel < 0 || channel >= fms.channels()) {
        throw InputError("channel_activation: channel out of range");
    }
    const int64_t b = fms.maps.dim(0), c = fms.maps.dim(1);
    const int64_t hw = fms.maps.dim(2) * fms.maps.dim(3);
    double sum = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        const double* src = fms.maps.data() + (i * c + channel) * hw;
        for (int64_t j = 0; j < hw; ++j) sum += std::fabs(src[j]);
    }
    return sum / static_cast<double>(b * hw);
}

FeatureMapSet capture_feature_maps(const ModelSpec& spec, const Checkpoint& ckpt,
                                   const data::Dataset& ds,
                                   const std::vector<int64_t>& sample_indices,
                                   const std::string& layer_id, int64_t batch_size) {
    if (sample_indices.empty()) throw InputError("capture_feature_maps: no samples");
    const std::vector<std::string> ids{layer_id};

    FeatureMapSet fms;
    fms.layer_id = layer_id;
    fms.sample_ids = sample_indices;

    double* dst = nullptr;
    int64_t item = 0;
    for (size_t start = 0; start < sample_indices.size();
         start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(sample_indices.size(), start + static_cast<size_t>(batch_size));
        std::vector<int64_t> chunk(sample_indices.begin() + static_cast<ptrdiff_t>(start),
                                   sample_indices.begin() + static_cast<ptrdiff_t>(end));
        auto [images, labels] = data::gather_batch(ds, chunk);
        auto [logits, captured] = forward_with_capture(spec, ckpt, images, ids);
        const Tensor& maps = captured.at(layer_id);
        if (maps.rank() != 4) {
            throw InputError("layer '" + layer_id + "' does not produce 4-D feature maps");
        }
        if (dst == nullptr) {
            fms.maps = Tensor({static_cast<int64_t>(sample_indices.size()), maps.dim(1),
                               maps.dim(2), maps.dim(3)});
            dst = fms.maps.data();
            item = maps.dim(1) * maps.dim(2) * maps.dim(3);
        }
        std::copy(maps.data(), maps.data() + maps.numel(), dst + static_cast<int64_t>(start) * item);
    }
    fms.validate();
    return fms;
}

std::vector<int64_t> evaluation_subset(int64_t n, int64_t max_samples, uint64_t seed) {
    if (n < 1) throw InputError("evaluation_subset: empty dataset");
    Rng rng(mix_seed(seed, 0xeba15));
    std::vector<int64_t> perm = rng.permutation(n);
    const int64_t take = std::min(n, max_samples);
    perm.resize(static_cast<size_t>(take));
    std::sort(perm.begin(), perm.end());
    return perm;
}

}  // namespace flens::features
