#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "flens/tensor.hpp"

namespace flens::gmm {

struct GmmConfig {
    int max_iter = 200;
    double tol = 1e-6;   // relative log-likelihood change
    double reg = 1e-6;   // trace-scaled covariance ridge, added each M-step
};

/// Mixture parameters of one channel's fitted GMM: weights sum to 1,
/// each 2x2 covariance stays symmetric positive-definite (the M-step
/// ridge keeps eigenvalues above the regularization floor).
struct GmmParams {
    int64_t k = 0;
    std::vector<double> weights;  // pi_k
    Tensor means;                 // [K,2]
    Tensor covariances;           // [K,2,2]
};

struct ClusterAssignment {
    std::vector<int64_t> labels;             // argmax posterior per point
    Tensor responsibilities;                 // [B,K], rows sum to 1
    std::vector<double> log_likelihood_trace;  // one entry per E-step
    int64_t reinit_count = 0;                // collapsed-component restarts
};

/// Calinski-Harabasz evaluation of one labeling.
struct CHReport {
    int64_t k = 0;
    int64_t n = 0;
    std::vector<int64_t> cluster_sizes;
    Tensor centroids;                   // [K,2]
    std::array<double, 2> global_centroid{0.0, 0.0};
    double ssw = 0.0;
    double ssb = 0.0;
    double ch = 0.0;  // +inf sentinel when ssw == 0 exactly
};

/// EM fit of a K-component full-covariance GMM on 2-D points.
/// Initialization: first mean drawn by seed, the rest by farthest-point
/// selection; covariances start at the global sample covariance;
/// weights uniform. Components whose soft count drops below 2 are
/// reinitialized from the farthest point (counted in the assignment).
std::pair<GmmParams, ClusterAssignment> gmm_fit(const Tensor& points, int64_t k, uint64_t seed,
                                                const GmmConfig& config = {});

/// Posterior over components for one point, computed in log-space with
/// max-subtraction. Entries are positive and sum to 1.
std::vector<double> gmm_posterior(const GmmParams& params, const std::array<double, 2>& x);

/// CH = (SSB/(K-1)) / (SSW/(N-K)). SSW sums squared distances of points
/// to their own centroid; SSB sums size-weighted squared distances of
/// centroids to the global centroid. Requires K >= 2, N > K and every
/// cluster non-empty.
CHReport ch_index(const Tensor& points, const std::vector<int64_t>& labels);

struct SelectKResult {
    int64_t k = 0;
    GmmParams params;
    ClusterAssignment assignment;
    CHReport report;
    std::vector<int64_t> skipped_k;  // fits that produced an empty cluster
};

/// Fits every K in [k_min, k_max], scores each labeling with ch_index
/// and returns the argmax. Ties break toward smaller K; +inf CH
/// (zero within-class scatter) outranks every finite score.
SelectKResult select_k(const Tensor& points, int64_t k_min, int64_t k_max, uint64_t seed,
                       const GmmConfig& config = {});

}  // namespace flens::gmm
