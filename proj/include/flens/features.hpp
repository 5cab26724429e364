#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flens/dataset.hpp"
#include "flens/model.hpp"
#include "flens/tensor.hpp"

namespace flens::features {

/// Captured activations of one layer over an evaluation set.
struct FeatureMapSet {
    std::string layer_id;
    Tensor maps;                      // [B,C,H,W]
    std::vector<int64_t> sample_ids;  // dataset row of each batch row, unique

    int64_t batch() const { return maps.dim(0); }
    int64_t channels() const { return maps.dim(1); }
    void validate() const;
};

/// One channel's 2-D PCA embedding.
struct EmbeddedPoints {
    std::string layer_id;
    int64_t channel = 0;
    Tensor points;        // [B,2]
    Tensor basis;         // [2,D], orthonormal component rows
    Tensor mean;          // [D]
    double variances[2] = {0.0, 0.0};  // explained variances, descending
    bool degenerate = false;           // all rows identical; points forced to zero
};

/// Row b = row-major flattening of maps[b,c,:,:], shape [B, H*W].
Tensor flatten_channel(const FeatureMapSet& fms, int64_t channel);

/// Top-2 PCA of S [B,D] via explicit covariance (divisor B-1) and a
/// symmetric eigensolver. Sign convention: the largest-magnitude
/// coordinate of each component is positive. Requires B >= 3, D >= 2.
EmbeddedPoints pca_2d(const Tensor& s);

/// Independent per-channel PCA over every channel, order preserved.
std::vector<EmbeddedPoints> embed_layer(const FeatureMapSet& fms);

/// Mean absolute activation of one channel over the evaluation set.
double channel_activation(const FeatureMapSet& fms, int64_t channel);

/// Runs the model over the given dataset rows and assembles the named
/// layer's output maps.
FeatureMapSet capture_feature_maps(const ModelSpec& spec, const Checkpoint& ckpt,
                                   const data::Dataset& ds,
                                   const std::vector<int64_t>& sample_indices,
                                   const std::string& layer_id, int64_t batch_size = 128);

/// Seeded evaluation subset for clustering: min(N, max_samples) rows.
std::vector<int64_t> evaluation_subset(int64_t n, int64_t max_samples, uint64_t seed);

// Symmetric eigensolvers behind pca_2d, exposed for tests.
// jacobi_eigen returns all eigenpairs (descending); columns of `vectors`
// are eigenvectors.
void jacobi_eigen(const Tensor& sym, std::vector<double>& values, Tensor& vectors);

}  // namespace flens::features
