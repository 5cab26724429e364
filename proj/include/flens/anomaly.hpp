#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flens/dataset.hpp"
#include "flens/features.hpp"
#include "flens/gmm.hpp"
#include "flens/model.hpp"

namespace flens::anomaly {

/// Thresholds for the three anomaly-filter criteria plus the outlier
/// sample cluster-size cap.
struct AnomalyCriteria {
    int64_t lambda = 100;        // clusters with <= lambda points count as small
    double alpha = 0.2;          // unbalanced when #small > alpha * K
    double beta = 1.0;           // high CH when CH > beta * layer mean
    double theta = 0.2;          // active when activation >= theta * layer mean
    int64_t lambda_outlier = 5;  // outlier samples live in clusters of size <= this

    void validate() const;
    /// Named presets "exp1" | "exp2" | "exp3" carrying the published
    /// per-experiment thresholds.
    static AnomalyCriteria preset(const std::string& name);
};

/// Clustering outcome of one channel, the unit detect() consumes.
struct ChannelClusterStats {
    int64_t channel = 0;
    gmm::ClusterAssignment assignment;
    gmm::CHReport report;
};

struct ChannelRecord {
    int64_t channel = 0;
    bool degenerate = false;  // zero-variance channel, excluded from clustering
    int64_t k = 0;
    std::vector<int64_t> cluster_sizes;
    double ch = 0.0;  // +inf sentinel possible
    double activation = 0.0;
    bool unbalanced = false;
    bool high_ch = false;
    bool active = false;
    bool is_anomaly = false;
};

struct AnomalyReport {
    std::string layer_id;
    AnomalyCriteria criteria;
    double layer_mean_ch = 0.0;          // finite CH values only
    double layer_mean_activation = 0.0;  // clustered channels only
    std::vector<ChannelRecord> channels;
    std::vector<int64_t> anomaly_channels;
    std::vector<int64_t> outlier_sample_ids;  // union over anomaly channels
};

/// Flag computation on already-clustered channels:
///   unbalanced <=> #(clusters with size <= lambda) > alpha*K
///   high_ch    <=> CH infinite, or CH > beta * mean of the finite CHs
///   active     <=> activation >= theta * mean activation
/// is_anomaly is the conjunction. Means run over the channels passed in.
AnomalyReport detect_anomaly_filters(const std::string& layer_id,
                                     const std::vector<ChannelClusterStats>& channels,
                                     const std::vector<double>& activations,
                                     const AnomalyCriteria& criteria);

struct AnalysisConfig {
    int64_t eval_samples = 2000;  // seeded clustering subset size cap
    int64_t k_min = 2;
    int64_t k_max = 10;
    uint64_t seed = 0;
    gmm::GmmConfig gmm;
    int64_t capture_batch = 128;
};

/// Full per-channel analysis of one layer at one checkpoint: capture,
/// embed, select K, activation. Degenerate channels carry no fit.
struct ChannelAnalysis {
    int64_t channel = 0;
    bool degenerate = false;
    features::EmbeddedPoints embedding;
    std::optional<gmm::SelectKResult> fit;
    double activation = 0.0;
};

struct LayerAnalysis {
    std::string layer_id;
    std::vector<int64_t> sample_ids;  // dataset rows used for clustering
    std::vector<ChannelAnalysis> channels;
};

LayerAnalysis analyze_layer(const ModelSpec& spec, const Checkpoint& ckpt,
                            const data::Dataset& ds, const std::string& layer_id,
                            const AnalysisConfig& config);

/// detect_anomaly_filters over a LayerAnalysis; degenerate channels are
/// reported inactive and excluded from the layer means. Populates the
/// outlier-sample union (clusters of size <= lambda_outlier within
/// anomaly channels).
AnomalyReport detect_anomalies(const LayerAnalysis& analysis, const AnomalyCriteria& criteria);

/// Sample ids inhabiting clusters of size <= lambda_outlier for one
/// channel of a layer analysis.
struct OutlierSampleSet {
    std::string layer_id;
    int64_t channel = 0;
    std::vector<int64_t> sample_ids;  // unique, ascending
};

/// Per-channel outlier sets over all clustered channels, plus the
/// deduplicated union across the named anomaly channels.
std::vector<OutlierSampleSet> extract_outlier_samples(const LayerAnalysis& analysis,
                                                      int64_t lambda_outlier,
                                                      const std::vector<int64_t>& anomaly_channels,
                                                      std::vector<int64_t>& union_out);

struct SweepRow {
    int64_t epoch = 0;
    int64_t anomaly_count = 0;
};

/// Experiment-1 harness: for each checkpoint, cluster the named layers
/// and count anomaly filters. Per-checkpoint results are independent,
/// so the row order follows the input order.
std::vector<SweepRow> anomaly_count_sweep(const ModelSpec& spec,
                                          const std::vector<Checkpoint>& checkpoints,
                                          const data::Dataset& ds,
                                          const std::vector<std::string>& layers,
                                          const AnomalyCriteria& criteria,
                                          const AnalysisConfig& config);

/// Mean absolute parameter gradient per layer for one sample group.
struct GradientStats {
    std::string group;
    std::vector<std::pair<std::string, double>> per_layer;  // (layer_id, mean |grad|)
    double overall = 0.0;  // mean of the per-layer values
    int64_t sample_count = 0;
};

/// Per-sample forward/backward gradient statistics: each sample is run
/// individually against its true label and the per-layer mean absolute
/// gradients are averaged over the group.
GradientStats per_sample_gradient_stats(const ModelSpec& spec, const Checkpoint& ckpt,
                                        const std::vector<int64_t>& sample_ids,
                                        const data::Dataset& ds,
                                        const std::string& group_tag = "");

struct MaskSpec {
    std::vector<std::pair<std::string, int64_t>> filters;  // (layer-id, channel)
};

/// Zeroes the named conv filter (weight slice + bias entry). relu/pool
/// layer ids resolve to the nearest preceding conv. Returns a new
/// checkpoint; the input is untouched.
Checkpoint mask_filter(const ModelSpec& spec, const Checkpoint& ckpt,
                       const std::string& layer_id, int64_t channel);

Checkpoint apply_mask(const ModelSpec& spec, const Checkpoint& ckpt, const MaskSpec& mask);

struct MaskingEval {
    double train_acc_before = 0.0;
    double train_acc_after = 0.0;
    double val_acc_before = 0.0;
    double val_acc_after = 0.0;
    double train_delta() const { return train_acc_after - train_acc_before; }
    double val_delta() const { return val_acc_after - val_acc_before; }
};

/// Exact accuracies on both sets for the original and masked model.
MaskingEval evaluate_masking(const ModelSpec& spec, const Checkpoint& ckpt, const MaskSpec& mask,
                             const data::Dataset& train_set, const data::Dataset& val_set);

/// 2x2 correctness-transition counts of the named samples between the
/// original and masked checkpoints.
struct FlipReport {
    int64_t true_true = 0;
    int64_t true_false = 0;
    int64_t false_true = 0;
    int64_t false_false = 0;
    int64_t total() const { return true_true + true_false + false_true + false_false; }
};

FlipReport classification_flip_report(const ModelSpec& spec, const Checkpoint& ckpt,
                                      const Checkpoint& masked_ckpt,
                                      const std::vector<int64_t>& sample_ids,
                                      const data::Dataset& ds);

}  // namespace flens::anomaly
