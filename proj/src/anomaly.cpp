#include "flens/anomaly.hpp"

#include <algorithm>
#include <exception>
#include <cmath>
#include <limits>
#include <set>

#include "flens/nn_ops.hpp"
#include "flens/rng.hpp"
#include "flens/train.hpp"

namespace flens::anomaly {

void AnomalyCriteria::validate() const {
    if (lambda < 1) throw ConfigError("criteria: lambda must be >= 1");
    if (!(alpha > 0.0)) throw ConfigError("criteria: alpha must be > 0");
    if (!(beta > 0.0)) throw ConfigError("criteria: beta must be > 0");
    if (!(theta > 0.0)) throw ConfigError("criteria: theta must be > 0");
    if (lambda_outlier < 1) throw ConfigError("criteria: lambda_outlier must be >= 1");
}

AnomalyCriteria AnomalyCriteria::preset(const std::string& name) {
    AnomalyCriteria c;
    if (name == "exp1") {
        c.lambda = 100;
        c.alpha = 0.2;
        c.beta = 1.0;
        c.theta = 0.2;
    } else if (name == "exp2") {
        // the published row pins lambda = 5; the unstated detection
        // thresholds carry over from exp1
        c.lambda = 5;
        c.alpha = 0.2;
        c.beta = 1.0;
        c.theta = 0.2;
    } else if (name == "exp3") {
        c.lambda = 50;
        c.alpha = 0.2;
        c.beta = 1.2;
        c.theta = 0.5;
    } else {
        throw ConfigError("unknown criteria preset '" + name + "' (expected exp1|exp2|exp3)");
    }
    c.lambda_outlier = 5;
    return c;
}

AnomalyReport detect_anomaly_filters(const std::string& layer_id,
                                     const std::vector<ChannelClusterStats>& channels,
                                     const std::vector<double>& activations,
                                     const AnomalyCriteria& criteria) {
    criteria.validate();
    if (channels.empty()) throw InputError("detect_anomaly_filters: no channels");
    if (channels.size() != activations.size()) {
        throw InputError("detect_anomaly_filters: activation count does not match channels");
    }

    AnomalyReport report;
    report.layer_id = layer_id;
    report.criteria = criteria;

    double ch_sum = 0.0;
    int64_t ch_finite = 0;
    double act_sum = 0.0;
    for (size_t i = 0; i < channels.size(); ++i) {
        const double ch = channels[i].report.ch;
        if (std::isfinite(ch)) {
            ch_sum += ch;
            ch_finite += 1;
        }
        act_sum += activations[i];
    }
    report.layer_mean_ch = ch_finite > 0 ? ch_sum / static_cast<double>(ch_finite) : 0.0;
    report.layer_mean_activation = act_sum / static_cast<double>(channels.size());

    for (size_t i = 0; i < channels.size(); ++i) {
        const auto& c = channels[i];
        ChannelRecord rec;
        rec.channel = c.channel;
        rec.k = c.report.k;
        rec.cluster_sizes = c.report.cluster_sizes;
        rec.ch = c.report.ch;
        rec.activation = activations[i];

        int64_t small = 0;
        for (int64_t sz : rec.cluster_sizes) {
            if (sz <= criteria.lambda) ++small;
        }
        rec.unbalanced =
            static_cast<double>(small) > criteria.alpha * static_cast<double>(rec.k);
        // an infinite CH always clears the bar; it is excluded from the
        // mean so one divergent channel cannot suppress the rest
        rec.high_ch = !std::isfinite(rec.ch) || rec.ch > criteria.beta * report.layer_mean_ch;
        rec.active = rec.activation >= criteria.theta * report.layer_mean_activation;
        rec.is_anomaly = rec.unbalanced && rec.high_ch && rec.active;
        if (rec.is_anomaly) report.anomaly_channels.push_back(rec.channel);
        report.channels.push_back(std::move(rec));
    }
    return report;
}

LayerAnalysis analyze_layer(const ModelSpec& spec, const Checkpoint& ckpt,
                            const data::Dataset& ds, const std::string& layer_id,
                            const AnalysisConfig& config) {
    validate_checkpoint(spec, ckpt);
    const auto sample_ids =
        features::evaluation_subset(ds.size(), config.eval_samples, config.seed);
    auto fms = features::capture_feature_maps(spec, ckpt, ds, sample_ids, layer_id,
                                              config.capture_batch);

    LayerAnalysis out;
    out.layer_id = layer_id;
    out.sample_ids = sample_ids;
    const int64_t c = fms.channels();
    out.channels.resize(static_cast<size_t>(c));

    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int64_t ch = 0; ch < c; ++ch) {
        try {
            ChannelAnalysis a;
            a.channel = ch;
            a.embedding = features::pca_2d(features::flatten_channel(fms, ch));
            a.embedding.layer_id = layer_id;
            a.embedding.channel = ch;
            a.activation = features::channel_activation(fms, ch);
            if (a.embedding.degenerate) {
                a.degenerate = true;
            } else {
                a.fit = gmm::select_k(a.embedding.points, config.k_min,
                                      std::min(config.k_max, fms.batch() - 1),
                                      mix_seed(config.seed, static_cast<uint64_t>(ch)),
                                      config.gmm);
            }
            out.channels[static_cast<size_t>(ch)] = std::move(a);
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    return out;
}

AnomalyReport detect_anomalies(const LayerAnalysis& analysis, const AnomalyCriteria& criteria) {
    std::vector<ChannelClusterStats> stats;
    std::vector<double> activations;
    std::vector<const ChannelAnalysis*> degenerate;
    for (const auto& c : analysis.channels) {
        if (c.degenerate) {
            degenerate.push_back(&c);
            continue;
        }
        stats.push_back(ChannelClusterStats{c.channel, c.fit->assignment, c.fit->report});
        activations.push_back(c.activation);
    }

    AnomalyReport report;
    if (stats.empty()) {
        // every channel is a point mass; nothing to cluster
        criteria.validate();
        report.criteria = criteria;
    } else {
        report = detect_anomaly_filters(analysis.layer_id, stats, activations, criteria);
    }
    report.layer_id = analysis.layer_id;

    for (const auto* c : degenerate) {
        ChannelRecord rec;
        rec.channel = c->channel;
        rec.degenerate = true;
        rec.activation = c->activation;
        report.channels.push_back(std::move(rec));
    }
    std::sort(report.channels.begin(), report.channels.end(),
              [](const ChannelRecord& a, const ChannelRecord& b) { return a.channel < b.channel; });

    std::vector<int64_t> union_ids;
    extract_outlier_samples(analysis, criteria.lambda_outlier, report.anomaly_channels, union_ids);
    report.outlier_sample_ids = std::move(union_ids);
    return report;
}

std::vector<OutlierSampleSet> extract_outlier_samples(const LayerAnalysis& analysis,
                                                      int64_t lambda_outlier,
                                                      const std::vector<int64_t>& anomaly_channels,
                                                      std::vector<int64_t>& union_out) {
    if (lambda_outlier < 1) throw InputError("extract_outlier_samples: lambda_outlier >= 1");
    std::vector<OutlierSampleSet> sets;
    std::set<int64_t> union_set;
    for (const auto& c : analysis.channels) {
        if (c.degenerate) continue;
        OutlierSampleSet s;
        s.layer_id = analysis.layer_id;
        s.channel = c.channel;
        const auto& labels = c.fit->assignment.labels;
        const auto& sizes = c.fit->report.cluster_sizes;
        for (size_t i = 0; i < labels.size(); ++i) {
            const int64_t cluster = labels[i];
            // "no more than": size exactly lambda_outlier is included
            if (sizes[static_cast<size_t>(cluster)] <= lambda_outlier) {
                s.sample_ids.push_back(analysis.sample_ids[i]);
            }
        }
        std::sort(s.sample_ids.begin(), s.sample_ids.end());
        if (std::find(anomaly_channels.begin(), anomaly_channels.end(), c.channel) !=
            anomaly_channels.end()) {
            union_set.insert(s.sample_ids.begin(), s.sample_ids.end());
        }
        sets.push_back(std::move(s));
    }
    union_out.assign(union_set.begin(), union_set.end());
    return sets;
}

std::vector<SweepRow> anomaly_count_sweep(const ModelSpec& spec,
                                          const std::vector<Checkpoint>& checkpoints,
                                          const data::Dataset& ds,
                                          const std::vector<std::string>& layers,
                                          const AnomalyCriteria& criteria,
                                          const AnalysisConfig& config) {
    if (layers.empty()) throw InputError("anomaly_count_sweep: no layers named");
    std::vector<SweepRow> rows;
    rows.reserve(checkpoints.size());
    for (const auto& ckpt : checkpoints) {
        SweepRow row;
        row.epoch = ckpt.epoch;
        for (const auto& layer : layers) {
            auto analysis = analyze_layer(spec, ckpt, ds, layer, config);
            auto report = detect_anomalies(analysis, criteria);
            row.anomaly_count += static_cast<int64_t>(report.anomaly_channels.size());
        }
        rows.push_back(row);
    }
    return rows;
}

GradientStats per_sample_gradient_stats(const ModelSpec& spec, const Checkpoint& ckpt,
                                        const std::vector<int64_t>& sample_ids,
                                        const data::Dataset& ds,
                                        const std::string& group_tag) {
    if (sample_ids.empty()) throw InputError("per_sample_gradient_stats: empty sample set");
    validate_checkpoint(spec, ckpt);

    std::vector<std::string> layer_ids;
    for (const auto& p : ckpt.params) layer_ids.push_back(p.layer_id);
    std::vector<double> layer_sums(layer_ids.size(), 0.0);

    // mean semantics: duplicates in the id list average to the same
    // value as the deduplicated list
    std::vector<int64_t> unique_ids(sample_ids);
    std::sort(unique_ids.begin(), unique_ids.end());
    unique_ids.erase(std::unique(unique_ids.begin(), unique_ids.end()), unique_ids.end());

    std::vector<std::vector<double>> per_sample(unique_ids.size(),
                                                std::vector<double>(layer_ids.size(), 0.0));
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (int64_t s = 0; s < static_cast<int64_t>(unique_ids.size()); ++s) {
        try {
            auto [image, label] = data::gather_batch(ds, {unique_ids[static_cast<size_t>(s)]});
            ForwardTrace trace = forward_trace(spec, ckpt, image);
            auto loss = nn::softmax_crossentropy(trace.logits(), label);
            auto grads = backward(spec, ckpt, trace, loss.grad_logits);
            for (size_t l = 0; l < grads.size(); ++l) {
                double abs_sum = 0.0;
                for (int64_t i = 0; i < grads[l].weight.numel(); ++i) {
                    abs_sum += std::fabs(grads[l].weight[i]);
                }
                for (int64_t i = 0; i < grads[l].bias.numel(); ++i) {
                    abs_sum += std::fabs(grads[l].bias[i]);
                }
                per_sample[static_cast<size_t>(s)][l] =
                    abs_sum / static_cast<double>(grads[l].weight.numel() + grads[l].bias.numel());
            }
        } catch (...) {
#pragma omp critical
            if (!failure) failure = std::current_exception();
        }
    }
    if (failure) std::rethrow_exception(failure);
    for (const auto& row : per_sample) {
        for (size_t l = 0; l < layer_sums.size(); ++l) layer_sums[l] += row[l];
    }

    GradientStats stats;
    stats.group = group_tag;
    stats.sample_count = static_cast<int64_t>(unique_ids.size());
    double overall = 0.0;
    for (size_t l = 0; l < layer_ids.size(); ++l) {
        const double mean = layer_sums[l] / static_cast<double>(unique_ids.size());
        stats.per_layer.emplace_back(layer_ids[l], mean);
        overall += mean;
    }
    stats.overall = overall / static_cast<double>(layer_ids.size());
    return stats;
}

Checkpoint mask_filter(const ModelSpec& spec, const Checkpoint& ckpt,
                       const std::string& layer_id, int64_t channel) {
    validate_checkpoint(spec, ckpt);
    const std::string conv_id = spec.owning_conv(layer_id);
    Checkpoint masked = ckpt;
    LayerParams& p = masked.find(conv_id);
    if (channel < 0 || channel >= p.weight.dim(0)) {
        throw InputError("mask_filter: channel " + std::to_string(channel) +
                         " out of range for layer '" + conv_id + "' with " +
                         std::to_string(p.weight.dim(0)) + " filters");
    }
    const int64_t slice = p.weight.numel() / p.weight.dim(0);
    std::fill(p.weight.data() + channel * slice, p.weight.data() + (channel + 1) * slice, 0.0);
    p.bias[channel] = 0.0;
    return masked;
}

Checkpoint apply_mask(const ModelSpec& spec, const Checkpoint& ckpt, const MaskSpec& mask) {
    Checkpoint out = ckpt;
    for (const auto& [layer_id, channel] : mask.filters) {
        out = mask_filter(spec, out, layer_id, channel);
    }
    return out;
}

MaskingEval evaluate_masking(const ModelSpec& spec, const Checkpoint& ckpt, const MaskSpec& mask,
                             const data::Dataset& train_set, const data::Dataset& val_set) {
    const Checkpoint masked = apply_mask(spec, ckpt, mask);
    MaskingEval e;
    e.train_acc_before = evaluate(spec, ckpt, train_set).second;
    e.val_acc_before = evaluate(spec, ckpt, val_set).second;
    e.train_acc_after = evaluate(spec, masked, train_set).second;
    e.val_acc_after = evaluate(spec, masked, val_set).second;
    return e;
}

FlipReport classification_flip_report(const ModelSpec& spec, const Checkpoint& ckpt,
                                      const Checkpoint& masked_ckpt,
                                      const std::vector<int64_t>& sample_ids,
                                      const data::Dataset& ds) {
    if (sample_ids.empty()) {
        throw InputError("classification_flip_report: empty sample set");
    }
    auto predict = [&](const Checkpoint& c, const Tensor& images) {
        Tensor logits = forward(spec, c, images);
        std::vector<int64_t> pred(static_cast<size_t>(logits.dim(0)));
        for (int64_t i = 0; i < logits.dim(0); ++i) {
            int64_t best = 0;
            for (int64_t j = 1; j < logits.dim(1); ++j) {
                if (logits.at2(i, j) > logits.at2(i, best)) best = j;
            }
            pred[static_cast<size_t>(i)] = best;
        }
        return pred;
    };

    FlipReport flip;
    constexpr int64_t kBatch = 256;
    for (size_t start = 0; start < sample_ids.size(); start += kBatch) {
        const size_t end = std::min(sample_ids.size(), start + kBatch);
        std::vector<int64_t> chunk(sample_ids.begin() + static_cast<ptrdiff_t>(start),
                                   sample_ids.begin() + static_cast<ptrdiff_t>(end));
        auto [images, labels] = data::gather_batch(ds, chunk);
        auto before = predict(ckpt, images);
        auto after = predict(masked_ckpt, images);
        for (size_t i = 0; i < chunk.size(); ++i) {
            const bool b = before[i] == labels[i];
            const bool a = after[i] == labels[i];
            if (b && a) ++flip.true_true;
            else if (b && !a) ++flip.true_false;
            else if (!b && a) ++flip.false_true;
            else ++flip.false_false;
        }
    }
    return flip;
}

}  // namespace flens::anomaly
