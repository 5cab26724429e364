#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "flens/anomaly.hpp"
#include "flens/train.hpp"

namespace flens::report {

/// Atomic text write (temp file + rename) so rerun outputs are either
/// absent or complete.
void write_text_atomic(const std::string& path, const std::string& content);

// JSON forms. CH values serialize as numbers, with +inf mapped to null
// plus "ch_infinite": true.
nlohmann::json anomaly_report_json(const anomaly::AnomalyReport& report);
nlohmann::json flip_report_json(const anomaly::FlipReport& flip, const std::string& context);
nlohmann::json criteria_json(const anomaly::AnomalyCriteria& c);
anomaly::AnomalyReport anomaly_report_from_json(const nlohmann::json& j);

void write_anomaly_report(const std::string& path, const anomaly::AnomalyReport& report);
anomaly::AnomalyReport read_anomaly_report(const std::string& path);

// CSV emitters with fixed headers.
// metrics.csv: epoch,train_loss,train_acc,val_loss,val_acc
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows);

// cluster_summary.csv:
// layer,channel,degenerate,k,ch,activation,unbalanced,high_ch,active,is_anomaly,cluster_sizes
void write_cluster_summary_csv(const std::string& path,
                               const std::vector<anomaly::AnomalyReport>& reports);

// one scatter file per channel: sample_id,x,y
void write_points_csvs(const std::string& dir, const anomaly::LayerAnalysis& analysis);

// sweep.csv: epoch,anomaly_count,val_acc
struct SweepCsvRow {
    int64_t epoch = 0;
    int64_t anomaly_count = 0;
    double val_acc = 0.0;
};
void write_sweep_csv(const std::string& path, const std::vector<SweepCsvRow>& rows);

// gradients.csv: layer,group,mean_abs_grad,outlier_over_normal
void write_gradient_stats_csv(const std::string& path, const anomaly::GradientStats& outlier,
                              const anomaly::GradientStats& normal);

// masking_eval.csv: scope,layer,channel,group,train_acc_before,train_acc_after,
//                   train_delta,val_acc_before,val_acc_after,val_delta
struct MaskingCsvRow {
    std::string scope;   // "single" | "combined"
    std::string layer;
    int64_t channel = -1;  // -1 for combined rows
    std::string group;     // "anomaly" | "random_normal" | "explicit"
    anomaly::MaskingEval eval;
};
void write_masking_eval_csv(const std::string& path, const std::vector<MaskingCsvRow>& rows);

/// Timestamped sidecar; every other emitted file stays byte-stable for
/// identical inputs.
void write_run_meta(const std::string& out_dir, const std::string& command,
                    const nlohmann::json& config);

}  // namespace flens::report
