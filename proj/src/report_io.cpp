#include "flens/report_io.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace flens::report {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string sizes_field(const std::vector<int64_t>& sizes) {
    std::ostringstream os;
    for (size_t i = 0; i < sizes.size(); ++i) {
        if (i) os << "|";
        os << sizes[i];
    }
    return os.str();
}

}  // namespace

void write_text_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw NotFoundError("cannot open '" + tmp.string() + "' for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw FormatError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

json criteria_json(const anomaly::AnomalyCriteria& c) {
    return json{{"lambda", c.lambda},
                {"alpha", c.alpha},
                {"beta", c.beta},
                {"theta", c.theta},
                {"lambda_outlier", c.lambda_outlier}};
}

json anomaly_report_json(const anomaly::AnomalyReport& report) {
    json channels = json::array();
    for (const auto& c : report.channels) {
        json rec{{"channel", c.channel},
                 {"degenerate", c.degenerate},
                 {"k", c.k},
                 {"cluster_sizes", c.cluster_sizes},
                 {"activation", c.activation},
                 {"unbalanced", c.unbalanced},
                 {"high_ch", c.high_ch},
                 {"active", c.active},
                 {"is_anomaly", c.is_anomaly}};
        if (std::isfinite(c.ch)) {
            rec["ch"] = c.ch;
            rec["ch_infinite"] = false;
        } else {
            rec["ch"] = nullptr;
            rec["ch_infinite"] = !c.degenerate;
        }
        channels.push_back(std::move(rec));
    }
    return json{{"layer_id", report.layer_id},
                {"criteria", criteria_json(report.criteria)},
                {"layer_mean_ch", report.layer_mean_ch},
                {"layer_mean_activation", report.layer_mean_activation},
                {"channels", channels},
                {"anomaly_channels", report.anomaly_channels},
                {"outlier_sample_ids", report.outlier_sample_ids}};
}

anomaly::AnomalyReport anomaly_report_from_json(const json& j) {
    anomaly::AnomalyReport r;
    try {
        r.layer_id = j.at("layer_id").get<std::string>();
        const auto& cj = j.at("criteria");
        r.criteria.lambda = cj.at("lambda").get<int64_t>();
        r.criteria.alpha = cj.at("alpha").get<double>();
        r.criteria.beta = cj.at("beta").get<double>();
        r.criteria.theta = cj.at("theta").get<double>();
        r.criteria.lambda_outlier = cj.at("lambda_outlier").get<int64_t>();
        r.layer_mean_ch = j.at("layer_mean_ch").get<double>();
        r.layer_mean_activation = j.at("layer_mean_activation").get<double>();
        for (const auto& rec : j.at("channels")) {
            anomaly::ChannelRecord c;
            c.channel = rec.at("channel").get<int64_t>();
            c.degenerate = rec.at("degenerate").get<bool>();
            c.k = rec.at("k").get<int64_t>();
            c.cluster_sizes = rec.at("cluster_sizes").get<std::vector<int64_t>>();
            c.ch = rec.at("ch").is_null() ? std::numeric_limits<double>::infinity()
                                          : rec.at("ch").get<double>();
            if (c.degenerate) c.ch = 0.0;
            c.activation = rec.at("activation").get<double>();
            c.unbalanced = rec.at("unbalanced").get<bool>();
            c.high_ch = rec.at("high_ch").get<bool>();
            c.active = rec.at("active").get<bool>();
            c.is_anomaly = rec.at("is_anomaly").get<bool>();
            r.channels.push_back(std::move(c));
        }
        r.anomaly_channels = j.at("anomaly_channels").get<std::vector<int64_t>>();
        r.outlier_sample_ids = j.at("outlier_sample_ids").get<std::vector<int64_t>>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("anomaly report json: ") + e.what());
    }
    return r;
}

void write_anomaly_report(const std::string& path, const anomaly::AnomalyReport& report) {
    write_text_atomic(path, anomaly_report_json(report).dump(2) + "\n");
}

anomaly::AnomalyReport read_anomaly_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("anomaly report not found: '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw FormatError("anomaly report '" + path + "': " + e.what());
    }
    return anomaly_report_from_json(j);
}

json flip_report_json(const anomaly::FlipReport& flip, const std::string& context) {
    return json{{"context", context},
                {"true_true", flip.true_true},
                {"true_false", flip.true_false},
                {"false_true", flip.false_true},
                {"false_false", flip.false_false},
                {"total", flip.total()}};
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    for (const auto& r : rows) {
        os << r.epoch << "," << fmt(r.train_loss) << "," << fmt(r.train_acc) << ","
           << fmt(r.val_loss) << "," << fmt(r.val_acc) << "\n";
    }
    write_text_atomic(path, os.str());
}

void write_cluster_summary_csv(const std::string& path,
                               const std::vector<anomaly::AnomalyReport>& reports) {
    std::ostringstream os;
    os << "layer,channel,degenerate,k,ch,activation,unbalanced,high_ch,active,is_anomaly,"
          "cluster_sizes\n";
    for (const auto& rep : reports) {
        for (const auto& c : rep.channels) {
            os << rep.layer_id << "," << c.channel << "," << (c.degenerate ? 1 : 0) << "," << c.k
               << "," << (std::isfinite(c.ch) ? fmt(c.ch) : "inf") << "," << fmt(c.activation)
               << "," << (c.unbalanced ? 1 : 0) << "," << (c.high_ch ? 1 : 0) << ","
               << (c.active ? 1 : 0) << "," << (c.is_anomaly ? 1 : 0) << ","
               << sizes_field(c.cluster_sizes) << "\n";
        }
    }
    write_text_atomic(path, os.str());
}

void write_points_csvs(const std::string& dir, const anomaly::LayerAnalysis& analysis) {
    for (const auto& c : analysis.channels) {
        std::ostringstream os;
        os << "sample_id,x,y\n";
        if (!c.degenerate || c.embedding.points.numel() > 0) {
            for (int64_t i = 0; i < c.embedding.points.dim(0); ++i) {
                os << analysis.sample_ids[static_cast<size_t>(i)] << ","
                   << fmt(c.embedding.points.at2(i, 0)) << "," << fmt(c.embedding.points.at2(i, 1))
                   << "\n";
            }
        }
        char name[48];
        std::snprintf(name, sizeof(name), "channel_%03d.csv", static_cast<int>(c.channel));
        write_text_atomic(dir + "/" + name, os.str());
    }
}

void write_sweep_csv(const std::string& path, const std::vector<SweepCsvRow>& rows) {
    std::ostringstream os;
    os << "epoch,anomaly_count,val_acc\n";
    for (const auto& r : rows) {
        os << r.epoch << "," << r.anomaly_count << "," << fmt(r.val_acc) << "\n";
    }
    write_text_atomic(path, os.str());
}

void write_gradient_stats_csv(const std::string& path, const anomaly::GradientStats& outlier,
                              const anomaly::GradientStats& normal) {
    std::ostringstream os;
    os << "layer,group,mean_abs_grad,outlier_over_normal\n";
    auto ratio = [](double o, double n) {
        return n > 0.0 ? o / n : std::numeric_limits<double>::quiet_NaN();
    };
    for (size_t l = 0; l < outlier.per_layer.size(); ++l) {
        const auto& [layer, omean] = outlier.per_layer[l];
        const double nmean = normal.per_layer[l].second;
        os << layer << ",outlier," << fmt(omean) << "," << fmt(ratio(omean, nmean)) << "\n";
        os << layer << ",normal," << fmt(nmean) << "," << fmt(ratio(omean, nmean)) << "\n";
    }
    os << "all,outlier," << fmt(outlier.overall) << "," << fmt(ratio(outlier.overall, normal.overall))
       << "\n";
    os << "all,normal," << fmt(normal.overall) << "," << fmt(ratio(outlier.overall, normal.overall))
       << "\n";
    write_text_atomic(path, os.str());
}

void write_masking_eval_csv(const std::string& path, const std::vector<MaskingCsvRow>& rows) {
    std::ostringstream os;
    os << "scope,layer,channel,group,train_acc_before,train_acc_after,train_delta,"
          "val_acc_before,val_acc_after,val_delta\n";
    for (const auto& r : rows) {
        os << r.scope << "," << r.layer << ",";
        if (r.channel >= 0) os << r.channel;
        os << "," << r.group << "," << fmt(r.eval.train_acc_before) << ","
           << fmt(r.eval.train_acc_after) << "," << fmt(r.eval.train_delta()) << ","
           << fmt(r.eval.val_acc_before) << "," << fmt(r.eval.val_acc_after) << ","
           << fmt(r.eval.val_delta()) << "\n";
    }
    write_text_atomic(path, os.str());
}

void write_run_meta(const std::string& out_dir, const std::string& command,
                    const nlohmann::json& config) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    json meta{{"command", command}, {"timestamp", stamp}, {"config", config}};
    write_text_atomic(out_dir + "/run_meta.json", meta.dump(2) + "\n");
}

}  // namespace flens::report
