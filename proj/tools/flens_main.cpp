// flens command line: train CNNs, cluster per-filter feature maps with a
// GMM, detect anomaly filters and measure the effect of masking them.

#include <algorithm>
#include <filesystem>
#include <fnmatch.h>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>

#include "flens/checkpoint.hpp"
#include "flens/config.hpp"
#include "flens/report_io.hpp"
#include "flens/rng.hpp"
#include "flens/synth.hpp"

namespace fs = std::filesystem;
using namespace flens;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<std::string> dataset_id, dataset_dir, model_id, preset, out_dir;
    std::optional<uint64_t> seed;
    std::optional<int64_t> epochs, batch_size, train_subset, eval_samples, k_min, k_max,
        gmm_max_iter, lambda, lambda_outlier, gradients_max_group, mask_random_per_anomaly;
    std::optional<double> lr, beta1, beta2, epsilon, val_fraction, gmm_tol, gmm_reg, alpha, beta,
        theta;
    std::optional<std::string> layers_csv;
};

void add_common_options(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "JSON run configuration");
    cmd->add_option("--dataset.id", a.dataset_id, "cifar10|cifar100|fashion_mnist|synth10");
    cmd->add_option("--dataset.dir", a.dataset_dir, "dataset directory");
    cmd->add_option("--model.id", a.model_id, "simple_cnn|lenet5");
    cmd->add_option("--seed", a.seed, "global seed");
    cmd->add_option("--train.epochs", a.epochs);
    cmd->add_option("--train.batch_size", a.batch_size);
    cmd->add_option("--train.lr", a.lr);
    cmd->add_option("--train.beta1", a.beta1);
    cmd->add_option("--train.beta2", a.beta2);
    cmd->add_option("--train.epsilon", a.epsilon);
    cmd->add_option("--train.subset", a.train_subset, "train on a seeded subset (0 = all)");
    cmd->add_option("--train.val_fraction", a.val_fraction);
    cmd->add_option("--analysis.layers", a.layers_csv, "comma-separated layer ids");
    cmd->add_option("--analysis.eval_samples", a.eval_samples);
    cmd->add_option("--analysis.k_min", a.k_min);
    cmd->add_option("--analysis.k_max", a.k_max);
    cmd->add_option("--analysis.max_iter", a.gmm_max_iter);
    cmd->add_option("--analysis.tol", a.gmm_tol);
    cmd->add_option("--analysis.reg", a.gmm_reg);
    cmd->add_option("--criteria.preset,--preset", a.preset, "exp1|exp2|exp3");
    cmd->add_option("--criteria.lambda", a.lambda);
    cmd->add_option("--criteria.alpha", a.alpha);
    cmd->add_option("--criteria.beta", a.beta);
    cmd->add_option("--criteria.theta", a.theta);
    cmd->add_option("--criteria.lambda_outlier", a.lambda_outlier);
    cmd->add_option("--gradients.max_group", a.gradients_max_group);
    cmd->add_option("--mask.random_per_anomaly", a.mask_random_per_anomaly);
    cmd->add_option("--out.dir,--out", a.out_dir, "output directory");
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

RunConfig resolve_config(const CommonArgs& a) {
    RunConfig c = a.config_path.empty() ? RunConfig{} : RunConfig::load(a.config_path);
    if (a.dataset_id) c.dataset_id = *a.dataset_id;
    if (a.dataset_dir) c.dataset_dir = *a.dataset_dir;
    if (a.model_id) c.model_id = *a.model_id;
    if (a.seed) c.seed = *a.seed;
    if (a.epochs) c.epochs = *a.epochs;
    if (a.batch_size) c.batch_size = *a.batch_size;
    if (a.lr) c.lr = *a.lr;
    if (a.beta1) c.beta1 = *a.beta1;
    if (a.beta2) c.beta2 = *a.beta2;
    if (a.epsilon) c.epsilon = *a.epsilon;
    if (a.train_subset) c.train_subset = *a.train_subset;
    if (a.val_fraction) c.val_fraction = *a.val_fraction;
    if (a.layers_csv) c.layers = split_csv(*a.layers_csv);
    if (a.eval_samples) c.eval_samples = *a.eval_samples;
    if (a.k_min) c.k_min = *a.k_min;
    if (a.k_max) c.k_max = *a.k_max;
    if (a.gmm_max_iter) c.gmm_max_iter = *a.gmm_max_iter;
    if (a.gmm_tol) c.gmm_tol = *a.gmm_tol;
    if (a.gmm_reg) c.gmm_reg = *a.gmm_reg;
    if (a.preset) c.preset = *a.preset;
    if (a.lambda) c.lambda = *a.lambda;
    if (a.alpha) c.alpha = *a.alpha;
    if (a.beta) c.beta = *a.beta;
    if (a.theta) c.theta = *a.theta;
    if (a.lambda_outlier) c.lambda_outlier = *a.lambda_outlier;
    if (a.gradients_max_group) c.gradients_max_group = *a.gradients_max_group;
    if (a.mask_random_per_anomaly) c.mask_random_per_anomaly = *a.mask_random_per_anomaly;
    if (a.out_dir) c.out_dir = *a.out_dir;
    (void)c.criteria();  // validate resolved thresholds
    return c;
}

struct LoadedData {
    data::Dataset train;  // the split the model trains on (subset applied)
    data::Dataset val;
};

/// Deterministic split shared by every command so sample ids and
/// accuracies line up across train/analyze/gradients/mask.
LoadedData prepare_data(const RunConfig& c) {
    auto [full_train, test] = data::load_dataset(c.dataset_id, c.dataset_dir);
    (void)test;
    auto [pool, val] = data::split_train_val(full_train, c.val_fraction, c.seed);
    LoadedData d;
    d.val = std::move(val);
    if (c.train_subset > 0 && c.train_subset < pool.size()) {
        d.train = data::subset(pool, features::evaluation_subset(pool.size(), c.train_subset,
                                                                 mix_seed(c.seed, 0x7ab5e7)));
    } else {
        d.train = std::move(pool);
    }
    return d;
}

ModelSpec build_model(const RunConfig& c, const data::Dataset& ds) {
    const auto& s = ds.images.shape();
    if (c.model_id == "simple_cnn") {
        return build_simple_cnn(s[1], s[2], s[3], ds.class_count);
    }
    if (c.model_id == "lenet5") {
        return build_lenet5(s[1], s[2], s[3], ds.class_count);
    }
    throw ConfigError("unknown model id '" + c.model_id + "' (expected simple_cnn|lenet5)");
}

std::vector<std::string> analysis_layers(const RunConfig& c, const ModelSpec& spec) {
    std::vector<std::string> layers = c.layers.empty() ? spec.default_analysis_layers() : c.layers;
    for (const auto& l : layers) (void)spec.layer(l);
    return layers;
}

Checkpoint load_matching_checkpoint(const RunConfig& c, const ModelSpec& spec,
                                    const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.spec_id != spec.id) {
        throw ConfigError("checkpoint '" + path + "' was produced by model '" + ckpt.spec_id +
                          "', config names '" + spec.id + "'");
    }
    validate_checkpoint(spec, ckpt);
    return ckpt;
}

int cmd_train(const RunConfig& cfg) {
    LoadedData d = prepare_data(cfg);
    ModelSpec spec = build_model(cfg, d.train);

    TrainConfig tc = cfg.train_config();
    tc.checkpoint_dir = cfg.out_dir + "/checkpoints";
    TrainResult result = train(spec, d.train, d.val, tc);

    report::write_metrics_csv(cfg.out_dir + "/metrics.csv", result.metrics);
    cfg.save(cfg.out_dir + "/config_resolved.json");
    report::write_run_meta(cfg.out_dir, "train", cfg.to_json());
    std::cout << "trained " << spec.id << " for " << tc.epochs << " epochs; final val_acc="
              << result.metrics.back().val_acc << "\n";
    return 0;
}

struct AnalyzeOutput {
    std::vector<anomaly::AnomalyReport> reports;
    std::vector<anomaly::LayerAnalysis> analyses;
};

AnalyzeOutput run_analysis(const RunConfig& cfg, const ModelSpec& spec, const Checkpoint& ckpt,
                           const data::Dataset& train_set) {
    AnalyzeOutput out;
    for (const auto& layer : analysis_layers(cfg, spec)) {
        auto analysis = anomaly::analyze_layer(spec, ckpt, train_set, layer,
                                               cfg.analysis_config());
        out.reports.push_back(anomaly::detect_anomalies(analysis, cfg.criteria()));
        out.analyses.push_back(std::move(analysis));
    }
    return out;
}

int cmd_analyze(const RunConfig& cfg, const std::string& checkpoint_path) {
    LoadedData d = prepare_data(cfg);
    ModelSpec spec = build_model(cfg, d.train);
    Checkpoint ckpt = load_matching_checkpoint(cfg, spec, checkpoint_path);

    AnalyzeOutput out = run_analysis(cfg, spec, ckpt, d.train);
    int64_t total = 0;
    for (size_t i = 0; i < out.reports.size(); ++i) {
        const auto& rep = out.reports[i];
        report::write_anomaly_report(cfg.out_dir + "/report_" + rep.layer_id + ".json", rep);
        report::write_points_csvs(cfg.out_dir + "/points/" + rep.layer_id, out.analyses[i]);
        total += static_cast<int64_t>(rep.anomaly_channels.size());
    }
    report::write_cluster_summary_csv(cfg.out_dir + "/cluster_summary.csv", out.reports);
    report::write_run_meta(cfg.out_dir, "analyze", cfg.to_json());
    std::cout << "epoch " << ckpt.epoch << ": " << total << " anomaly filter(s) across "
              << out.reports.size() << " layer(s)\n";
    return 0;
}

std::vector<std::string> expand_glob(const std::string& pattern) {
    const fs::path p(pattern);
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    const std::string name = p.filename().string();
    std::vector<std::string> matches;
    if (!fs::is_directory(dir)) {
        throw NotFoundError("checkpoint glob directory '" + dir.string() + "' does not exist");
    }
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string fname = entry.path().filename().string();
        if (fnmatch(name.c_str(), fname.c_str(), 0) == 0) {
            matches.push_back(entry.path().string());
        }
    }
    std::sort(matches.begin(), matches.end());
    return matches;
}

int cmd_sweep(const RunConfig& cfg, const std::string& glob) {
    LoadedData d = prepare_data(cfg);
    ModelSpec spec = build_model(cfg, d.train);

    std::vector<Checkpoint> ckpts;
    for (const auto& path : expand_glob(glob)) {
        ckpts.push_back(load_matching_checkpoint(cfg, spec, path));
    }
    if (ckpts.empty()) throw NotFoundError("sweep: no checkpoints match '" + glob + "'");
    std::sort(ckpts.begin(), ckpts.end(),
              [](const Checkpoint& a, const Checkpoint& b) { return a.epoch < b.epoch; });

    auto rows = anomaly::anomaly_count_sweep(spec, ckpts, d.train, analysis_layers(cfg, spec),
                                             cfg.criteria(), cfg.analysis_config());
    std::vector<report::SweepCsvRow> csv_rows;
    for (size_t i = 0; i < rows.size(); ++i) {
        report::SweepCsvRow r;
        r.epoch = rows[i].epoch;
        r.anomaly_count = rows[i].anomaly_count;
        r.val_acc = evaluate(spec, ckpts[i], d.val).second;
        csv_rows.push_back(r);
    }
    report::write_sweep_csv(cfg.out_dir + "/sweep.csv", csv_rows);
    report::write_run_meta(cfg.out_dir, "sweep", cfg.to_json());
    std::cout << "swept " << rows.size() << " checkpoint(s)\n";
    return 0;
}

std::vector<anomaly::AnomalyReport> load_reports(const std::string& report_path) {
    std::vector<anomaly::AnomalyReport> reports;
    if (fs::is_directory(report_path)) {
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(report_path)) {
            const std::string fname = entry.path().filename().string();
            if (fname.rfind("report_", 0) == 0 && entry.path().extension() == ".json") {
                files.push_back(entry.path().string());
            }
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) reports.push_back(report::read_anomaly_report(f));
    } else {
        reports.push_back(report::read_anomaly_report(report_path));
    }
    if (reports.empty()) {
        throw NotFoundError("no anomaly reports found at '" + report_path + "'");
    }
    return reports;
}

std::vector<int64_t> outlier_union(const std::vector<anomaly::AnomalyReport>& reports) {
    std::set<int64_t> ids;
    for (const auto& r : reports) {
        ids.insert(r.outlier_sample_ids.begin(), r.outlier_sample_ids.end());
    }
    return {ids.begin(), ids.end()};
}

std::vector<int64_t> cap_group(std::vector<int64_t> ids, int64_t cap, uint64_t seed) {
    if (cap <= 0 || static_cast<int64_t>(ids.size()) <= cap) return ids;
    Rng rng(mix_seed(seed, 0xca9));
    rng.shuffle(ids);
    ids.resize(static_cast<size_t>(cap));
    std::sort(ids.begin(), ids.end());
    return ids;
}

int cmd_gradients(const RunConfig& cfg, const std::string& checkpoint_path,
                  const std::string& report_path) {
    LoadedData d = prepare_data(cfg);
    ModelSpec spec = build_model(cfg, d.train);
    Checkpoint ckpt = load_matching_checkpoint(cfg, spec, checkpoint_path);

    auto reports = load_reports(report_path);
    std::vector<int64_t> outliers = outlier_union(reports);
    if (outliers.empty()) {
        throw InputError("gradients: the anomaly reports name no outlier samples");
    }

    const auto eval_ids =
        features::evaluation_subset(d.train.size(), cfg.eval_samples, cfg.seed);
    std::set<int64_t> outlier_set(outliers.begin(), outliers.end());
    std::vector<int64_t> normal;
    for (int64_t id : eval_ids) {
        if (!outlier_set.count(id)) normal.push_back(id);
    }
    if (normal.empty()) throw InputError("gradients: no normal samples left in the subset");

    outliers = cap_group(std::move(outliers), cfg.gradients_max_group, cfg.seed);
    normal = cap_group(std::move(normal), cfg.gradients_max_group, cfg.seed + 1);

    auto out_stats = anomaly::per_sample_gradient_stats(spec, ckpt, outliers, d.train, "outlier");
    auto norm_stats = anomaly::per_sample_gradient_stats(spec, ckpt, normal, d.train, "normal");
    report::write_gradient_stats_csv(cfg.out_dir + "/gradients.csv", out_stats, norm_stats);
    report::write_run_meta(cfg.out_dir, "gradients", cfg.to_json());
    std::cout << "mean |grad|: outlier=" << out_stats.overall << " (" << out_stats.sample_count
              << " samples), normal=" << norm_stats.overall << " (" << norm_stats.sample_count
              << " samples)\n";
    return 0;
}

std::vector<std::pair<std::string, int64_t>> parse_filters(const std::string& arg) {
    std::vector<std::pair<std::string, int64_t>> filters;
    for (const auto& item : split_csv(arg)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw ConfigError("mask: expected layer:channel, got '" + item + "'");
        }
        try {
            filters.emplace_back(item.substr(0, colon), std::stoll(item.substr(colon + 1)));
        } catch (const std::exception&) {
            throw ConfigError("mask: bad channel number in '" + item + "'");
        }
    }
    return filters;
}

int cmd_mask(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& report_path, const std::string& filters_arg, bool use_filters) {
    LoadedData d = prepare_data(cfg);
    ModelSpec spec = build_model(cfg, d.train);
    Checkpoint ckpt = load_matching_checkpoint(cfg, spec, checkpoint_path);

    std::vector<report::MaskingCsvRow> rows;
    anomaly::MaskSpec combined;
    std::vector<int64_t> flip_samples;
    std::string flip_context;

    if (use_filters) {
        for (const auto& [layer, channel] : parse_filters(filters_arg)) {
            combined.filters.emplace_back(layer, channel);
            report::MaskingCsvRow row;
            row.scope = "single";
            row.layer = layer;
            row.channel = channel;
            row.group = "explicit";
            row.eval = anomaly::evaluate_masking(spec, ckpt, {{{layer, channel}}}, d.train, d.val);
            rows.push_back(row);
        }
        flip_samples = features::evaluation_subset(d.train.size(), cfg.eval_samples, cfg.seed);
        flip_context = "evaluation subset (explicit mask)";
    } else {
        auto reports = load_reports(report_path);
        Rng rng(mix_seed(cfg.seed, 0x3a5c));
        for (const auto& rep : reports) {
            // active normal channels are the masking control pool
            std::vector<int64_t> normal_pool;
            for (const auto& c : rep.channels) {
                if (!c.degenerate && c.active && !c.is_anomaly) normal_pool.push_back(c.channel);
            }
            for (int64_t channel : rep.anomaly_channels) {
                combined.filters.emplace_back(rep.layer_id, channel);
                report::MaskingCsvRow row;
                row.scope = "single";
                row.layer = rep.layer_id;
                row.channel = channel;
                row.group = "anomaly";
                row.eval = anomaly::evaluate_masking(spec, ckpt, {{{rep.layer_id, channel}}},
                                                     d.train, d.val);
                rows.push_back(row);
                for (int64_t r = 0; r < cfg.mask_random_per_anomaly && !normal_pool.empty(); ++r) {
                    const int64_t pick = normal_pool[static_cast<size_t>(
                        rng.uniform_int(static_cast<int64_t>(normal_pool.size())))];
                    report::MaskingCsvRow rrow;
                    rrow.scope = "single";
                    rrow.layer = rep.layer_id;
                    rrow.channel = pick;
                    rrow.group = "random_normal";
                    rrow.eval = anomaly::evaluate_masking(spec, ckpt, {{{rep.layer_id, pick}}},
                                                          d.train, d.val);
                    rows.push_back(rrow);
                }
            }
        }
        flip_samples = outlier_union(reports);
        flip_context = "outlier sample union";
        if (flip_samples.empty()) {
            flip_samples = features::evaluation_subset(d.train.size(), cfg.eval_samples, cfg.seed);
            flip_context = "evaluation subset (no outlier samples reported)";
        }
    }

    report::MaskingCsvRow combined_row;
    combined_row.scope = "combined";
    combined_row.layer = "all";
    combined_row.channel = -1;
    combined_row.group = use_filters ? "explicit" : "anomaly";
    combined_row.eval = anomaly::evaluate_masking(spec, ckpt, combined, d.train, d.val);
    rows.push_back(combined_row);

    const Checkpoint masked = anomaly::apply_mask(spec, ckpt, combined);
    auto flip = anomaly::classification_flip_report(spec, ckpt, masked, flip_samples, d.train);

    report::write_masking_eval_csv(cfg.out_dir + "/masking_eval.csv", rows);
    report::write_text_atomic(cfg.out_dir + "/flip_report.json",
                              report::flip_report_json(flip, flip_context).dump(2) + "\n");
    report::write_run_meta(cfg.out_dir, "mask", cfg.to_json());
    std::cout << "masked " << combined.filters.size() << " filter(s); flips true->false="
              << flip.true_false << ", false->true=" << flip.false_true << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flens: filter-level CNN overfitting analysis via GMM clustering"};
    app.require_subcommand(1);

    CommonArgs targs, aargs, sargs, gargs, margs;
    std::string checkpoint_path, checkpoint_glob, report_path, filters_arg;

    CLI::App* train_cmd = app.add_subcommand("train", "train a model, one checkpoint per epoch");
    add_common_options(train_cmd, targs);

    CLI::App* analyze_cmd =
        app.add_subcommand("analyze", "cluster feature maps and detect anomaly filters");
    add_common_options(analyze_cmd, aargs);
    analyze_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    CLI::App* sweep_cmd =
        app.add_subcommand("sweep", "anomaly counts across a series of checkpoints");
    add_common_options(sweep_cmd, sargs);
    sweep_cmd->add_option("--checkpoints", checkpoint_glob, "checkpoint glob pattern")->required();

    CLI::App* grad_cmd =
        app.add_subcommand("gradients", "outlier vs normal per-sample gradient statistics");
    add_common_options(grad_cmd, gargs);
    grad_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    grad_cmd->add_option("--report", report_path, "anomaly report file or directory")->required();

    CLI::App* mask_cmd = app.add_subcommand("mask", "mask filters and measure accuracy impact");
    add_common_options(mask_cmd, margs);
    mask_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    auto* mask_report = mask_cmd->add_option("--report", report_path,
                                             "anomaly report file or directory (mask source)");
    auto* mask_filters = mask_cmd->add_option(
        "--filters", filters_arg, "explicit layer:channel list (mask source)");
    mask_report->excludes(mask_filters);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // help/version exit with 0 through CLI11
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(resolve_config(targs));
        if (analyze_cmd->parsed()) return cmd_analyze(resolve_config(aargs), checkpoint_path);
        if (sweep_cmd->parsed()) return cmd_sweep(resolve_config(sargs), checkpoint_glob);
        if (grad_cmd->parsed()) {
            return cmd_gradients(resolve_config(gargs), checkpoint_path, report_path);
        }
        if (mask_cmd->parsed()) {
            const bool use_filters = mask_filters->count() > 0;
            if (!use_filters && mask_report->count() == 0) {
                throw ConfigError("mask: provide --report or --filters");
            }
            return cmd_mask(resolve_config(margs), checkpoint_path, report_path, filters_arg,
                            use_filters);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const NotFoundError& e) {
        std::cerr << "not found: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
