#include "flens/config.hpp"

#include <fstream>

#include "flens/report_io.hpp"

namespace flens {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::vector<std::string>& known, const std::string& scope) {
    if (!j.is_object()) throw ConfigError("config: '" + scope + "' must be an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const auto& k : known) {
            if (k == key) ok = true;
        }
        if (!ok) throw ConfigError("config: unknown key '" + scope + "." + key + "'");
    }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename T>
void read_opt(const json& j, const char* key, std::optional<T>& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

}  // namespace

anomaly::AnomalyCriteria RunConfig::criteria() const {
    anomaly::AnomalyCriteria c = anomaly::AnomalyCriteria::preset(preset);
    if (lambda) c.lambda = *lambda;
    if (alpha) c.alpha = *alpha;
    if (beta) c.beta = *beta;
    if (theta) c.theta = *theta;
    if (lambda_outlier) c.lambda_outlier = *lambda_outlier;
    c.validate();
    return c;
}

anomaly::AnalysisConfig RunConfig::analysis_config() const {
    anomaly::AnalysisConfig a;
    a.eval_samples = eval_samples;
    a.k_min = k_min;
    a.k_max = k_max;
    a.seed = seed;
    a.gmm.max_iter = static_cast<int>(gmm_max_iter);
    a.gmm.tol = gmm_tol;
    a.gmm.reg = gmm_reg;
    return a;
}

AdamHyper RunConfig::adam() const { return AdamHyper{lr, beta1, beta2, epsilon}; }

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.seed = seed;
    t.adam = adam();
    return t;
}

json RunConfig::to_json() const {
    json j;
    j["dataset"] = {{"id", dataset_id}, {"dir", dataset_dir}};
    j["model"] = {{"id", model_id}};
    j["seed"] = seed;
    j["train"] = {{"epochs", epochs},       {"batch_size", batch_size},
                  {"lr", lr},               {"beta1", beta1},
                  {"beta2", beta2},         {"epsilon", epsilon},
                  {"subset", train_subset}, {"val_fraction", val_fraction}};
    j["analysis"] = {{"layers", layers},   {"eval_samples", eval_samples},
                     {"k_min", k_min},     {"k_max", k_max},
                     {"max_iter", gmm_max_iter}, {"tol", gmm_tol},
                     {"reg", gmm_reg}};
    json crit{{"preset", preset}};
    crit["lambda"] = lambda ? json(*lambda) : json(nullptr);
    crit["alpha"] = alpha ? json(*alpha) : json(nullptr);
    crit["beta"] = beta ? json(*beta) : json(nullptr);
    crit["theta"] = theta ? json(*theta) : json(nullptr);
    crit["lambda_outlier"] = lambda_outlier ? json(*lambda_outlier) : json(nullptr);
    j["criteria"] = crit;
    j["gradients"] = {{"max_group", gradients_max_group}};
    j["mask"] = {{"random_per_anomaly", mask_random_per_anomaly}};
    j["out"] = {{"dir", out_dir}};
    return j;
}

RunConfig RunConfig::from_json(const json& j) {
    check_keys(j, {"dataset", "model", "seed", "train", "analysis", "criteria", "gradients",
                   "mask", "out"},
               "");
    RunConfig c;
    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        check_keys(d, {"id", "dir"}, "dataset");
        read_if(d, "id", c.dataset_id);
        read_if(d, "dir", c.dataset_dir);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        check_keys(m, {"id"}, "model");
        read_if(m, "id", c.model_id);
    }
    read_if(j, "seed", c.seed);
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, {"epochs", "batch_size", "lr", "beta1", "beta2", "epsilon", "subset",
                       "val_fraction"},
                   "train");
        read_if(t, "epochs", c.epochs);
        read_if(t, "batch_size", c.batch_size);
        read_if(t, "lr", c.lr);
        read_if(t, "beta1", c.beta1);
        read_if(t, "beta2", c.beta2);
        read_if(t, "epsilon", c.epsilon);
        read_if(t, "subset", c.train_subset);
        read_if(t, "val_fraction", c.val_fraction);
    }
    if (j.contains("analysis")) {
        const auto& a = j.at("analysis");
        check_keys(a, {"layers", "eval_samples", "k_min", "k_max", "max_iter", "tol", "reg"},
                   "analysis");
        read_if(a, "layers", c.layers);
        read_if(a, "eval_samples", c.eval_samples);
        read_if(a, "k_min", c.k_min);
        read_if(a, "k_max", c.k_max);
        read_if(a, "max_iter", c.gmm_max_iter);
        read_if(a, "tol", c.gmm_tol);
        read_if(a, "reg", c.gmm_reg);
    }
    if (j.contains("criteria")) {
        const auto& cr = j.at("criteria");
        check_keys(cr, {"preset", "lambda", "alpha", "beta", "theta", "lambda_outlier"},
                   "criteria");
        read_if(cr, "preset", c.preset);
        read_opt(cr, "lambda", c.lambda);
        read_opt(cr, "alpha", c.alpha);
        read_opt(cr, "beta", c.beta);
        read_opt(cr, "theta", c.theta);
        read_opt(cr, "lambda_outlier", c.lambda_outlier);
    }
    if (j.contains("gradients")) {
        const auto& g = j.at("gradients");
        check_keys(g, {"max_group"}, "gradients");
        read_if(g, "max_group", c.gradients_max_group);
    }
    if (j.contains("mask")) {
        const auto& m = j.at("mask");
        check_keys(m, {"random_per_anomaly"}, "mask");
        read_if(m, "random_per_anomaly", c.mask_random_per_anomaly);
    }
    if (j.contains("out")) {
        const auto& o = j.at("out");
        check_keys(o, {"dir"}, "out");
        read_if(o, "dir", c.out_dir);
    }
    (void)c.criteria();  // surfaces bad presets/thresholds now
    if (c.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("config: train.batch_size must be >= 1");
    if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) {
        throw ConfigError("config: train.val_fraction must be in [0,1)");
    }
    if (c.k_min < 2 || c.k_min > c.k_max) {
        throw ConfigError("config: analysis.k_min/k_max must satisfy 2 <= k_min <= k_max");
    }
    if (c.eval_samples < 3) throw ConfigError("config: analysis.eval_samples must be >= 3");
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("config file not found: '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    try {
        return from_json(j);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
}

void RunConfig::save(const std::string& path) const {
    report::write_text_atomic(path, to_json().dump(2) + "\n");
}

}  // namespace flens
