#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flens/anomaly.hpp"
#include "flens/train.hpp"

namespace flens {

/// Run configuration shared by all CLI commands. Every field maps to a
/// dotted command-line flag of the same name; the JSON form round-trips
/// losslessly.
struct RunConfig {
    // dataset.*
    std::string dataset_id = "fashion_mnist";  // cifar10|cifar100|fashion_mnist|synth10
    std::string dataset_dir = "data";

    // model.*
    std::string model_id = "simple_cnn";  // simple_cnn|lenet5

    uint64_t seed = 0;

    // train.*
    int64_t epochs = 100;
    int64_t batch_size = 128;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t train_subset = 0;  // 0 = full training split
    double val_fraction = 0.1;

    // analysis.*
    std::vector<std::string> layers;  // empty = model default analysis layers
    int64_t eval_samples = 2000;
    int64_t k_min = 2;
    int64_t k_max = 10;
    int64_t gmm_max_iter = 200;
    double gmm_tol = 1e-6;
    double gmm_reg = 1e-6;

    // criteria.*
    std::string preset = "exp1";
    std::optional<int64_t> lambda;
    std::optional<double> alpha;
    std::optional<double> beta;
    std::optional<double> theta;
    std::optional<int64_t> lambda_outlier;

    // gradients.*
    int64_t gradients_max_group = 1000;

    // mask.*
    int64_t mask_random_per_anomaly = 1;

    // out.*
    std::string out_dir = "out";

    /// Preset thresholds with any explicit overrides applied.
    anomaly::AnomalyCriteria criteria() const;
    anomaly::AnalysisConfig analysis_config() const;
    TrainConfig train_config() const;
    AdamHyper adam() const;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);  // rejects unknown keys
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;
};

}  // namespace flens
