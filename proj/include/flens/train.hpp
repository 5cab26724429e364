#pragma once

#include <string>
#include <vector>

#include "flens/dataset.hpp"
#include "flens/model.hpp"

namespace flens {

struct TrainConfig {
    int64_t epochs = 100;
    int64_t batch_size = 128;
    uint64_t seed = 0;
    AdamHyper adam;
    std::string checkpoint_dir;      // empty -> no files written
    bool keep_checkpoints = false;   // retain per-epoch checkpoints in memory
};

struct EpochMetrics {
    int64_t epoch = 0;               // 1-based
    std::string checkpoint_path;     // empty when not written
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::vector<Checkpoint> checkpoints;  // only when keep_checkpoints
    Checkpoint final_checkpoint;
};

/// Mean loss and exact accuracy over the dataset (argmax prediction,
/// ties toward the lower class index).
std::pair<double, double> evaluate(const ModelSpec& spec, const Checkpoint& ckpt,
                                   const data::Dataset& ds, int64_t batch_size = 256);

/// Deterministic full training loop: seeded init, seeded per-epoch
/// shuffle, Adam updates, one checkpoint + metric row per epoch.
/// Train loss/acc are averaged over the epoch's batch forward passes;
/// validation is evaluated after each epoch.
TrainResult train(const ModelSpec& spec, const data::Dataset& train_set,
                  const data::Dataset& val_set, const TrainConfig& config);

std::string checkpoint_filename(int64_t epoch);

}  // namespace flens
