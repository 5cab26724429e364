#pragma once

#include <cstdint>
#include <string>

#include "flens/dataset.hpp"

namespace flens::data {

/// Deterministic 10-class procedural grayscale dataset (discs, rings,
/// stripes, crosses, ...), with per-sample geometry jitter, brightness
/// variation and pixel noise. Optional label noise assigns a uniformly
/// wrong class to a seeded fraction of samples, which gives small nets
/// something to memorize.
struct SynthConfig {
    int64_t count = 6000;
    int64_t image_size = 28;
    uint64_t seed = 0;
    double pixel_noise = 0.08;
    double label_noise = 0.0;
};

Dataset make_synth_dataset(const SynthConfig& config, const std::string& split);

/// Writes a train/test pair in the Fashion-MNIST IDX file layout so the
/// production loader consumes it unchanged.
void write_synth_idx_dir(const std::string& dir, const SynthConfig& train_cfg,
                         const SynthConfig& test_cfg);

}  // namespace flens::data
