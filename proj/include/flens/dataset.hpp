#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "flens/tensor.hpp"

namespace flens::data {

/// Immutable image-classification dataset. Pixels live in [0,1].
struct Dataset {
    std::string id;          // e.g. "cifar10", "fashion_mnist"
    std::string split;       // "train" / "val" / "test"
    Tensor images;           // [N,C,H,W]
    std::vector<int64_t> labels;
    int64_t class_count = 0;

    int64_t size() const { return static_cast<int64_t>(labels.size()); }
    void validate() const;   // label range, N > 0, pixel range
};

/// CIFAR-10 binary layout: data_batch_{1..5}.bin + test_batch.bin, each
/// a run of 3073-byte records (1 label byte + 3072 pixel bytes, R,G,B
/// planes row-major 32x32). Pixels scale by 1/255.
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

/// CIFAR-100 binary layout: train.bin + test.bin, 3074-byte records
/// (coarse byte, fine byte, 3072 pixels). The fine label is used.
std::pair<Dataset, Dataset> load_cifar100(const std::string& dir);

/// Fashion-MNIST IDX layout: {train,t10k}-images-idx3-ubyte and
/// -labels-idx1-ubyte, big-endian magic and dims. Yields [N,1,28,28].
std::pair<Dataset, Dataset> load_fashion_mnist(const std::string& dir);

/// Dispatch by id: "cifar10" | "cifar100" | "fashion_mnist".
std::pair<Dataset, Dataset> load_dataset(const std::string& id, const std::string& dir);

// Byte-level decoders/encoders. Decode then encode reproduces the
// original bytes exactly; the file loaders are thin wrappers.
Dataset decode_cifar10(const std::vector<uint8_t>& bytes, const std::string& split);
Dataset decode_cifar100(const std::vector<uint8_t>& bytes, const std::string& split);
Dataset decode_idx_pair(const std::vector<uint8_t>& image_bytes,
                        const std::vector<uint8_t>& label_bytes, const std::string& split);

std::vector<uint8_t> encode_cifar10(const Dataset& ds);
std::vector<uint8_t> encode_cifar100(const Dataset& ds, const std::vector<int64_t>& coarse);
std::vector<uint8_t> encode_idx_images(const Dataset& ds);
std::vector<uint8_t> encode_idx_labels(const Dataset& ds);

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_bytes(const std::string& path);

/// Keys bicubic kernel (a = -0.5) over a 4x4 neighborhood, half-pixel
/// centers, clamp-to-edge. image [C,H,W] -> [C,outH,outW].
Tensor bicubic_resize(const Tensor& image, int64_t out_h, int64_t out_w);

/// Deterministic seeded split: permute indices, val takes the tail
/// fraction; disjoint and exhaustive.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            uint64_t seed);

/// New dataset from the selected rows (kept in index order).
Dataset subset(const Dataset& ds, const std::vector<int64_t>& indices);

/// Per-epoch batch index lists: seeded order when shuffled, identity
/// order otherwise; the last partial batch is included.
std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size, uint64_t seed,
                                                bool shuffle);

/// Gathers one batch ([B,C,H,W] images + labels) from the dataset.
std::pair<Tensor, std::vector<int64_t>> gather_batch(const Dataset& ds,
                                                     const std::vector<int64_t>& indices);

}  // namespace flens::data
