#include "flens/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "flens/rng.hpp"

namespace flens::data {

namespace {

constexpr uint32_t kIdxImagesMagic = 0x00000803;
constexpr uint32_t kIdxLabelsMagic = 0x00000801;

uint8_t pixel_to_byte(double p) {
    double v = std::llround(p * 255.0);
    return static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
}

uint32_t read_be32(const std::vector<uint8_t>& b, size_t off, const std::string& what) {
    if (b.size() < off + 4) throw FormatError(what + ": truncated before 32-bit field");
    return static_cast<uint32_t>(b[off]) << 24 | static_cast<uint32_t>(b[off + 1]) << 16 |
           static_cast<uint32_t>(b[off + 2]) << 8 | static_cast<uint32_t>(b[off + 3]);
}

void append_be32(std::vector<uint8_t>& b, uint32_t v) {
    b.push_back(static_cast<uint8_t>(v >> 24));
    b.push_back(static_cast<uint8_t>(v >> 16));
    b.push_back(static_cast<uint8_t>(v >> 8));
    b.push_back(static_cast<uint8_t>(v));
}

std::string hex_magic(uint32_t m) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%08x", m);
    return buf;
}

Dataset decode_cifar_records(const std::vector<uint8_t>& bytes, int64_t label_bytes,
                             const std::string& what, const std::string& split,
                             std::vector<int64_t>* coarse_out) {
    const int64_t record = label_bytes + 3072;
    if (bytes.empty() || static_cast<int64_t>(bytes.size()) % record != 0) {
        throw FormatError(what + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of the " + std::to_string(record) +
                          "-byte record size");
    }
    const int64_t n = static_cast<int64_t>(bytes.size()) / record;
    Dataset ds;
    ds.split = split;
    ds.images = Tensor({n, 3, 32, 32});
    ds.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const uint8_t* rec = bytes.data() + i * record;
        if (coarse_out) coarse_out->push_back(rec[0]);
        ds.labels[static_cast<size_t>(i)] = rec[label_bytes - 1];
        double* dst = ds.images.data() + i * 3072;
        for (int64_t j = 0; j < 3072; ++j) {
            dst[j] = static_cast<double>(rec[label_bytes + j]) / 255.0;
        }
    }
    return ds;
}

std::vector<uint8_t> load_file(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::exists(path)) throw NotFoundError("dataset file not found: '" + path + "'");
    return read_bytes(path);
}

Dataset concat(std::vector<Dataset> parts) {
    int64_t n = 0;
    for (const auto& p : parts) n += p.size();
    Dataset out;
    out.split = parts.front().split;
    const auto& shape = parts.front().images.shape();
    out.images = Tensor({n, shape[1], shape[2], shape[3]});
    out.labels.reserve(static_cast<size_t>(n));
    double* dst = out.images.data();
    for (const auto& p : parts) {
        std::copy(p.images.data(), p.images.data() + p.images.numel(), dst);
        dst += p.images.numel();
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    }
    return out;
}

// Keys cubic convolution kernel, a = -0.5.
double keys_weight(double t) {
    t = std::fabs(t);
    if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
    if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
    return 0.0;
}

}  // namespace

void Dataset::validate() const {
    if (size() == 0) throw InputError("dataset '" + id + "' is empty");
    if (images.rank() != 4 || images.dim(0) != size()) {
        throw InputError("dataset '" + id + "': image tensor " + images.shape_str() +
                         " does not match " + std::to_string(size()) + " labels");
    }
    if (class_count < 1) throw InputError("dataset '" + id + "': class_count not set");
    for (int64_t l : labels) {
        if (l < 0 || l >= class_count) {
            throw InputError("dataset '" + id + "': label " + std::to_string(l) +
                             " outside [0," + std::to_string(class_count) + ")");
        }
    }
    for (int64_t i = 0; i < images.numel(); ++i) {
        const double p = images[i];
        if (!(p >= 0.0 && p <= 1.0)) {
            throw InputError("dataset '" + id + "': pixel " + std::to_string(p) +
                             " outside [0,1]");
        }
    }
}

Dataset decode_cifar10(const std::vector<uint8_t>& bytes, const std::string& split) {
    Dataset ds = decode_cifar_records(bytes, 1, "cifar10", split, nullptr);
    ds.id = "cifar10";
    ds.class_count = 10;
    return ds;
}

Dataset decode_cifar100(const std::vector<uint8_t>& bytes, const std::string& split) {
    Dataset ds = decode_cifar_records(bytes, 2, "cifar100", split, nullptr);
    ds.id = "cifar100";
    ds.class_count = 100;
    return ds;
}

Dataset decode_idx_pair(const std::vector<uint8_t>& image_bytes,
                        const std::vector<uint8_t>& label_bytes, const std::string& split) {
    const uint32_t imagic = read_be32(image_bytes, 0, "idx images");
    if (imagic != kIdxImagesMagic) {
        throw FormatError("idx images: expected magic " + hex_magic(kIdxImagesMagic) + ", got " +
                          hex_magic(imagic));
    }
    const uint32_t lmagic = read_be32(label_bytes, 0, "idx labels");
    if (lmagic != kIdxLabelsMagic) {
        throw FormatError("idx labels: expected magic " + hex_magic(kIdxLabelsMagic) + ", got " +
                          hex_magic(lmagic));
    }
    const int64_t n = read_be32(image_bytes, 4, "idx images");
    const int64_t rows = read_be32(image_bytes, 8, "idx images");
    const int64_t cols = read_be32(image_bytes, 12, "idx images");
    const int64_t ln = read_be32(label_bytes, 4, "idx labels");
    if (n != ln) {
        throw FormatError("idx: image count " + std::to_string(n) + " and label count " +
                          std::to_string(ln) + " disagree");
    }
    if (n < 1 || rows < 1 || cols < 1) throw FormatError("idx images: non-positive dimensions");
    if (static_cast<int64_t>(image_bytes.size()) != 16 + n * rows * cols) {
        throw FormatError("idx images: expected " + std::to_string(16 + n * rows * cols) +
                          " bytes, got " + std::to_string(image_bytes.size()));
    }
    if (static_cast<int64_t>(label_bytes.size()) != 8 + n) {
        throw FormatError("idx labels: expected " + std::to_string(8 + n) + " bytes, got " +
                          std::to_string(label_bytes.size()));
    }

    Dataset ds;
    ds.id = "fashion_mnist";
    ds.split = split;
    ds.class_count = 10;
    ds.images = Tensor({n, 1, rows, cols});
    ds.labels.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n * rows * cols; ++i) {
        ds.images[i] = static_cast<double>(image_bytes[static_cast<size_t>(16 + i)]) / 255.0;
    }
    for (int64_t i = 0; i < n; ++i) {
        ds.labels[static_cast<size_t>(i)] = label_bytes[static_cast<size_t>(8 + i)];
    }
    return ds;
}

std::vector<uint8_t> encode_cifar10(const Dataset& ds) {
    require_shape(ds.images, {ds.size(), 3, 32, 32}, "encode_cifar10 images");
    std::vector<uint8_t> out;
    out.reserve(static_cast<size_t>(ds.size() * 3073));
    for (int64_t i = 0; i < ds.size(); ++i) {
        out.push_back(static_cast<uint8_t>(ds.labels[static_cast<size_t>(i)]));
        const double* src = ds.images.data() + i * 3072;
        for (int64_t j = 0; j < 3072; ++j) out.push_back(pixel_to_byte(src[j]));
    }
    return out;
}

std::vector<uint8_t> encode_cifar100(const Dataset& ds, const std::vector<int64_t>& coarse) {
    require_shape(ds.images, {ds.size(), 3, 32, 32}, "encode_cifar100 images");
    if (static_cast<int64_t>(coarse.size()) != ds.size()) {
        throw InputError("encode_cifar100: coarse label count mismatch");
    }
    std::vector<uint8_t> out;
    out.reserve(static_cast<size_t>(ds.size() * 3074));
    for (int64_t i = 0; i < ds.size(); ++i) {
        out.push_back(static_cast<uint8_t>(coarse[static_cast<size_t>(i)]));
        out.push_back(static_cast<uint8_t>(ds.labels[static_cast<size_t>(i)]));
        const double* src = ds.images.data() + i * 3072;
        for (int64_t j = 0; j < 3072; ++j) out.push_back(pixel_to_byte(src[j]));
    }
    return out;
}

std::vector<uint8_t> encode_idx_images(const Dataset& ds) {
    require_rank(ds.images, 4, "encode_idx_images");
    if (ds.images.dim(1) != 1) throw InputError("encode_idx_images: expects single-channel");
    std::vector<uint8_t> out;
    append_be32(out, kIdxImagesMagic);
    append_be32(out, static_cast<uint32_t>(ds.size()));
    append_be32(out, static_cast<uint32_t>(ds.images.dim(2)));
    append_be32(out, static_cast<uint32_t>(ds.images.dim(3)));
    for (int64_t i = 0; i < ds.images.numel(); ++i) out.push_back(pixel_to_byte(ds.images[i]));
    return out;
}

std::vector<uint8_t> encode_idx_labels(const Dataset& ds) {
    std::vector<uint8_t> out;
    append_be32(out, kIdxLabelsMagic);
    append_be32(out, static_cast<uint32_t>(ds.size()));
    for (int64_t l : ds.labels) out.push_back(static_cast<uint8_t>(l));
    return out;
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw NotFoundError("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

std::vector<uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open '" + path + "'");
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
    std::vector<Dataset> parts;
    for (int i = 1; i <= 5; ++i) {
        const std::string path = dir + "/data_batch_" + std::to_string(i) + ".bin";
        parts.push_back(decode_cifar10(load_file(path), "train"));
    }
    Dataset train = concat(std::move(parts));
    train.id = "cifar10";
    train.class_count = 10;
    Dataset test = decode_cifar10(load_file(dir + "/test_batch.bin"), "test");
    return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_cifar100(const std::string& dir) {
    Dataset train = decode_cifar100(load_file(dir + "/train.bin"), "train");
    Dataset test = decode_cifar100(load_file(dir + "/test.bin"), "test");
    return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_fashion_mnist(const std::string& dir) {
    Dataset train = decode_idx_pair(load_file(dir + "/train-images-idx3-ubyte"),
                                    load_file(dir + "/train-labels-idx1-ubyte"), "train");
    Dataset test = decode_idx_pair(load_file(dir + "/t10k-images-idx3-ubyte"),
                                   load_file(dir + "/t10k-labels-idx1-ubyte"), "test");
    return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_dataset(const std::string& id, const std::string& dir) {
    if (id == "cifar10") return load_cifar10(dir);
    if (id == "cifar100") return load_cifar100(dir);
    if (id == "fashion_mnist") return load_fashion_mnist(dir);
    if (id == "synth10") {
        // synthetic set ships in the IDX layout
        auto [train, test] = load_fashion_mnist(dir);
        train.id = id;
        test.id = id;
        return {std::move(train), std::move(test)};
    }
    throw ConfigError("unknown dataset id '" + id +
                      "' (expected cifar10|cifar100|fashion_mnist|synth10)");
}

Tensor bicubic_resize(const Tensor& image, int64_t out_h, int64_t out_w) {
    require_rank(image, 3, "bicubic_resize image");
    if (out_h < 1 || out_w < 1) throw InputError("bicubic_resize: non-positive target size");
    const int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (h < 2 || w < 2) throw InputError("bicubic_resize: source must be at least 2x2");

    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);

    Tensor out({c, out_h, out_w});
    std::vector<double> wx(4), wy(4);
    for (int64_t oy = 0; oy < out_h; ++oy) {
        const double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        const int64_t y0 = static_cast<int64_t>(std::floor(fy));
        for (int k = 0; k < 4; ++k) wy[static_cast<size_t>(k)] = keys_weight(fy - (y0 - 1 + k));
        for (int64_t ox = 0; ox < out_w; ++ox) {
            const double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            const int64_t x0 = static_cast<int64_t>(std::floor(fx));
            for (int k = 0; k < 4; ++k) {
                wx[static_cast<size_t>(k)] = keys_weight(fx - (x0 - 1 + k));
            }
            for (int64_t ci = 0; ci < c; ++ci) {
                const double* plane = image.data() + ci * h * w;
                double acc = 0.0;
                for (int ky = 0; ky < 4; ++ky) {
                    const int64_t yy = std::clamp<int64_t>(y0 - 1 + ky, 0, h - 1);
                    double row = 0.0;
                    for (int kx = 0; kx < 4; ++kx) {
                        const int64_t xx = std::clamp<int64_t>(x0 - 1 + kx, 0, w - 1);
                        row += wx[static_cast<size_t>(kx)] * plane[yy * w + xx];
                    }
                    acc += wy[static_cast<size_t>(ky)] * row;
                }
                out.data()[(ci * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double val_fraction,
                                            uint64_t seed) {
    if (val_fraction < 0.0 || val_fraction > 1.0) {
        throw InputError("split_train_val: val_fraction outside [0,1]");
    }
    const int64_t n = ds.size();
    Rng rng(mix_seed(seed, 0x5b117));
    std::vector<int64_t> perm = rng.permutation(n);
    const int64_t n_val = static_cast<int64_t>(std::llround(val_fraction * static_cast<double>(n)));
    std::vector<int64_t> train_idx(perm.begin(), perm.end() - n_val);
    std::vector<int64_t> val_idx(perm.end() - n_val, perm.end());
    Dataset train = subset(ds, train_idx);
    train.split = "train";
    Dataset val = subset(ds, val_idx);
    val.split = "val";
    return {std::move(train), std::move(val)};
}

Dataset subset(const Dataset& ds, const std::vector<int64_t>& indices) {
    Dataset out;
    out.id = ds.id;
    out.split = ds.split;
    out.class_count = ds.class_count;
    out.labels.reserve(indices.size());
    if (indices.empty()) return out;

    const auto& s = ds.images.shape();
    const int64_t item = s[1] * s[2] * s[3];
    out.images = Tensor({static_cast<int64_t>(indices.size()), s[1], s[2], s[3]});
    double* dst = out.images.data();
    for (size_t i = 0; i < indices.size(); ++i) {
        const int64_t idx = indices[i];
        if (idx < 0 || idx >= ds.size()) {
            throw InputError("subset: index " + std::to_string(idx) + " out of range");
        }
        std::copy(ds.images.data() + idx * item, ds.images.data() + (idx + 1) * item, dst);
        dst += item;
        out.labels.push_back(ds.labels[static_cast<size_t>(idx)]);
    }
    return out;
}

std::vector<std::vector<int64_t>> batch_indices(int64_t n, int64_t batch_size, uint64_t seed,
                                                bool shuffle) {
    if (n < 1) throw InputError("batch_indices: empty dataset");
    if (batch_size < 1) throw InputError("batch_indices: batch_size must be >= 1");
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    if (shuffle) {
        Rng rng(mix_seed(seed, 0xba7c4));
        rng.shuffle(order);
    }
    std::vector<std::vector<int64_t>> batches;
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

std::pair<Tensor, std::vector<int64_t>> gather_batch(const Dataset& ds,
                                                     const std::vector<int64_t>& indices) {
    if (indices.empty()) throw InputError("gather_batch: empty index list");
    Dataset sub = subset(ds, indices);
    return {std::move(sub.images), std::move(sub.labels)};
}

}  // namespace flens::data
