#include "flens/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace flens {

namespace {

using nlohmann::json;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
           static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void put_f32(std::string& out, double v) {
    put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
}

double get_f32(const unsigned char* p) {
    return static_cast<double>(std::bit_cast<float>(get_u32(p)));
}

json shape_json(const std::vector<int64_t>& shape) {
    json a = json::array();
    for (int64_t e : shape) a.push_back(e);
    return a;
}

std::vector<int64_t> shape_from_json(const json& a) {
    std::vector<int64_t> s;
    for (const auto& e : a) s.push_back(e.get<int64_t>());
    return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header;
    header["spec_id"] = ckpt.spec_id;
    header["epoch"] = ckpt.epoch;
    header["seed"] = ckpt.seed;
    header["dataset_id"] = ckpt.dataset_id;
    header["optimizer"] = {{"lr", ckpt.optimizer.lr},
                           {"beta1", ckpt.optimizer.beta1},
                           {"beta2", ckpt.optimizer.beta2},
                           {"epsilon", ckpt.optimizer.epsilon}};
    json params = json::array();
    for (const auto& p : ckpt.params) {
        params.push_back({{"layer_id", p.layer_id},
                          {"weight_shape", shape_json(p.weight.shape())},
                          {"bias_shape", shape_json(p.bias.shape())}});
    }
    header["params"] = params;
    const std::string header_str = header.dump();

    std::string blob;
    blob.reserve(header_str.size() + 64);
    blob.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    put_u32(blob, kCheckpointVersion);
    put_u64(blob, header_str.size());
    blob += header_str;
    for (const auto& p : ckpt.params) {
        p.weight.require_finite("checkpoint weight " + p.layer_id);
        p.bias.require_finite("checkpoint bias " + p.layer_id);
        for (int64_t i = 0; i < p.weight.numel(); ++i) put_f32(blob, p.weight[i]);
        for (int64_t i = 0; i < p.bias.numel(); ++i) put_f32(blob, p.bias[i]);
    }

    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw NotFoundError("cannot open '" + tmp.string() + "' for writing");
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!out) throw FormatError("short write to '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("checkpoint file not found: '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());

    const size_t fixed = sizeof(kCheckpointMagic) + 4 + 8;
    if (bytes.size() < fixed) {
        throw FormatError("checkpoint '" + path + "' truncated: " + std::to_string(bytes.size()) +
                          " bytes, need at least " + std::to_string(fixed));
    }
    if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
        throw FormatError("checkpoint '" + path + "' has wrong magic, expected FLENSCPT");
    }
    const uint32_t version = get_u32(bytes.data() + sizeof(kCheckpointMagic));
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint '" + path + "' has unsupported version " +
                          std::to_string(version) + " (this build reads version " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const uint64_t header_len = get_u64(bytes.data() + sizeof(kCheckpointMagic) + 4);
    if (bytes.size() < fixed + header_len) {
        throw FormatError("checkpoint '" + path + "' truncated inside header");
    }

    json header;
    try {
        header = json::parse(bytes.begin() + static_cast<ptrdiff_t>(fixed),
                             bytes.begin() + static_cast<ptrdiff_t>(fixed + header_len));
    } catch (const json::parse_error& e) {
        throw FormatError("checkpoint '" + path + "' has malformed header: " + e.what());
    }

    Checkpoint c;
    try {
        c.spec_id = header.at("spec_id").get<std::string>();
        c.epoch = header.at("epoch").get<int64_t>();
        c.seed = header.at("seed").get<uint64_t>();
        c.dataset_id = header.value("dataset_id", std::string());
        const auto& opt = header.at("optimizer");
        c.optimizer.lr = opt.at("lr").get<double>();
        c.optimizer.beta1 = opt.at("beta1").get<double>();
        c.optimizer.beta2 = opt.at("beta2").get<double>();
        c.optimizer.epsilon = opt.at("epsilon").get<double>();

        size_t off = fixed + header_len;
        for (const auto& pj : header.at("params")) {
            LayerParams p;
            p.layer_id = pj.at("layer_id").get<std::string>();
            const auto wshape = shape_from_json(pj.at("weight_shape"));
            const auto bshape = shape_from_json(pj.at("bias_shape"));
            p.weight = Tensor(wshape);
            p.bias = Tensor(bshape);
            const size_t need = static_cast<size_t>(p.weight.numel() + p.bias.numel()) * 4;
            if (bytes.size() < off + need) {
                throw FormatError("checkpoint '" + path + "' truncated in blob for layer '" +
                                  p.layer_id + "'");
            }
            for (int64_t i = 0; i < p.weight.numel(); ++i, off += 4) {
                p.weight[i] = get_f32(bytes.data() + off);
            }
            for (int64_t i = 0; i < p.bias.numel(); ++i, off += 4) {
                p.bias[i] = get_f32(bytes.data() + off);
            }
            c.params.push_back(std::move(p));
        }
        if (off != bytes.size()) {
            throw FormatError("checkpoint '" + path + "' has " +
                              std::to_string(bytes.size() - off) + " trailing bytes");
        }
    } catch (const json::exception& e) {
        throw FormatError("checkpoint '" + path + "' header missing fields: " + e.what());
    }
    return c;
}

}  // namespace flens
