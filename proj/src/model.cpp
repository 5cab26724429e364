#include "flens/model.hpp"

#include <algorithm>
#include <cmath>

#include "flens/nn_ops.hpp"
#include "flens/rng.hpp"

namespace flens {

std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Linear: return "linear";
    }
    return "?";
}

const LayerDesc& ModelSpec::layer(const std::string& layer_id) const {
    int idx = layer_index(layer_id);
    if (idx < 0) throw InputError("unknown layer id '" + layer_id + "' in model " + id);
    return layers[static_cast<size_t>(idx)];
}

int ModelSpec::layer_index(const std::string& layer_id) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].id == layer_id) return static_cast<int>(i);
    }
    return -1;
}

std::vector<std::string> ModelSpec::layer_ids() const {
    std::vector<std::string> ids;
    ids.reserve(layers.size());
    for (const auto& l : layers) ids.push_back(l.id);
    return ids;
}

std::vector<std::string> ModelSpec::feature_layer_ids() const {
    std::vector<std::string> ids;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::Flatten) break;
        ids.push_back(l.id);
    }
    return ids;
}

std::vector<std::string> ModelSpec::default_analysis_layers() const {
    std::vector<std::string> ids;
    for (size_t i = 0; i + 1 < layers.size(); ++i) {
        if (layers[i].kind == LayerKind::Conv && layers[i + 1].kind == LayerKind::Relu) {
            ids.push_back(layers[i + 1].id);
        }
    }
    return ids;
}

std::string ModelSpec::owning_conv(const std::string& layer_id) const {
    int idx = layer_index(layer_id);
    if (idx < 0) throw InputError("unknown layer id '" + layer_id + "' in model " + id);
    for (int i = idx; i >= 0; --i) {
        const auto& l = layers[static_cast<size_t>(i)];
        if (l.kind == LayerKind::Conv) return l.id;
        if (l.kind != LayerKind::Relu && l.kind != LayerKind::MaxPool) break;
    }
    throw InputError("layer '" + layer_id + "' has no preceding conv filter to mask");
}

namespace {

LayerDesc conv(std::string id, int64_t cin, int64_t cout, int64_t k, int pad) {
    LayerDesc l;
    l.kind = LayerKind::Conv;
    l.id = std::move(id);
    l.in_channels = cin;
    l.out_channels = cout;
    l.kernel = k;
    l.stride = 1;
    l.pad = pad;
    return l;
}

LayerDesc relu(std::string id) {
    LayerDesc l;
    l.kind = LayerKind::Relu;
    l.id = std::move(id);
    return l;
}

LayerDesc pool2(std::string id) {
    LayerDesc l;
    l.kind = LayerKind::MaxPool;
    l.id = std::move(id);
    l.pool_k = 2;
    l.pool_stride = 2;
    return l;
}

LayerDesc flatten(std::string id) {
    LayerDesc l;
    l.kind = LayerKind::Flatten;
    l.id = std::move(id);
    return l;
}

LayerDesc linear(std::string id, int64_t in_f, int64_t out_f) {
    LayerDesc l;
    l.kind = LayerKind::Linear;
    l.id = std::move(id);
    l.in_features = in_f;
    l.out_features = out_f;
    return l;
}

}  // namespace

ModelSpec build_simple_cnn(int64_t input_channels, int64_t input_h, int64_t input_w,
                           int64_t num_classes) {
    if (input_channels < 1 || input_h < 4 || input_w < 4 || num_classes < 2) {
        throw InputError("build_simple_cnn: bad input geometry or class count");
    }
    ModelSpec s;
    s.id = "simple_cnn";
    s.input_channels = input_channels;
    s.input_h = input_h;
    s.input_w = input_w;
    s.num_classes = num_classes;

    s.layers.push_back(conv("conv1", input_channels, 32, 3, 1));
    s.layers.push_back(relu("relu1"));
    s.layers.push_back(pool2("pool1"));
    s.layers.push_back(conv("conv2", 32, 64, 3, 1));
    s.layers.push_back(relu("relu2"));
    s.layers.push_back(pool2("pool2"));
    s.layers.push_back(conv("conv3", 64, 64, 3, 1));
    s.layers.push_back(relu("relu3"));
    s.layers.push_back(flatten("flatten"));
    const int64_t h = input_h / 2 / 2;
    const int64_t w = input_w / 2 / 2;
    s.layers.push_back(linear("fc1", 64 * h * w, num_classes));
    validate_spec(s);
    return s;
}

ModelSpec build_lenet5(int64_t input_channels, int64_t input_h, int64_t input_w,
                       int64_t num_classes) {
    if (input_channels < 1 || num_classes < 2) {
        throw InputError("build_lenet5: bad input geometry or class count");
    }
    if (input_h != input_w || (input_h != 32 && input_h != 28)) {
        throw InputError("build_lenet5: expected square 32x32 or 28x28 inputs, got " +
                         std::to_string(input_h) + "x" + std::to_string(input_w));
    }
    // pad 2 at conv1 for 28x28 inputs keeps the canonical 32x32 plan.
    const int pad1 = input_h == 28 ? 2 : 0;
    ModelSpec s;
    s.id = "lenet5";
    s.input_channels = input_channels;
    s.input_h = input_h;
    s.input_w = input_w;
    s.num_classes = num_classes;

    s.layers.push_back(conv("conv1", input_channels, 6, 5, pad1));
    s.layers.push_back(relu("relu1"));
    s.layers.push_back(pool2("pool1"));
    s.layers.push_back(conv("conv2", 6, 16, 5, 0));
    s.layers.push_back(relu("relu2"));
    s.layers.push_back(pool2("pool2"));
    s.layers.push_back(flatten("flatten"));
    s.layers.push_back(linear("fc1", 16 * 5 * 5, 120));
    s.layers.push_back(relu("relu3"));
    s.layers.push_back(linear("fc2", 120, 84));
    s.layers.push_back(relu("relu4"));
    s.layers.push_back(linear("fc3", 84, num_classes));
    validate_spec(s);
    return s;
}

int64_t validate_spec(const ModelSpec& spec) {
    if (spec.layers.empty()) throw InputError("model spec '" + spec.id + "' has no layers");
    std::vector<std::string> seen;
    int64_t c = spec.input_channels, h = spec.input_h, w = spec.input_w;
    int64_t feat = -1;  // >= 0 once flattened
    for (const auto& l : spec.layers) {
        if (std::find(seen.begin(), seen.end(), l.id) != seen.end()) {
            throw InputError("duplicate layer id '" + l.id + "' in model " + spec.id);
        }
        seen.push_back(l.id);
        switch (l.kind) {
            case LayerKind::Conv: {
                if (feat >= 0) throw InputError("conv after flatten in model " + spec.id);
                if (l.in_channels != c) {
                    throw InputError("layer " + l.id + ": expects " +
                                     std::to_string(l.in_channels) + " channels, gets " +
                                     std::to_string(c));
                }
                h = (h + 2 * l.pad - l.kernel) / l.stride + 1;
                w = (w + 2 * l.pad - l.kernel) / l.stride + 1;
                c = l.out_channels;
                if (h < 1 || w < 1) throw InputError("layer " + l.id + ": output collapses");
                break;
            }
            case LayerKind::Relu:
                break;
            case LayerKind::MaxPool: {
                if (feat >= 0) throw InputError("pool after flatten in model " + spec.id);
                if (l.pool_k > h || l.pool_k > w) {
                    throw InputError("layer " + l.id + ": pool window exceeds input");
                }
                h = (h - l.pool_k) / l.pool_stride + 1;
                w = (w - l.pool_k) / l.pool_stride + 1;
                break;
            }
            case LayerKind::Flatten:
                feat = c * h * w;
                break;
            case LayerKind::Linear: {
                if (feat < 0) throw InputError("linear before flatten in model " + spec.id);
                if (l.in_features != feat) {
                    throw InputError("layer " + l.id + ": expects " +
                                     std::to_string(l.in_features) + " features, gets " +
                                     std::to_string(feat));
                }
                feat = l.out_features;
                break;
            }
        }
    }
    if (feat != spec.num_classes) {
        throw InputError("model " + spec.id + ": head produces " + std::to_string(feat) +
                         " outputs, expected " + std::to_string(spec.num_classes) + " classes");
    }
    return feat;
}

LayerParams& Checkpoint::find(const std::string& layer_id) {
    for (auto& p : params) {
        if (p.layer_id == layer_id) return p;
    }
    throw InputError("checkpoint has no parameters for layer '" + layer_id + "'");
}

const LayerParams& Checkpoint::find(const std::string& layer_id) const {
    return const_cast<Checkpoint*>(this)->find(layer_id);
}

Checkpoint init_params(const ModelSpec& spec, uint64_t seed) {
    Checkpoint c;
    c.spec_id = spec.id;
    c.epoch = 0;
    c.seed = seed;
    Rng rng(mix_seed(seed, 0xf1e75));
    for (const auto& l : spec.layers) {
        if (!l.has_params()) continue;
        LayerParams p;
        p.layer_id = l.id;
        if (l.kind == LayerKind::Conv) {
            p.weight = Tensor({l.out_channels, l.in_channels, l.kernel, l.kernel});
            p.bias = Tensor({l.out_channels});
        } else {
            p.weight = Tensor({l.in_features, l.out_features});
            p.bias = Tensor({l.out_features});
        }
        const int64_t fan_in = l.kind == LayerKind::Conv ? l.in_channels * l.kernel * l.kernel
                                                         : l.in_features;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (int64_t i = 0; i < p.weight.numel(); ++i) p.weight[i] = rng.uniform(-bound, bound);
        c.params.push_back(std::move(p));
    }
    return c;
}

void validate_checkpoint(const ModelSpec& spec, const Checkpoint& ckpt) {
    Checkpoint ref = init_params(spec, 0);
    if (ckpt.params.size() != ref.params.size()) {
        throw InputError("checkpoint has " + std::to_string(ckpt.params.size()) +
                         " parameterized layers, model " + spec.id + " expects " +
                         std::to_string(ref.params.size()));
    }
    for (size_t i = 0; i < ref.params.size(); ++i) {
        const auto& a = ckpt.params[i];
        const auto& b = ref.params[i];
        if (a.layer_id != b.layer_id || !a.weight.same_shape(b.weight) ||
            !a.bias.same_shape(b.bias)) {
            throw InputError("checkpoint parameter " + std::to_string(i) + " ('" + a.layer_id +
                             "' " + a.weight.shape_str() + ") does not match model layer '" +
                             b.layer_id + "' " + b.weight.shape_str());
        }
    }
}

namespace {

struct RunHooks {
    const std::vector<std::string>* capture = nullptr;
    std::map<std::string, Tensor>* captured = nullptr;
    const std::string* zero_layer = nullptr;
    int64_t zero_channel = -1;
};

ForwardTrace run_forward(const ModelSpec& spec, const Checkpoint& ckpt, const Tensor& batch,
                         const RunHooks& hooks) {
    require_rank(batch, 4, "model input");
    if (batch.dim(1) != spec.input_channels || batch.dim(2) != spec.input_h ||
        batch.dim(3) != spec.input_w) {
        throw InputError("model " + spec.id + " expects input [B," +
                         std::to_string(spec.input_channels) + "," +
                         std::to_string(spec.input_h) + "," + std::to_string(spec.input_w) +
                         "], got " + batch.shape_str());
    }
    ForwardTrace t;
    t.input = batch;
    t.outputs.reserve(spec.layers.size());
    t.pool_argmax.resize(spec.layers.size());

    const Tensor* cur = &t.input;
    size_t param_idx = 0;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                const auto& p = ckpt.params.at(param_idx++);
                t.outputs.push_back(nn::conv2d_forward(*cur, p.weight, p.bias, l.stride, l.pad));
                break;
            }
            case LayerKind::Relu:
                t.outputs.push_back(nn::relu_forward(*cur));
                break;
            case LayerKind::MaxPool: {
                auto r = nn::maxpool2d_forward(*cur, l.pool_k, l.pool_stride);
                t.outputs.push_back(std::move(r.output));
                t.pool_argmax[i] = std::move(r.argmax);
                break;
            }
            case LayerKind::Flatten: {
                const Tensor& x = *cur;
                t.outputs.emplace_back(
                    std::vector<int64_t>{x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)}, x.vec());
                break;
            }
            case LayerKind::Linear: {
                const auto& p = ckpt.params.at(param_idx++);
                t.outputs.push_back(nn::linear_forward(*cur, p.weight, p.bias));
                break;
            }
        }
        Tensor& out = t.outputs.back();
        if (hooks.zero_layer && *hooks.zero_layer == l.id) {
            if (out.rank() != 4) {
                throw InputError("layer '" + l.id + "' does not produce channelled feature maps");
            }
            if (hooks.zero_channel < 0 || hooks.zero_channel >= out.dim(1)) {
                throw InputError("channel " + std::to_string(hooks.zero_channel) +
                                 " out of range for layer '" + l.id + "'");
            }
            const int64_t plane = out.dim(2) * out.dim(3);
            for (int64_t b = 0; b < out.dim(0); ++b) {
                double* dst = out.data() + (b * out.dim(1) + hooks.zero_channel) * plane;
                std::fill(dst, dst + plane, 0.0);
            }
        }
        if (hooks.capture && hooks.captured &&
            std::find(hooks.capture->begin(), hooks.capture->end(), l.id) !=
                hooks.capture->end()) {
            (*hooks.captured)[l.id] = out;
        }
        cur = &out;
    }
    return t;
}

}  // namespace

ForwardTrace forward_trace(const ModelSpec& spec, const Checkpoint& ckpt, const Tensor& batch) {
    return run_forward(spec, ckpt, batch, RunHooks{});
}

Tensor forward(const ModelSpec& spec, const Checkpoint& ckpt, const Tensor& batch) {
    return run_forward(spec, ckpt, batch, RunHooks{}).outputs.back();
}

std::pair<Tensor, std::map<std::string, Tensor>> forward_with_capture(
    const ModelSpec& spec, const Checkpoint& ckpt, const Tensor& batch,
    const std::vector<std::string>& capture_layer_ids) {
    for (const auto& id : capture_layer_ids) {
        (void)spec.layer(id);  // unknown id -> InputError before any work
    }
    std::map<std::string, Tensor> captured;
    RunHooks hooks;
    hooks.capture = &capture_layer_ids;
    hooks.captured = &captured;
    auto trace = run_forward(spec, ckpt, batch, hooks);
    return {trace.outputs.back(), std::move(captured)};
}

Tensor forward_with_channel_zeroed(const ModelSpec& spec, const Checkpoint& ckpt,
                                   const Tensor& batch, const std::string& layer_id,
                                   int64_t channel) {
    (void)spec.layer(layer_id);
    RunHooks hooks;
    hooks.zero_layer = &layer_id;
    hooks.zero_channel = channel;
    return run_forward(spec, ckpt, batch, hooks).outputs.back();
}

std::vector<LayerParams> backward(const ModelSpec& spec, const Checkpoint& ckpt,
                                  const ForwardTrace& trace, const Tensor& grad_logits) {
    if (trace.outputs.size() != spec.layers.size()) {
        throw InputError("backward: trace does not match model spec");
    }
    std::vector<LayerParams> grads(ckpt.params.size());

    Tensor grad = grad_logits;
    int param_idx = static_cast<int>(ckpt.params.size()) - 1;
    for (int i = static_cast<int>(spec.layers.size()) - 1; i >= 0; --i) {
        const auto& l = spec.layers[static_cast<size_t>(i)];
        const Tensor& layer_in =
            i == 0 ? trace.input : trace.outputs[static_cast<size_t>(i - 1)];
        switch (l.kind) {
            case LayerKind::Conv: {
                const auto& p = ckpt.params.at(static_cast<size_t>(param_idx));
                auto g = nn::conv2d_backward(grad, layer_in, p.weight, l.stride, l.pad);
                grads[static_cast<size_t>(param_idx)] =
                    LayerParams{l.id, std::move(g.grad_weight), std::move(g.grad_bias)};
                grad = std::move(g.grad_input);
                --param_idx;
                break;
            }
            case LayerKind::Relu:
                grad = nn::relu_backward(grad, layer_in);
                break;
            case LayerKind::MaxPool:
                grad = nn::maxpool2d_backward(grad, trace.pool_argmax[static_cast<size_t>(i)],
                                              layer_in.shape());
                break;
            case LayerKind::Flatten:
                grad = Tensor(layer_in.shape(), grad.vec());
                break;
            case LayerKind::Linear: {
                const auto& p = ckpt.params.at(static_cast<size_t>(param_idx));
                auto g = nn::linear_backward(grad, layer_in, p.weight);
                grads[static_cast<size_t>(param_idx)] =
                    LayerParams{l.id, std::move(g.grad_weight), std::move(g.grad_bias)};
                grad = std::move(g.grad_input);
                --param_idx;
                break;
            }
        }
    }
    return grads;
}

}  // namespace flens
