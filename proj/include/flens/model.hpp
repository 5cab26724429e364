#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flens/adam.hpp"
#include "flens/tensor.hpp"

namespace flens {

enum class LayerKind { Conv, Relu, MaxPool, Flatten, Linear };

std::string layer_kind_name(LayerKind kind);

struct LayerDesc {
    LayerKind kind = LayerKind::Relu;
    std::string id;  // stable unique id, e.g. "conv1", "relu2", "fc1"

    // conv
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kernel = 0;
    int stride = 1;
    int pad = 0;

    // maxpool
    int pool_k = 2;
    int pool_stride = 2;

    // linear
    int64_t in_features = 0;
    int64_t out_features = 0;

    bool has_params() const { return kind == LayerKind::Conv || kind == LayerKind::Linear; }
};

/// Ordered layer plan plus the input geometry it was built for. Layer
/// ids are unique and stable across constructions with the same
/// arguments.
struct ModelSpec {
    std::string id;
    int64_t input_channels = 0;
    int64_t input_h = 0;
    int64_t input_w = 0;
    int64_t num_classes = 0;
    std::vector<LayerDesc> layers;

    const LayerDesc& layer(const std::string& layer_id) const;
    int layer_index(const std::string& layer_id) const;  // -1 when absent
    std::vector<std::string> layer_ids() const;

    /// Ids of layers whose output is a 4-D feature map (conv/relu/pool).
    std::vector<std::string> feature_layer_ids() const;

    /// Default layers for clustering analysis: the relu directly after
    /// each conv block.
    std::vector<std::string> default_analysis_layers() const;

    /// Resolves a relu/maxpool id to the nearest preceding conv id;
    /// conv ids map to themselves. Throws InputError when no conv
    /// precedes the named layer.
    std::string owning_conv(const std::string& layer_id) const;
};

/// Three conv blocks (32, 64, 64 channels, 3x3 kernels, pad 1), relu
/// after each, maxpool 2x2 after blocks 1 and 2, then a single linear
/// classifier head on the flattened features.
ModelSpec build_simple_cnn(int64_t input_channels, int64_t input_h, int64_t input_w,
                           int64_t num_classes);

/// conv(6,5x5) relu pool2 conv(16,5x5) relu pool2 flatten fc120 relu
/// fc84 relu fc(num_classes). 28x28 inputs get pad 2 at conv1 so the
/// canonical 32x32 shape plan applies unchanged.
ModelSpec build_lenet5(int64_t input_channels, int64_t input_h, int64_t input_w,
                       int64_t num_classes);

/// Validates layer compatibility by propagating the input shape through
/// the plan; returns the logits feature count.
int64_t validate_spec(const ModelSpec& spec);

struct LayerParams {
    std::string layer_id;
    Tensor weight;
    Tensor bias;
};

/// Parameter snapshot of one model at one epoch, with the training
/// metadata needed to reproduce it.
struct Checkpoint {
    std::string spec_id;
    int64_t epoch = 0;
    uint64_t seed = 0;
    std::string dataset_id;
    AdamHyper optimizer;
    std::vector<LayerParams> params;  // parameterized layers in plan order

    LayerParams& find(const std::string& layer_id);
    const LayerParams& find(const std::string& layer_id) const;
};

/// Seeded Kaiming-uniform (fan-in) init; biases zero; epoch 0.
Checkpoint init_params(const ModelSpec& spec, uint64_t seed);

/// Throws InputError when parameter shapes disagree with the spec.
void validate_checkpoint(const ModelSpec& spec, const Checkpoint& ckpt);

/// Per-layer activation cache of one forward pass, for backward.
struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> outputs;                   // aligned with spec.layers
    std::vector<std::vector<int64_t>> pool_argmax; // non-empty only for pool layers
    const Tensor& logits() const { return outputs.back(); }
};

ForwardTrace forward_trace(const ModelSpec& spec, const Checkpoint& ckpt, const Tensor& batch);

/// Logits only.
Tensor forward(const ModelSpec& spec, const Checkpoint& ckpt, const Tensor& batch);

/// Forward that also returns copies of the named layers' outputs.
/// Logits are bitwise identical to plain forward.
std::pair<Tensor, std::map<std::string, Tensor>> forward_with_capture(
    const ModelSpec& spec, const Checkpoint& ckpt, const Tensor& batch,
    const std::vector<std::string>& capture_layer_ids);

/// Forward with one feature-map channel forced to zero right after the
/// named layer produces its output. The diagnostic twin of mask_filter.
Tensor forward_with_channel_zeroed(const ModelSpec& spec, const Checkpoint& ckpt,
                                   const Tensor& batch, const std::string& layer_id,
                                   int64_t channel);

/// Parameter gradients (plan order, shapes mirroring Checkpoint.params)
/// of the scalar loss whose logit gradient is `grad_logits`.
std::vector<LayerParams> backward(const ModelSpec& spec, const Checkpoint& ckpt,
                                  const ForwardTrace& trace, const Tensor& grad_logits);

}  // namespace flens
