#include "flens/train.hpp"

#include <cmath>
#include <cstdio>

#include "flens/checkpoint.hpp"
#include "flens/nn_ops.hpp"
#include "flens/rng.hpp"

namespace flens {

namespace {

int64_t count_correct(const Tensor& probs, const std::vector<int64_t>& labels) {
    int64_t correct = 0;
    const int64_t b = probs.dim(0), c = probs.dim(1);
    for (int64_t i = 0; i < b; ++i) {
        const double* row = probs.data() + i * c;
        int64_t best = 0;
        for (int64_t j = 1; j < c; ++j) {
            if (row[j] > row[best]) best = j;
        }
        if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
    return correct;
}

}  // namespace

std::string checkpoint_filename(int64_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "epoch_%04d.flensckpt", static_cast<int>(epoch));
    return buf;
}

std::pair<double, double> evaluate(const ModelSpec& spec, const Checkpoint& ckpt,
                                   const data::Dataset& ds, int64_t batch_size) {
    ds.validate();
    double loss_sum = 0.0;
    int64_t correct = 0;
    for (const auto& idx : data::batch_indices(ds.size(), batch_size, 0, false)) {
        auto [images, labels] = data::gather_batch(ds, idx);
        Tensor logits = forward(spec, ckpt, images);
        auto r = nn::softmax_crossentropy(logits, labels);
        loss_sum += r.loss * static_cast<double>(idx.size());
        correct += count_correct(r.probs, labels);
    }
    const double n = static_cast<double>(ds.size());
    return {loss_sum / n, static_cast<double>(correct) / n};
}

TrainResult train(const ModelSpec& spec, const data::Dataset& train_set,
                  const data::Dataset& val_set, const TrainConfig& config) {
    train_set.validate();
    val_set.validate();
    if (config.epochs < 1) throw InputError("train: epochs must be >= 1");
    if (train_set.images.dim(1) != spec.input_channels) {
        throw InputError("train: dataset has " + std::to_string(train_set.images.dim(1)) +
                         " channels, model " + spec.id + " expects " +
                         std::to_string(spec.input_channels));
    }

    Checkpoint ckpt = init_params(spec, config.seed);
    ckpt.dataset_id = train_set.id;
    ckpt.optimizer = config.adam;

    std::vector<Tensor*> params;
    for (auto& p : ckpt.params) {
        params.push_back(&p.weight);
        params.push_back(&p.bias);
    }
    AdamState opt = AdamState::init(params, config.adam);

    TrainResult result;
    for (int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
        double loss_sum = 0.0;
        int64_t correct = 0;
        const auto batches = data::batch_indices(train_set.size(), config.batch_size,
                                                 mix_seed(config.seed, static_cast<uint64_t>(epoch)),
                                                 true);
        for (const auto& idx : batches) {
            auto [images, labels] = data::gather_batch(train_set, idx);
            ForwardTrace trace = forward_trace(spec, ckpt, images);
            auto r = nn::softmax_crossentropy(trace.logits(), labels);
            if (!std::isfinite(r.loss)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            }
            loss_sum += r.loss * static_cast<double>(idx.size());
            correct += count_correct(r.probs, labels);

            auto grads = backward(spec, ckpt, trace, r.grad_logits);
            std::vector<const Tensor*> grad_ptrs;
            grad_ptrs.reserve(grads.size() * 2);
            for (auto& g : grads) {
                grad_ptrs.push_back(&g.weight);
                grad_ptrs.push_back(&g.bias);
            }
            adam_step(params, grad_ptrs, opt);
        }

        ckpt.epoch = epoch;
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(train_set.size());
        m.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
        auto [vl, va] = evaluate(spec, ckpt, val_set);
        m.val_loss = vl;
        m.val_acc = va;
        if (!config.checkpoint_dir.empty()) {
            m.checkpoint_path = config.checkpoint_dir + "/" + checkpoint_filename(epoch);
            save_checkpoint(ckpt, m.checkpoint_path);
        }
        result.metrics.push_back(m);
        if (config.keep_checkpoints) result.checkpoints.push_back(ckpt);
    }
    result.final_checkpoint = std::move(ckpt);
    return result;
}

}  // namespace flens
