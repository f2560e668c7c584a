#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "srkd/corpus.hpp"
#include "srkd/masking.hpp"
#include "srkd/model.hpp"

namespace srkd {

struct TrainConfig {
    double learning_rate = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    size_t batch_size = 32;
    size_t max_epochs = 150;
    size_t patience = 5;
    double rho = 0.55;  // mask ratio
    double grad_clip = 0.0;  // global L2 clip, 0 disables
    uint64_t seed = 7;
    std::string selection_metric = "NDCG@10";  // computed on validation

    void validate() const;
};

// Per-parameter Adam moments, slot order = ModelParams::visit order.
struct AdamState {
    std::vector<Tensor> m, v;
    uint64_t step = 0;
};

AdamState make_adam_state(ModelParams& params);

// Bias-corrected Adam update. Gradients must be finite (training error
// naming the parameter otherwise) and aligned with the visit order.
void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
               AdamState& state, const TrainConfig& config);

// Eq-style masked-prediction loss: mean cross-entropy over all masked
// positions pooled across the batch. At least one position must be masked.
ag::MaskedCrossEntropy mlm_loss(ag::Var logits, const IntTensor& labels);

struct EpochStats {
    size_t epoch = 0;
    double loss = 0.0;    // pooled mean over the epoch's masked positions
    double metric = 0.0;  // selection metric on validation
};

struct TrainResult {
    ModelParams best_params;
    std::vector<EpochStats> history;
    size_t best_epoch = 0;
    double best_metric = 0.0;
};

// Masked-prediction training with re-masking every epoch, seeded user
// shuffling, Adam, best-checkpoint tracking and early stopping after
// `patience` epochs without strict improvement of the selection metric.
// The log, when given, receives one `epoch,step,loss,metric` line per step
// and per epoch.
TrainResult train(const ModelConfig& model_config, ModelParams init,
                  const SplitDataset& dataset, const TrainConfig& config,
                  std::ostream* log = nullptr);

namespace detail {

// The stage-one loop with the loss swapped out; stage two reuses it with
// the combined distillation loss. Returns (loss node, masked-position count).
using BatchLossFn = std::function<std::pair<ag::Var, size_t>(
    ag::Tape&, ag::Var logits, const MaskedBatch& batch)>;

TrainResult run_masked_training(const ModelConfig& model_config, ModelParams init,
                                const SplitDataset& dataset,
                                const TrainConfig& config, double rho,
                                const BatchLossFn& batch_loss, std::ostream* log);

ModelParams clone_params(ModelParams& params);
std::pair<std::string, size_t> parse_metric(const std::string& name);

}  // namespace detail

}  // namespace srkd
