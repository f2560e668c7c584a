#pragma once

#include "srkd/train.hpp"

namespace srkd {

struct DistillConfig {
    double alpha = 0.5;        // hard-loss weight in [0, 1]
    double temperature = 1.5;  // > 0
    double rho = 0.35;
    TrainConfig optimizer;     // student optimizer; lr defaults to 1e-4

    DistillConfig() { optimizer.learning_rate = 1e-4; }
    void validate() const;
};

// Tempered soft-target loss at masked positions: cross-entropy between the
// teacher distribution softmax(z_t / T) (constant, no gradient) and the
// student distribution softmax(z_s / T), averaged over the rows.
ag::Var soft_loss(ag::Var student_logits, const Tensor& teacher_logits,
                  double temperature);

// Hard targets at T = 1; same computation as the stage-one mlm_loss.
ag::Var hard_loss(ag::Var student_logits, const IntTensor& labels);

// alpha * hard + (1 - alpha) * T^2 * soft. The endpoints short-circuit:
// alpha == 1 never touches (z_t, T), alpha == 0 never computes the hard
// term. teacher_logits covers the full [B, n, V] grid; the soft term reads
// only the masked rows.
ag::Var combined_loss(ag::Var student_logits, const Tensor& teacher_logits,
                      const IntTensor& labels, double alpha, double temperature);

// Stage two: the frozen teacher (eval mode) scores the same masked inputs
// the student trains on; the student optimizes combined_loss with the
// stage-one loop mechanics (re-masking, shuffling, Adam, early stopping).
TrainResult distill(const ModelConfig& teacher_config, ModelParams& teacher_params,
                    const ModelConfig& student_config, ModelParams student_init,
                    const SplitDataset& dataset, const DistillConfig& config,
                    std::ostream* log = nullptr);

}  // namespace srkd
