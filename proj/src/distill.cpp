#include "srkd/distill.hpp"

#include <utility>

#include "srkd/masking.hpp"

namespace srkd {

void DistillConfig::validate() const {
    if (alpha < 0.0 || alpha > 1.0)
        throw ParamError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    if (!(temperature > 0.0))
        throw ParamError("temperature must be positive, got " +
                         std::to_string(temperature));
    if (!(rho > 0.0 && rho < 1.0)) throw ParamError("rho must lie in (0, 1)");
    optimizer.validate();
}

ag::Var soft_loss(ag::Var student_logits, const Tensor& teacher_logits,
                  double temperature) {
    return ag::soft_cross_entropy(std::move(student_logits), teacher_logits,
                                  temperature);
}

ag::Var hard_loss(ag::Var student_logits, const IntTensor& labels) {
    return mlm_loss(std::move(student_logits), labels).loss;
}

namespace {

std::vector<std::pair<size_t, size_t>> masked_positions(const IntTensor& labels) {
    std::vector<std::pair<size_t, size_t>> out;
    for (size_t b = 0; b < labels.dim(0); ++b)
        for (size_t i = 0; i < labels.dim(1); ++i)
            if (labels(b, i) != kIgnoreLabel) out.emplace_back(b, i);
    return out;
}

Tensor gather_teacher_rows(const Tensor& teacher_logits,
                           const std::vector<std::pair<size_t, size_t>>& positions) {
    size_t n = teacher_logits.dim(1), v = teacher_logits.dim(2);
    Tensor rows(Shape{positions.size(), v});
    for (size_t i = 0; i < positions.size(); ++i) {
        auto [b, p] = positions[i];
        const double* src = teacher_logits.raw() + (b * n + p) * v;
        std::copy(src, src + v, rows.raw() + i * v);
    }
    return rows;
}

}  // namespace

ag::Var combined_loss(ag::Var student_logits, const Tensor& teacher_logits,
                      const IntTensor& labels, double alpha, double temperature) {
    if (alpha < 0.0 || alpha > 1.0)
        throw ParamError("alpha must lie in [0, 1], got " + std::to_string(alpha));
    if (!(temperature > 0.0))
        throw ParamError("temperature must be positive, got " +
                         std::to_string(temperature));
    if (alpha == 1.0) return hard_loss(std::move(student_logits), labels);

    if (!student_logits->value.same_shape(teacher_logits))
        throw ShapeError("combined_loss: student " +
                         shape_str(student_logits->value.shape()) + " vs teacher " +
                         shape_str(teacher_logits.shape()));
    auto positions = masked_positions(labels);
    if (positions.empty())
        throw ContractError("combined_loss: batch has no masked positions");
    auto student_rows = ag::gather_positions(student_logits, positions);
    auto soft = soft_loss(student_rows, gather_teacher_rows(teacher_logits, positions),
                          temperature);
    auto soft_scaled = ag::scale(soft, (1.0 - alpha) * temperature * temperature);
    if (alpha == 0.0) return soft_scaled;
    return ag::add(ag::scale(hard_loss(std::move(student_logits), labels), alpha),
                   soft_scaled);
}

TrainResult distill(const ModelConfig& teacher_config, ModelParams& teacher_params,
                    const ModelConfig& student_config, ModelParams student_init,
                    const SplitDataset& dataset, const DistillConfig& config,
                    std::ostream* log) {
    config.validate();
    teacher_config.validate();
    student_config.validate();
    if (teacher_config.vocab_size != student_config.vocab_size ||
        teacher_config.max_len != student_config.max_len)
        throw ConfigError("teacher (vocab " + std::to_string(teacher_config.vocab_size) +
                          ", n " + std::to_string(teacher_config.max_len) +
                          ") and student (vocab " +
                          std::to_string(student_config.vocab_size) + ", n " +
                          std::to_string(student_config.max_len) + ") disagree");

    double alpha = config.alpha;
    double temperature = config.temperature;
    return detail::run_masked_training(
        student_config, std::move(student_init), dataset, config.optimizer,
        config.rho,
        [&, alpha, temperature](ag::Tape&, ag::Var logits, const MaskedBatch& batch)
            -> std::pair<ag::Var, size_t> {
            size_t count = masked_positions(batch.labels).size();
            // alpha == 1 is bit-independent of the teacher: skip its forward.
            Tensor teacher_logits;
            if (alpha < 1.0)
                teacher_logits =
                    forward_eval(teacher_config, teacher_params, batch.inputs);
            auto loss = combined_loss(std::move(logits), teacher_logits,
                                      batch.labels, alpha, temperature);
            return {loss, count};
        },
        log);
}

}  // namespace srkd
