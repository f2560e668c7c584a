#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "srkd/rng.hpp"
#include "srkd/tensor.hpp"

namespace srkd::ag {

class Tape;

// One value in the computation graph. grad stays empty (rank-0 zero) until
// the reverse pass touches it; gradient() below hides that detail.
struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Tape* tape = nullptr;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // pulls from this->grad into parents

    Tensor& ensure_grad() {
        if (!has_grad) {
            grad = Tensor::zeros(value.shape());
            has_grad = true;
        }
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

// Records ops in execution order; backward() replays them strictly reversed.
// A tape constructed with grad_enabled=false still evaluates ops but records
// nothing (used for teacher/eval forwards).
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    // Trainable leaf (a model parameter). Shares the tensor's buffer.
    Var leaf(Tensor t);
    // Non-trainable input (embedding ids live elsewhere; this is for
    // constant tensors such as attention masks).
    Var constant(Tensor t);

    void backward(const Var& loss);

    // Zero tensor of the parameter's shape when the loss never touched it.
    Tensor gradient(const Var& v) const;

    Var record(Tensor value, std::vector<Var> parents,
               std::function<void()> backward_fn);

private:
    bool grad_enabled_;
    std::vector<Var> order_;
};

// ---- differentiable ops -------------------------------------------------

// a: [..., m, k] x b: [k, n]          (b broadcast over leading dims)
// a: [..., m, k] x b: [..., k, n]     (equal leading dims, batched)
Var matmul(Var a, Var b);

// b's shape must be a trailing suffix of a's shape (equal shapes included);
// rank-0 b adds a scalar everywhere.
Var add(Var a, Var b);

Var scale(Var a, double s);

// Tempered softmax over the last axis, row-max subtracted before exp.
Var softmax_rows(Var x, double temperature);

Var layer_norm(Var x, Var gamma, Var beta, double eps);

Var gelu(Var x);

// Inverted dropout. Identity when train_mode is false or rate == 0.
// mask_out, when given, receives the 0/1 keep mask actually drawn.
Var dropout(Var x, double rate, Rng& rng, bool train_mode,
            Tensor* mask_out = nullptr);

// table: [V, d], ids: any shape -> [ids..., d]; scatter-add gradient.
Var embedding_gather(Var table, const IntTensor& ids);

Var transpose_last_two(Var x);

Var slice_last_axis(Var x, size_t start, size_t len);
Var concat_last_axis(const std::vector<Var>& parts);

// x: [B, n, V], positions: (batch, pos) pairs -> [M, V].
Var gather_positions(Var x, const std::vector<std::pair<size_t, size_t>>& positions);

Var sum(Var x);  // scalar

struct MaskedCrossEntropy {
    Var loss;      // scalar; 0 when count == 0
    size_t count;  // contributing (non-ignored) positions
};

// logits: [..., V], labels: [...]; mean of -log softmax(logits)[label]
// over positions whose label differs from ignore_label.
MaskedCrossEntropy cross_entropy_masked(Var logits, const IntTensor& labels,
                                        int32_t ignore_label);

// Mean over rows of the cross-entropy between the tempered teacher
// distribution (constant) and the tempered student distribution.
// student: [M, V] on tape, teacher: [M, V] plain tensor.
Var soft_cross_entropy(Var student_logits, const Tensor& teacher_logits,
                       double temperature);

}  // namespace srkd::ag
