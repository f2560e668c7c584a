#include "srkd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace srkd::ag {

namespace {

constexpr double kPi = 3.14159265358979323846;

Tape* tape_of(const Var& v) {
    if (!v || !v->tape) throw ContractError("op input is not attached to a tape");
    return v->tape;
}

void check_same_tape(const Var& a, const Var& b) {
    if (tape_of(a) != tape_of(b))
        throw ContractError("op inputs live on different tapes");
}

// C[m x n] += A[m x k] * B[k x n]. Row blocks write disjoint memory, so the
// parallel path is bit-identical to the serial one.
void mm2d(const double* a, const double* b, double* c, size_t m, size_t k,
          size_t n, bool allow_parallel) {
    auto rows = [=](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (size_t l = 0; l < k; ++l) {
                double av = arow[l];
                const double* brow = b + l * n;
                for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    };
    if (allow_parallel && m * k * n >= (1u << 18)) {
        parallel_for(m, rows);
    } else {
        rows(0, m);
    }
}

void transpose_2d(const double* src, double* dst, size_t rows, size_t cols) {
    for (size_t i = 0; i < rows; ++i)
        for (size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

size_t leading_numel(const Shape& s, size_t trailing) {
    size_t n = 1;
    for (size_t i = 0; i + trailing < s.size(); ++i) n *= s[i];
    return n;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    size_t off = big.size() - small.size();
    for (size_t i = 0; i < small.size(); ++i)
        if (small[i] != big[off + i]) return false;
    return true;
}

}  // namespace

Var Tape::leaf(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = grad_enabled_;
    node->tape = this;
    if (grad_enabled_) order_.push_back(node);
    return node;
}

Var Tape::constant(Tensor t) {
    auto node = std::make_shared<Node>();
    node->value = std::move(t);
    node->requires_grad = false;
    node->tape = this;
    return node;
}

Var Tape::record(Tensor value, std::vector<Var> parents,
                 std::function<void()> backward_fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->tape = this;
    if (grad_enabled_) {
        for (const auto& p : parents)
            if (p->requires_grad) node->requires_grad = true;
        if (node->requires_grad) {
            node->parents = std::move(parents);
            node->backward_fn = std::move(backward_fn);
        }
        order_.push_back(node);
    }
    return node;
}

void Tape::backward(const Var& loss) {
    if (!loss || loss->tape != this)
        throw ContractError("backward: loss was not produced under this tape");
    if (loss->value.numel() != 1)
        throw ContractError("backward: loss is not scalar, shape " +
                            shape_str(loss->value.shape()));
    loss->ensure_grad().data()[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        Node& node = **it;
        if (node.has_grad && node.backward_fn) node.backward_fn();
    }
}

Tensor Tape::gradient(const Var& v) const {
    if (!v) throw ContractError("gradient of null var");
    if (v->has_grad) return v->grad;
    return Tensor::zeros(v->value.shape());
}

// ---- ops ---------------------------------------------------------------

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tape* tape = a->tape;
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() < 2)
        throw ShapeError("matmul: left operand must have rank >= 2, got " +
                         shape_str(av.shape()));

    if (bv.rank() == 2) {
        // [..., k] x [k, n] as one flattened product.
        size_t k = av.dim(av.rank() - 1);
        if (k != bv.dim(0))
            throw ShapeError("matmul: inner dimensions disagree, " +
                             shape_str(av.shape()) + " x " + shape_str(bv.shape()));
        size_t n = bv.dim(1);
        size_t rows = av.numel() / k;
        Shape out_shape(av.shape());
        out_shape.back() = n;
        Tensor out(out_shape);
        mm2d(av.raw(), bv.raw(), out.raw(), rows, k, n, true);

        Node* pa = a.get();
        Node* pb = b.get();
        auto out_var = tape->record(std::move(out), {a, b}, nullptr);
        if (out_var->requires_grad) {
            Node* self = out_var.get();
            out_var->backward_fn = [self, pa, pb, rows, k, n]() {
                const double* g = self->grad.raw();
                if (pa->requires_grad) {
                    Tensor bt(Shape{n, k});
                    transpose_2d(pb->value.raw(), bt.raw(), k, n);
                    mm2d(g, bt.raw(), pa->ensure_grad().raw(), rows, n, k, true);
                }
                if (pb->requires_grad) {
                    Tensor at(Shape{k, rows});
                    transpose_2d(pa->value.raw(), at.raw(), rows, k);
                    mm2d(at.raw(), g, pb->ensure_grad().raw(), k, rows, n, true);
                }
            };
        }
        return out_var;
    }

    if (av.rank() != bv.rank() || av.rank() < 3 ||
        !std::equal(av.shape().begin(), av.shape().end() - 2, bv.shape().begin()))
        throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) +
                         " x " + shape_str(bv.shape()));
    size_t m = av.dim(av.rank() - 2);
    size_t k = av.dim(av.rank() - 1);
    if (k != bv.dim(bv.rank() - 2))
        throw ShapeError("matmul: inner dimensions disagree, " +
                         shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    size_t n = bv.dim(bv.rank() - 1);
    size_t batches = leading_numel(av.shape(), 2);
    Shape out_shape(av.shape());
    out_shape[out_shape.size() - 1] = n;
    Tensor out(out_shape);
    {
        const double* ap = av.raw();
        const double* bp = bv.raw();
        double* op = out.raw();
        parallel_for(batches, [&](size_t lo, size_t hi) {
            for (size_t t = lo; t < hi; ++t)
                mm2d(ap + t * m * k, bp + t * k * n, op + t * m * n, m, k, n, false);
        });
    }

    Node* pa = a.get();
    Node* pb = b.get();
    auto out_var = tape->record(std::move(out), {a, b}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, pa, pb, batches, m, k, n]() {
            const double* g = self->grad.raw();
            if (pa->requires_grad) {
                double* ga = pa->ensure_grad().raw();
                const double* bp = pb->value.raw();
                parallel_for(batches, [&](size_t lo, size_t hi) {
                    std::vector<double> bt(k * n);
                    for (size_t t = lo; t < hi; ++t) {
                        transpose_2d(bp + t * k * n, bt.data(), k, n);
                        mm2d(g + t * m * n, bt.data(), ga + t * m * k, m, n, k, false);
                    }
                });
            }
            if (pb->requires_grad) {
                double* gb = pb->ensure_grad().raw();
                const double* ap = pa->value.raw();
                parallel_for(batches, [&](size_t lo, size_t hi) {
                    std::vector<double> at(m * k);
                    for (size_t t = lo; t < hi; ++t) {
                        transpose_2d(ap + t * m * k, at.data(), m, k);
                        mm2d(at.data(), g + t * m * n, gb + t * k * n, k, m, n, false);
                    }
                });
            }
        };
    }
    return out_var;
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (!is_suffix(bv.shape(), av.shape()))
        throw ShapeError("add: " + shape_str(bv.shape()) +
                         " is not a trailing suffix of " + shape_str(av.shape()));
    size_t nb = bv.numel();
    Tensor out(av.shape());
    {
        const double* ap = av.raw();
        const double* bp = bv.raw();
        double* op = out.raw();
        size_t na = av.numel();
        for (size_t i = 0; i < na; ++i) op[i] = ap[i] + bp[i % nb];
    }
    Node* pa = a.get();
    Node* pb = b.get();
    auto out_var = a->tape->record(std::move(out), {a, b}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, pa, pb, nb]() {
            const double* g = self->grad.raw();
            size_t na = self->value.numel();
            if (pa->requires_grad) {
                double* ga = pa->ensure_grad().raw();
                for (size_t i = 0; i < na; ++i) ga[i] += g[i];
            }
            if (pb->requires_grad) {
                double* gb = pb->ensure_grad().raw();
                for (size_t i = 0; i < na; ++i) gb[i % nb] += g[i];
            }
        };
    }
    return out_var;
}

Var scale(Var a, double s) {
    Tape* tape = tape_of(a);
    Tensor out(a->value.shape());
    {
        const double* ap = a->value.raw();
        double* op = out.raw();
        for (size_t i = 0; i < out.numel(); ++i) op[i] = ap[i] * s;
    }
    Node* pa = a.get();
    auto out_var = tape->record(std::move(out), {a}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, pa, s]() {
            const double* g = self->grad.raw();
            double* ga = pa->ensure_grad().raw();
            for (size_t i = 0; i < self->value.numel(); ++i) ga[i] += g[i] * s;
        };
    }
    return out_var;
}

Var softmax_rows(Var x, double temperature) {
    if (!(temperature > 0.0))
        throw ParamError("softmax_rows: temperature must be positive, got " +
                         std::to_string(temperature));
    Tape* tape = tape_of(x);
    const Tensor& xv = x->value;
    if (xv.rank() < 1) throw ShapeError("softmax_rows: input must have rank >= 1");
    size_t n = xv.dim(xv.rank() - 1);
    size_t rows = xv.numel() / n;
    Tensor out(xv.shape());
    {
        const double* xp = xv.raw();
        double* op = out.raw();
        for (size_t r = 0; r < rows; ++r) {
            const double* xr = xp + r * n;
            double* yr = op + r * n;
            double mx = xr[0];
            for (size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
            double s = 0.0;
            for (size_t j = 0; j < n; ++j) {
                yr[j] = std::exp((xr[j] - mx) / temperature);
                s += yr[j];
            }
            for (size_t j = 0; j < n; ++j) yr[j] /= s;
        }
    }
    Node* px = x.get();
    auto out_var = tape->record(std::move(out), {x}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px, rows, n, temperature]() {
            const double* g = self->grad.raw();
            const double* y = self->value.raw();
            double* gx = px->ensure_grad().raw();
            for (size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * n;
                const double* yr = y + r * n;
                double dot = 0.0;
                for (size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                for (size_t j = 0; j < n; ++j)
                    gx[r * n + j] += yr[j] * (gr[j] - dot) / temperature;
            }
        };
    }
    return out_var;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const Tensor& xv = x->value;
    size_t d = xv.dim(xv.rank() - 1);
    if (gamma->value.shape() != Shape{d} || beta->value.shape() != Shape{d})
        throw ShapeError("layer_norm: gamma/beta shape " +
                         shape_str(gamma->value.shape()) +
                         " does not match last axis of " + shape_str(xv.shape()));
    size_t rows = xv.numel() / d;
    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(rows);
    {
        const double* xp = xv.raw();
        const double* gp = gamma->value.raw();
        const double* bp = beta->value.raw();
        double* op = out.raw();
        double* hp = xhat.raw();
        for (size_t r = 0; r < rows; ++r) {
            const double* xr = xp + r * d;
            double mean = 0.0;
            for (size_t j = 0; j < d; ++j) mean += xr[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (size_t j = 0; j < d; ++j) {
                double c = xr[j] - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            double inv = 1.0 / std::sqrt(var + eps);
            inv_std[r] = inv;
            for (size_t j = 0; j < d; ++j) {
                double h = (xr[j] - mean) * inv;
                hp[r * d + j] = h;
                op[r * d + j] = gp[j] * h + bp[j];
            }
        }
    }
    Node* px = x.get();
    Node* pg = gamma.get();
    Node* pb = beta.get();
    auto out_var = x->tape->record(std::move(out), {x, gamma, beta}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px, pg, pb, xhat, inv_std, rows, d]() {
            const double* g = self->grad.raw();
            const double* hp = xhat.raw();
            const double* gp = pg->value.raw();
            for (size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * d;
                const double* hr = hp + r * d;
                if (px->requires_grad) {
                    double m1 = 0.0, m2 = 0.0;
                    for (size_t j = 0; j < d; ++j) {
                        double gg = gr[j] * gp[j];
                        m1 += gg;
                        m2 += gg * hr[j];
                    }
                    m1 /= static_cast<double>(d);
                    m2 /= static_cast<double>(d);
                    double* gx = px->ensure_grad().raw() + r * d;
                    for (size_t j = 0; j < d; ++j)
                        gx[j] += inv_std[r] * (gr[j] * gp[j] - m1 - hr[j] * m2);
                }
                if (pg->requires_grad) {
                    double* gg = pg->ensure_grad().raw();
                    for (size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
                }
                if (pb->requires_grad) {
                    double* gb = pb->ensure_grad().raw();
                    for (size_t j = 0; j < d; ++j) gb[j] += gr[j];
                }
            }
        };
    }
    return out_var;
}

Var gelu(Var x) {
    Tape* tape = tape_of(x);
    Tensor out(x->value.shape());
    {
        const double* xp = x->value.raw();
        double* op = out.raw();
        for (size_t i = 0; i < out.numel(); ++i)
            op[i] = 0.5 * xp[i] * (1.0 + std::erf(xp[i] / std::sqrt(2.0)));
    }
    Node* px = x.get();
    auto out_var = tape->record(std::move(out), {x}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px]() {
            const double* g = self->grad.raw();
            const double* xp = px->value.raw();
            double* gx = px->ensure_grad().raw();
            for (size_t i = 0; i < self->value.numel(); ++i) {
                double cdf = 0.5 * (1.0 + std::erf(xp[i] / std::sqrt(2.0)));
                double pdf = std::exp(-0.5 * xp[i] * xp[i]) / std::sqrt(2.0 * kPi);
                gx[i] += g[i] * (cdf + xp[i] * pdf);
            }
        };
    }
    return out_var;
}

Var dropout(Var x, double rate, Rng& rng, bool train_mode, Tensor* mask_out) {
    if (rate < 0.0 || rate >= 1.0)
        throw ParamError("dropout: rate must lie in [0, 1), got " +
                         std::to_string(rate));
    if (!train_mode || rate == 0.0) {
        if (mask_out) *mask_out = Tensor::full(x->value.shape(), 1.0);
        return x;
    }
    Tape* tape = tape_of(x);
    double keep = 1.0 - rate;
    Tensor mask(x->value.shape());
    Tensor out(x->value.shape());
    {
        const double* xp = x->value.raw();
        double* mp = mask.raw();
        double* op = out.raw();
        for (size_t i = 0; i < out.numel(); ++i) {
            mp[i] = rng.next_double() >= rate ? 1.0 : 0.0;
            op[i] = xp[i] * mp[i] / keep;
        }
    }
    if (mask_out) *mask_out = mask;
    Node* px = x.get();
    auto out_var = tape->record(std::move(out), {x}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px, mask, keep]() {
            const double* g = self->grad.raw();
            const double* mp = mask.raw();
            double* gx = px->ensure_grad().raw();
            for (size_t i = 0; i < self->value.numel(); ++i)
                gx[i] += g[i] * mp[i] / keep;
        };
    }
    return out_var;
}

Var embedding_gather(Var table, const IntTensor& ids) {
    Tape* tape = tape_of(table);
    const Tensor& tv = table->value;
    if (tv.rank() != 2)
        throw ShapeError("embedding_gather: table must be [V, d], got " +
                         shape_str(tv.shape()));
    size_t vocab = tv.dim(0);
    size_t d = tv.dim(1);
    Shape out_shape(ids.shape());
    out_shape.push_back(d);
    Tensor out(out_shape);
    {
        const double* tp = tv.raw();
        double* op = out.raw();
        auto idspan = ids.data();
        for (size_t i = 0; i < idspan.size(); ++i) {
            int32_t id = idspan[i];
            if (id < 0 || static_cast<size_t>(id) >= vocab)
                throw DataError("embedding_gather: token id " + std::to_string(id) +
                                " out of range [0, " + std::to_string(vocab) +
                                ") at position " + std::to_string(i));
            std::memcpy(op + i * d, tp + static_cast<size_t>(id) * d,
                        d * sizeof(double));
        }
    }
    Node* pt = table.get();
    std::vector<int32_t> id_copy(ids.data().begin(), ids.data().end());
    auto out_var = tape->record(std::move(out), {table}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, pt, id_copy = std::move(id_copy), d]() {
            const double* g = self->grad.raw();
            double* gt = pt->ensure_grad().raw();
            for (size_t i = 0; i < id_copy.size(); ++i) {
                double* row = gt + static_cast<size_t>(id_copy[i]) * d;
                const double* gr = g + i * d;
                for (size_t j = 0; j < d; ++j) row[j] += gr[j];
            }
        };
    }
    return out_var;
}

Var transpose_last_two(Var x) {
    Tape* tape = tape_of(x);
    const Tensor& xv = x->value;
    if (xv.rank() < 2)
        throw ShapeError("transpose_last_two: rank must be >= 2, got " +
                         shape_str(xv.shape()));
    size_t m = xv.dim(xv.rank() - 2);
    size_t n = xv.dim(xv.rank() - 1);
    size_t batches = leading_numel(xv.shape(), 2);
    Shape out_shape(xv.shape());
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    Tensor out(out_shape);
    for (size_t t = 0; t < batches; ++t)
        transpose_2d(xv.raw() + t * m * n, out.raw() + t * m * n, m, n);
    Node* px = x.get();
    auto out_var = tape->record(std::move(out), {x}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px, batches, m, n]() {
            const double* g = self->grad.raw();
            double* gx = px->ensure_grad().raw();
            for (size_t t = 0; t < batches; ++t) {
                const double* gb = g + t * m * n;
                double* xb = gx + t * m * n;
                for (size_t i = 0; i < n; ++i)
                    for (size_t j = 0; j < m; ++j) xb[j * n + i] += gb[i * m + j];
            }
        };
    }
    return out_var;
}

Var slice_last_axis(Var x, size_t start, size_t len) {
    Tape* tape = tape_of(x);
    const Tensor& xv = x->value;
    size_t n = xv.dim(xv.rank() - 1);
    if (len == 0 || start + len > n)
        throw ShapeError("slice_last_axis: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of axis length " +
                         std::to_string(n));
    size_t rows = xv.numel() / n;
    Shape out_shape(xv.shape());
    out_shape.back() = len;
    Tensor out(out_shape);
    for (size_t r = 0; r < rows; ++r)
        std::memcpy(out.raw() + r * len, xv.raw() + r * n + start,
                    len * sizeof(double));
    Node* px = x.get();
    auto out_var = tape->record(std::move(out), {x}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px, start, len, n, rows]() {
            const double* g = self->grad.raw();
            double* gx = px->ensure_grad().raw();
            for (size_t r = 0; r < rows; ++r) {
                const double* gr = g + r * len;
                double* xr = gx + r * n + start;
                for (size_t j = 0; j < len; ++j) xr[j] += gr[j];
            }
        };
    }
    return out_var;
}

Var concat_last_axis(const std::vector<Var>& parts) {
    if (parts.empty()) throw ContractError("concat_last_axis: no inputs");
    Tape* tape = tape_of(parts[0]);
    Shape lead(parts[0]->value.shape());
    lead.pop_back();
    size_t total = 0;
    std::vector<size_t> widths;
    for (const auto& p : parts) {
        check_same_tape(parts[0], p);
        Shape pl(p->value.shape());
        size_t w = pl.back();
        pl.pop_back();
        if (pl != lead)
            throw ShapeError("concat_last_axis: leading shapes disagree, " +
                             shape_str(parts[0]->value.shape()) + " vs " +
                             shape_str(p->value.shape()));
        widths.push_back(w);
        total += w;
    }
    size_t rows = shape_numel(lead);
    Shape out_shape(lead);
    out_shape.push_back(total);
    Tensor out(out_shape);
    {
        double* op = out.raw();
        size_t off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const double* src = parts[pi]->value.raw();
            size_t w = widths[pi];
            for (size_t r = 0; r < rows; ++r)
                std::memcpy(op + r * total + off, src + r * w, w * sizeof(double));
            off += w;
        }
    }
    std::vector<Var> parents(parts);
    auto out_var = tape->record(std::move(out), parents, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        std::vector<Node*> raw;
        for (const auto& p : parts) raw.push_back(p.get());
        out_var->backward_fn = [self, raw, widths, rows, total]() {
            const double* g = self->grad.raw();
            size_t off = 0;
            for (size_t pi = 0; pi < raw.size(); ++pi) {
                size_t w = widths[pi];
                if (raw[pi]->requires_grad) {
                    double* gp = raw[pi]->ensure_grad().raw();
                    for (size_t r = 0; r < rows; ++r) {
                        const double* gr = g + r * total + off;
                        double* pr = gp + r * w;
                        for (size_t j = 0; j < w; ++j) pr[j] += gr[j];
                    }
                }
                off += w;
            }
        };
    }
    return out_var;
}

Var gather_positions(Var x, const std::vector<std::pair<size_t, size_t>>& positions) {
    Tape* tape = tape_of(x);
    const Tensor& xv = x->value;
    if (xv.rank() != 3)
        throw ShapeError("gather_positions: expected [B, n, V], got " +
                         shape_str(xv.shape()));
    if (positions.empty()) throw ContractError("gather_positions: empty position list");
    size_t batch = xv.dim(0), n = xv.dim(1), v = xv.dim(2);
    Tensor out(Shape{positions.size(), v});
    for (size_t i = 0; i < positions.size(); ++i) {
        auto [b, p] = positions[i];
        if (b >= batch || p >= n)
            throw ContractError("gather_positions: position (" + std::to_string(b) +
                                ", " + std::to_string(p) + ") out of range");
        std::memcpy(out.raw() + i * v, xv.raw() + (b * n + p) * v,
                    v * sizeof(double));
    }
    Node* px = x.get();
    auto pos_copy = positions;
    auto out_var = tape->record(std::move(out), {x}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px, pos_copy = std::move(pos_copy), n, v]() {
            const double* g = self->grad.raw();
            double* gx = px->ensure_grad().raw();
            for (size_t i = 0; i < pos_copy.size(); ++i) {
                double* row = gx + (pos_copy[i].first * n + pos_copy[i].second) * v;
                const double* gr = g + i * v;
                for (size_t j = 0; j < v; ++j) row[j] += gr[j];
            }
        };
    }
    return out_var;
}

Var sum(Var x) {
    Tape* tape = tape_of(x);
    double s = 0.0;
    for (double v : x->value.data()) s += v;
    Node* px = x.get();
    auto out_var = tape->record(Tensor::scalar(s), {x}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, px]() {
            double g = self->grad.raw()[0];
            double* gx = px->ensure_grad().raw();
            for (size_t i = 0; i < px->value.numel(); ++i) gx[i] += g;
        };
    }
    return out_var;
}

MaskedCrossEntropy cross_entropy_masked(Var logits, const IntTensor& labels,
                                        int32_t ignore_label) {
    Tape* tape = tape_of(logits);
    const Tensor& zv = logits->value;
    if (zv.rank() < 2)
        throw ShapeError("cross_entropy_masked: logits must have rank >= 2");
    size_t v = zv.dim(zv.rank() - 1);
    Shape lead(zv.shape());
    lead.pop_back();
    if (labels.shape() != lead)
        throw ShapeError("cross_entropy_masked: labels " + shape_str(labels.shape()) +
                         " do not match logits leading shape " + shape_str(lead));
    size_t rows = labels.numel();
    auto lab = labels.data();

    std::vector<size_t> counted;
    for (size_t r = 0; r < rows; ++r) {
        if (lab[r] == ignore_label) continue;
        if (lab[r] < 0 || static_cast<size_t>(lab[r]) >= v)
            throw DataError("cross_entropy_masked: label " + std::to_string(lab[r]) +
                            " out of range [0, " + std::to_string(v) +
                            ") at position " + std::to_string(r));
        counted.push_back(r);
    }
    size_t count = counted.size();
    if (count == 0) return {tape->constant(Tensor::scalar(0.0)), 0};

    // Per-row softmax probabilities are kept for the reverse pass.
    Tensor probs(Shape{count, v});
    double total = 0.0;
    {
        const double* zp = zv.raw();
        double* pp = probs.raw();
        for (size_t i = 0; i < count; ++i) {
            size_t r = counted[i];
            const double* zr = zp + r * v;
            double mx = zr[0];
            for (size_t j = 1; j < v; ++j) mx = std::max(mx, zr[j]);
            double s = 0.0;
            for (size_t j = 0; j < v; ++j) {
                pp[i * v + j] = std::exp(zr[j] - mx);
                s += pp[i * v + j];
            }
            for (size_t j = 0; j < v; ++j) pp[i * v + j] /= s;
            total += (mx + std::log(s)) - zr[lab[r]];
        }
    }
    double loss = total / static_cast<double>(count);
    std::vector<int32_t> lab_counted;
    lab_counted.reserve(count);
    for (size_t r : counted) lab_counted.push_back(lab[r]);

    Node* pz = logits.get();
    auto out_var = tape->record(Tensor::scalar(loss), {logits}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, pz, probs, counted = std::move(counted),
                                lab_counted = std::move(lab_counted), v]() {
            double g = self->grad.raw()[0] / static_cast<double>(counted.size());
            double* gz = pz->ensure_grad().raw();
            const double* pp = probs.raw();
            for (size_t i = 0; i < counted.size(); ++i) {
                double* zr = gz + counted[i] * v;
                const double* pr = pp + i * v;
                for (size_t j = 0; j < v; ++j) zr[j] += g * pr[j];
                zr[static_cast<size_t>(lab_counted[i])] -= g;
            }
        };
    }
    return {out_var, count};
}

Var soft_cross_entropy(Var student_logits, const Tensor& teacher_logits,
                       double temperature) {
    if (!(temperature > 0.0))
        throw ParamError("soft_cross_entropy: temperature must be positive, got " +
                         std::to_string(temperature));
    Tape* tape = tape_of(student_logits);
    const Tensor& sv = student_logits->value;
    if (sv.rank() != 2 || !sv.same_shape(teacher_logits))
        throw ShapeError("soft_cross_entropy: student " + shape_str(sv.shape()) +
                         " vs teacher " + shape_str(teacher_logits.shape()));
    size_t rows = sv.dim(0), v = sv.dim(1);

    auto tempered_softmax = [&](const double* z, double* p) {
        double mx = z[0];
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, z[j]);
        double s = 0.0;
        for (size_t j = 0; j < v; ++j) {
            p[j] = std::exp((z[j] - mx) / temperature);
            s += p[j];
        }
        for (size_t j = 0; j < v; ++j) p[j] /= s;
    };

    Tensor teacher_p(Shape{rows, v});
    Tensor student_q(Shape{rows, v});
    double total = 0.0;
    for (size_t r = 0; r < rows; ++r) {
        const double* zt = teacher_logits.raw() + r * v;
        const double* zs = sv.raw() + r * v;
        double* pr = teacher_p.raw() + r * v;
        double* qr = student_q.raw() + r * v;
        tempered_softmax(zt, pr);
        // student log-probabilities via logsumexp, probabilities for backward
        double mx = zs[0];
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, zs[j]);
        double s = 0.0;
        for (size_t j = 0; j < v; ++j) {
            qr[j] = std::exp((zs[j] - mx) / temperature);
            s += qr[j];
        }
        double log_s = std::log(s);
        double row_loss = 0.0;
        for (size_t j = 0; j < v; ++j) {
            row_loss -= pr[j] * ((zs[j] - mx) / temperature - log_s);
            qr[j] /= s;
        }
        total += row_loss;
    }
    double loss = total / static_cast<double>(rows);

    Node* ps = student_logits.get();
    auto out_var = tape->record(Tensor::scalar(loss), {student_logits}, nullptr);
    if (out_var->requires_grad) {
        Node* self = out_var.get();
        out_var->backward_fn = [self, ps, teacher_p, student_q, rows, v,
                                temperature]() {
            double g = self->grad.raw()[0] /
                       (static_cast<double>(rows) * temperature);
            double* gz = ps->ensure_grad().raw();
            const double* pp = teacher_p.raw();
            const double* qp = student_q.raw();
            for (size_t i = 0; i < rows * v; ++i) gz[i] += g * (qp[i] - pp[i]);
        };
    }
    return out_var;
}

}  // namespace srkd::ag
