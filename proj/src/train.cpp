#include "srkd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "srkd/evaluate.hpp"
#include "srkd/masking.hpp"

namespace srkd {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ParamError("learning_rate must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw ParamError("adam betas must lie in (0, 1)");
    if (!(adam_eps > 0.0)) throw ParamError("adam_eps must be positive");
    if (batch_size < 1) throw ParamError("batch_size must be >= 1");
    if (max_epochs < 1) throw ParamError("max_epochs must be >= 1");
    if (patience < 1) throw ParamError("patience must be >= 1");
    if (!(rho > 0.0 && rho < 1.0)) throw ParamError("rho must lie in (0, 1)");
    if (grad_clip < 0.0) throw ParamError("grad_clip must be >= 0");
}

AdamState make_adam_state(ModelParams& params) {
    AdamState state;
    params.visit([&](const std::string&, Tensor& t) {
        state.m.push_back(Tensor::zeros(t.shape()));
        state.v.push_back(Tensor::zeros(t.shape()));
    });
    return state;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads,
               AdamState& state, const TrainConfig& config) {
    if (grads.size() != state.m.size())
        throw ContractError("adam_step: gradient count " + std::to_string(grads.size()) +
                            " does not match state slots " + std::to_string(state.m.size()));

    double clip_scale = 1.0;
    if (config.grad_clip > 0.0) {
        double sq = 0.0;
        for (const auto& g : grads)
            for (double v : g.data()) sq += v * v;
        double norm = std::sqrt(sq);
        if (norm > config.grad_clip) clip_scale = config.grad_clip / norm;
    }

    state.step += 1;
    double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

    size_t slot = 0;
    params.visit([&](const std::string& name, Tensor& theta) {
        const Tensor& grad = grads[slot];
        if (!grad.same_shape(theta))
            throw ContractError("adam_step: gradient shape " + shape_str(grad.shape()) +
                                " does not match parameter '" + name + "' " +
                                shape_str(theta.shape()));
        auto g = grad.data();
        auto m = state.m[slot].data();
        auto v = state.v[slot].data();
        auto t = theta.data();
        for (size_t i = 0; i < t.size(); ++i) {
            double gi = g[i] * clip_scale;
            if (!std::isfinite(gi))
                throw NumericError("non-finite gradient in parameter '" + name + "'");
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * gi;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi;
            double m_hat = m[i] / bc1;
            double v_hat = v[i] / bc2;
            t[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
        }
        ++slot;
    });
}

ag::MaskedCrossEntropy mlm_loss(ag::Var logits, const IntTensor& labels) {
    auto ce = ag::cross_entropy_masked(std::move(logits), labels, kIgnoreLabel);
    if (ce.count == 0)
        throw ContractError("mlm_loss: batch has no masked positions");
    return ce;
}

namespace detail {

ModelParams clone_params(ModelParams& params) {
    ModelParams copy = params;
    copy.visit([](const std::string&, Tensor& t) { t = t.clone(); });
    return copy;
}

std::pair<std::string, size_t> parse_metric(const std::string& name) {
    auto at = name.find('@');
    std::string base = name.substr(0, at);
    if (at == std::string::npos || (base != "NDCG" && base != "HR"))
        throw ParamError("unknown selection metric '" + name +
                         "' (expected HR@K or NDCG@K)");
    size_t k = 0;
    try {
        k = std::stoul(name.substr(at + 1));
    } catch (...) {
        throw ParamError("bad K in selection metric '" + name + "'");
    }
    if (k < 1) throw ParamError("bad K in selection metric '" + name + "'");
    return {base, k};
}

TrainResult run_masked_training(const ModelConfig& model_config, ModelParams init,
                                const SplitDataset& dataset,
                                const TrainConfig& config, double rho,
                                const BatchLossFn& batch_loss, std::ostream* log) {
    model_config.validate();
    config.validate();
    if (dataset.user_count() == 0) throw ContractError("training needs >= 1 user");
    if (dataset.vocab_size != model_config.vocab_size ||
        dataset.max_len != model_config.max_len)
        throw ConfigError("dataset (vocab " + std::to_string(dataset.vocab_size) +
                          ", n " + std::to_string(dataset.max_len) +
                          ") does not match the model config");
    auto [metric_base, metric_k] = parse_metric(config.selection_metric);

    ModelParams params = std::move(init);
    AdamState adam = make_adam_state(params);

    TrainResult result;
    result.best_params = clone_params(params);
    result.best_metric = -1.0;
    size_t stale_epochs = 0;
    size_t users = dataset.user_count();

    if (log) *log << "epoch,step,loss,metric\n";

    for (size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::vector<size_t> order(users);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(Rng::derive_seed(config.seed, rng_stream::shuffle, epoch));
        for (size_t i = users - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);

        double epoch_loss_sum = 0.0;
        size_t epoch_mask_count = 0;
        size_t step = 0;
        for (size_t start = 0; start < users; start += config.batch_size) {
            ++step;
            size_t stop = std::min(users, start + config.batch_size);
            std::span<const size_t> chunk(order.data() + start, stop - start);
            MaskedBatch batch =
                make_masked_batch(dataset, chunk, rho, config.seed, epoch);

            ag::Tape tape;
            ModelVars vars = bind_params(tape, params);
            Rng dropout_rng(
                Rng::derive_seed(config.seed, rng_stream::dropout, epoch, step));
            auto logits = forward(tape, vars, model_config, batch.inputs, true,
                                  &dropout_rng);
            auto [loss, mask_count] = batch_loss(tape, logits, batch);
            double loss_value = loss->value.item();
            if (!std::isfinite(loss_value))
                throw NumericError("loss is not finite at epoch " +
                                   std::to_string(epoch) + " step " +
                                   std::to_string(step));
            tape.backward(loss);

            std::vector<Tensor> grads;
            vars.visit([&](const std::string&, ag::Var& v) {
                grads.push_back(tape.gradient(v));
            });
            adam_step(params, grads, adam, config);

            epoch_loss_sum += loss_value * static_cast<double>(mask_count);
            epoch_mask_count += mask_count;
            if (log)
                *log << epoch << "," << step << "," << loss_value << ",\n";
        }

        RankingReport report = evaluate(model_config, params, dataset,
                                        Split::validation, {metric_k});
        double metric = metric_from_report(report, config.selection_metric);
        double epoch_loss =
            epoch_mask_count ? epoch_loss_sum / static_cast<double>(epoch_mask_count)
                             : 0.0;
        result.history.push_back({epoch, epoch_loss, metric});
        if (log)
            *log << epoch << "," << step << "," << epoch_loss << "," << metric << "\n";

        if (metric > result.best_metric) {
            result.best_metric = metric;
            result.best_epoch = epoch;
            result.best_params = clone_params(params);
            stale_epochs = 0;
        } else {
            ++stale_epochs;
            if (stale_epochs >= config.patience) break;
        }
    }
    return result;
}

}  // namespace detail

TrainResult train(const ModelConfig& model_config, ModelParams init,
                  const SplitDataset& dataset, const TrainConfig& config,
                  std::ostream* log) {
    return detail::run_masked_training(
        model_config, std::move(init), dataset, config, config.rho,
        [](ag::Tape&, ag::Var logits, const MaskedBatch& batch)
            -> std::pair<ag::Var, size_t> {
            auto ce = mlm_loss(std::move(logits), batch.labels);
            return {ce.loss, ce.count};
        },
        log);
}

}  // namespace srkd
