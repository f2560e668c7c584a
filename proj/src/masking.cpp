#include "srkd/masking.hpp"

#include "srkd/error.hpp"

namespace srkd {

namespace {

void apply_rule(std::span<const int32_t> tokens, size_t pos, double rule_draw,
                Rng& rng, size_t vocab_size, std::vector<int32_t>& inputs,
                std::vector<int32_t>& labels) {
    labels[pos] = tokens[pos];
    if (rule_draw < 0.8) {
        inputs[pos] = kMaskToken;
    } else if (rule_draw < 0.9) {
        inputs[pos] = kFirstItemToken +
                      static_cast<int32_t>(rng.next_below(vocab_size - kFirstItemToken));
    }  // else: keep the original token
}

}  // namespace

std::pair<std::vector<int32_t>, std::vector<int32_t>> mask_sequence(
    std::span<const int32_t> tokens, double rho, Rng& rng, size_t vocab_size) {
    if (!(rho > 0.0 && rho < 1.0))
        throw ParamError("mask ratio must lie in (0, 1), got " + std::to_string(rho));
    if (vocab_size <= static_cast<size_t>(kFirstItemToken))
        throw ParamError("vocab too small for masking");

    std::vector<int32_t> inputs(tokens.begin(), tokens.end());
    std::vector<int32_t> labels(tokens.size(), kIgnoreLabel);

    std::vector<size_t> non_pad;
    for (size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] != kPadToken) non_pad.push_back(i);
    if (non_pad.empty())
        throw ContractError("mask_sequence: all-PAD sequence has nothing to mask");

    size_t selected = 0;
    for (size_t i : non_pad) {
        if (rng.next_double() < rho) {
            apply_rule(tokens, i, rng.next_double(), rng, vocab_size, inputs, labels);
            ++selected;
        }
    }
    if (selected == 0) {
        size_t i = non_pad[rng.next_below(non_pad.size())];
        apply_rule(tokens, i, rng.next_double(), rng, vocab_size, inputs, labels);
    }
    return {std::move(inputs), std::move(labels)};
}

std::vector<int32_t> test_time_mask(std::span<const int32_t> tokens, size_t n) {
    if (tokens.empty())
        throw ContractError("test_time_mask: empty history");
    if (n < 2) throw ParamError("test_time_mask: n must be >= 2");
    std::vector<int32_t> out(n, kPadToken);
    size_t keep = std::min(tokens.size(), n - 1);
    for (size_t i = 0; i < keep; ++i)
        out[n - 1 - keep + i] = tokens[tokens.size() - keep + i];
    out[n - 1] = kMaskToken;
    return out;
}

MaskedBatch make_masked_batch(const SplitDataset& dataset,
                              std::span<const size_t> user_indices, double rho,
                              uint64_t seed, size_t epoch) {
    size_t batch = user_indices.size();
    size_t n = dataset.max_len;
    MaskedBatch out{IntTensor(Shape{batch, n}), IntTensor(Shape{batch, n})};
    for (size_t b = 0; b < batch; ++b) {
        size_t u = user_indices[b];
        Rng rng(Rng::derive_seed(seed, rng_stream::masking, epoch, u));
        auto [inputs, labels] =
            mask_sequence(dataset.train.at(u), rho, rng, dataset.vocab_size);
        for (size_t i = 0; i < n; ++i) {
            out.inputs(b, i) = inputs[i];
            out.labels(b, i) = labels[i];
        }
    }
    return out;
}

}  // namespace srkd
