#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "srkd/corpus.hpp"
#include "srkd/rng.hpp"
#include "srkd/tensor.hpp"

namespace srkd {

constexpr int32_t kIgnoreLabel = -1;

// Cloze-style training batch. labels carry the original token at masked
// positions and kIgnoreLabel everywhere else; PAD positions are never
// selected.
struct MaskedBatch {
    IntTensor inputs;  // [B, n]
    IntTensor labels;  // [B, n]
};

// Select each non-PAD position independently with probability rho and apply
// the 80/10/10 rule: MASK, a uniformly random real-item token (PAD and MASK
// excluded, accidental identity allowed), or the original token. When the
// Bernoulli pass selects nothing, one non-PAD position is force-selected so
// the loss denominator is never empty.
//
// Draw order per position: one selection draw, then one rule draw for
// selected positions (plus one token draw on the random-replacement branch).
std::pair<std::vector<int32_t>, std::vector<int32_t>> mask_sequence(
    std::span<const int32_t> tokens, double rho, Rng& rng, size_t vocab_size);

// Inference-time query: the last n-1 history tokens (left-padded when
// shorter) with MASK appended at position n-1.
std::vector<int32_t> test_time_mask(std::span<const int32_t> tokens, size_t n);

// Masks the given users of a dataset with per-(epoch, user) substreams, so
// positions re-randomize every epoch and any batch order gives identical
// masks.
MaskedBatch make_masked_batch(const SplitDataset& dataset,
                              std::span<const size_t> user_indices, double rho,
                              uint64_t seed, size_t epoch);

}  // namespace srkd
