// Synthetic data generators shared by the unit and acceptance suites.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "srkd/corpus.hpp"
#include "srkd/rng.hpp"

namespace synth {

// First-order Markov browsing: from item i the next item is
//   (i + 1) % m     with p = 0.5
//   (i * 2 + 3) % m with p = 0.3
//   uniform         with p = 0.2
// which gives a teacher plenty of conditional structure to distill.
inline std::vector<srkd::Interaction> markov_interactions(size_t users, size_t items,
                                                          size_t min_len,
                                                          size_t max_len,
                                                          uint64_t seed) {
    srkd::Rng rng(srkd::Rng::derive_seed(seed, srkd::rng_stream::synthetic));
    std::vector<srkd::Interaction> out;
    for (size_t u = 0; u < users; ++u) {
        size_t len = min_len + rng.next_below(max_len - min_len + 1);
        size_t current = rng.next_below(items);
        for (size_t t = 0; t < len; ++t) {
            out.push_back({"u" + std::to_string(u), "it" + std::to_string(current),
                           static_cast<int64_t>(t)});
            double roll = rng.next_double();
            if (roll < 0.5)
                current = (current + 1) % items;
            else if (roll < 0.8)
                current = (current * 2 + 3) % items;
            else
                current = rng.next_below(items);
        }
    }
    return out;
}

inline void write_tsv(const std::vector<srkd::Interaction>& interactions,
                      const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    for (const auto& r : interactions)
        f << r.user << "\t" << r.item << "\t" << r.timestamp << "\n";
}

// Hand-built split dataset from full per-user token sequences (each >= 3
// long; last item becomes test, second-to-last val).
inline srkd::SplitDataset toy_dataset(
    const std::vector<std::vector<int32_t>>& sequences, size_t max_len,
    size_t vocab_size) {
    srkd::SplitDataset ds;
    ds.max_len = max_len;
    ds.vocab_size = vocab_size;
    for (const auto& seq : sequences) {
        size_t prefix = seq.size() - 2;
        std::vector<int32_t> view(max_len, srkd::kPadToken);
        size_t keep = std::min(prefix, max_len);
        for (size_t i = 0; i < keep; ++i)
            view[max_len - keep + i] = seq[prefix - keep + i];
        ds.user_ids.push_back("u" + std::to_string(ds.train.size()));
        ds.train.push_back(std::move(view));
        ds.val_target.push_back(seq[prefix]);
        ds.test_target.push_back(seq[prefix + 1]);
    }
    return ds;
}

// Deterministic successor cycles: user u walks start_u, start_u+1, ... mod
// items. Any visible neighbor pins a masked token exactly, so a model can
// drive the cloze loss toward zero (overfit smoke tests).
inline srkd::SplitDataset cycle_dataset(size_t users, size_t items, size_t seq_len,
                                        size_t max_len, uint64_t seed) {
    srkd::Rng rng(srkd::Rng::derive_seed(seed, srkd::rng_stream::synthetic, 2));
    std::vector<std::vector<int32_t>> seqs(users);
    for (auto& s : seqs) {
        size_t start = rng.next_below(items);
        s.resize(seq_len);
        for (size_t j = 0; j < seq_len; ++j)
            s[j] = srkd::kFirstItemToken + static_cast<int32_t>((start + j) % items);
    }
    return toy_dataset(seqs, max_len, items + 2);
}

// Random real-item token sequences (uniform), handy for smoke tests.
inline srkd::SplitDataset random_dataset(size_t users, size_t items, size_t seq_len,
                                         size_t max_len, uint64_t seed) {
    srkd::Rng rng(srkd::Rng::derive_seed(seed, srkd::rng_stream::synthetic, 1));
    std::vector<std::vector<int32_t>> seqs(users);
    for (auto& s : seqs) {
        s.resize(seq_len);
        for (auto& t : s)
            t = srkd::kFirstItemToken + static_cast<int32_t>(rng.next_below(items));
    }
    return toy_dataset(seqs, max_len, items + 2);
}

}  // namespace synth
