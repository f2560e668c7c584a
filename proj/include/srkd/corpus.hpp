#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "srkd/rng.hpp"

namespace srkd {

// One implicit-feedback event. Ratings/review flags in the source files are
// dropped at parse time; ids are kept as normalized strings and never
// reinterpreted numerically.
struct Interaction {
    std::string user;
    std::string item;
    int64_t timestamp = 0;
};

// Supported input formats:
//   ml-1m  user::item::rating::timestamp
//   tsv    user<TAB>item<TAB>timestamp
std::vector<Interaction> load_interactions(const std::string& path,
                                           const std::string& format);

// Keep only users and items with >= min_count interactions, iterated to a
// fixpoint (dropping a sparse item can push a user under the threshold and
// vice versa).
std::vector<Interaction> filter_min_count(std::vector<Interaction> interactions,
                                          size_t min_count = 5);

struct UserSequence {
    std::string user;
    std::vector<std::string> items;  // chronological, ties keep input order
};

std::vector<UserSequence> build_sequences(const std::vector<Interaction>& interactions);

constexpr int32_t kPadToken = 0;
constexpr int32_t kMaskToken = 1;
constexpr int32_t kFirstItemToken = 2;

// Seeded random bijection item id <-> token id. Tokens 0 and 1 are reserved
// for PAD and MASK; real items occupy [2, vocab_size). The assignment is a
// Fisher-Yates shuffle of the token range driven by Rng(derive_seed(seed,
// rng_stream::token_map)) over the lexicographically sorted item set, so it
// is fully determined by (seed, item set).
class TokenMap {
public:
    static TokenMap make(std::vector<std::string> items, uint64_t seed);

    uint64_t seed() const { return seed_; }
    size_t item_count() const { return item_of_token_.size(); }
    size_t vocab_size() const { return item_of_token_.size() + 2; }

    std::optional<int32_t> lookup(const std::string& item) const;
    int32_t token(const std::string& item) const;  // DataError when unknown
    const std::string& item(int32_t token) const;  // real-item tokens only

    void save(const std::string& path) const;
    static TokenMap load(const std::string& path);

private:
    uint64_t seed_ = 0;
    std::vector<std::string> item_of_token_;  // index = token - 2
    std::unordered_map<std::string, int32_t> token_of_item_;
};

// Per-user leave-one-out split over token ids. train views are exactly
// max_len long: the most recent items of the train prefix, left-padded with
// PAD. Targets are never truncated away.
struct SplitDataset {
    size_t max_len = 0;
    size_t vocab_size = 0;
    uint64_t seed = 0;
    std::string format;  // provenance of the raw input
    std::vector<std::string> user_ids;
    std::vector<std::vector<int32_t>> train;  // [users][max_len]
    std::vector<int32_t> val_target;
    std::vector<int32_t> test_target;
    size_t dropped_users = 0;  // users with < 3 interactions

    size_t user_count() const { return train.size(); }
    // Real (non-PAD) history of one user's train view.
    std::vector<int32_t> history(size_t user_index, bool include_val) const;
};

SplitDataset split_leave_one_out(const std::vector<UserSequence>& sequences,
                                 size_t max_len, const TokenMap& token_map);

// Single-file binary artifact: magic "SRDS1", u32-le JSON header length,
// UTF-8 JSON header, then per user (max_len train tokens, val, test) as
//
// 32-bit little-endian integers.
void save_dataset(const SplitDataset& dataset, const std::string& path);
SplitDataset load_dataset(const std::string& path);

struct PrepareOptions {
    std::string input_path;
    std::string format = "ml-1m";
    size_t min_count = 5;
    size_t max_len = 50;
    uint64_t seed = 7;
};

struct Prepared {
    SplitDataset dataset;
    TokenMap token_map;
};

// load -> filter -> order -> map -> split, the full preprocessing pipeline.
Prepared prepare_dataset(const PrepareOptions& options);

}  // namespace srkd
