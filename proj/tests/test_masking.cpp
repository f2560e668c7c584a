#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "srkd/error.hpp"
#include "srkd/masking.hpp"
#include "synthetic.hpp"

using namespace srkd;

TEST_CASE("mask_sequence hits the rho and 80/10/10 statistics") {
    const size_t n = 50;
    const size_t items = 1000;
    const size_t vocab = items + 2;
    const double rho = 0.55;
    const size_t trials = 10000;

    std::vector<int32_t> tokens(n);
    Rng init(5);
    for (auto& t : tokens)
        t = kFirstItemToken + static_cast<int32_t>(init.next_below(items));

    size_t positions = 0, selected = 0, masked = 0, kept = 0, randomized = 0;
    for (size_t trial = 0; trial < trials; ++trial) {
        Rng rng(Rng::derive_seed(1234, rng_stream::masking, trial));
        auto [inputs, labels] = mask_sequence(tokens, rho, rng, vocab);
        positions += n;
        for (size_t i = 0; i < n; ++i) {
            if (labels[i] == kIgnoreLabel) {
                CHECK(inputs[i] == tokens[i]);  // untouched positions
                continue;
            }
            CHECK(labels[i] == tokens[i]);  // label is the original token
            ++selected;
            if (inputs[i] == kMaskToken)
                ++masked;
            else if (inputs[i] == labels[i])
                ++kept;
            else
                ++randomized;
        }
    }

    double select_rate = static_cast<double>(selected) / static_cast<double>(positions);
    CHECK(select_rate == doctest::Approx(rho).epsilon(0.02 / rho));
    double mask_share = static_cast<double>(masked) / static_cast<double>(selected);
    double random_share = static_cast<double>(randomized) / static_cast<double>(selected);
    double keep_share = static_cast<double>(kept) / static_cast<double>(selected);
    CHECK(std::abs(mask_share - 0.80) < 0.02);
    CHECK(std::abs(random_share - 0.10) < 0.02);
    CHECK(std::abs(keep_share - 0.10) < 0.02);
}

TEST_CASE("mask_sequence determinism and contracts") {
    std::vector<int32_t> tokens = {kPadToken, kPadToken, 5, 9, 3, 7};

    Rng r1(42), r2(42);
    auto a = mask_sequence(tokens, 0.4, r1, 20);
    auto b = mask_sequence(tokens, 0.4, r2, 20);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);

    // PAD positions never selected, >= 1 position always selected
    for (uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        auto [inputs, labels] = mask_sequence(tokens, 0.05, rng, 20);
        CHECK(labels[0] == kIgnoreLabel);
        CHECK(labels[1] == kIgnoreLabel);
        CHECK(inputs[0] == kPadToken);
        CHECK(inputs[1] == kPadToken);
        size_t count = 0;
        for (int32_t l : labels)
            if (l != kIgnoreLabel) ++count;
        CHECK(count >= 1);
        for (size_t i = 0; i < inputs.size(); ++i)
            if (labels[i] != kIgnoreLabel && inputs[i] != kMaskToken)
                CHECK(inputs[i] >= kFirstItemToken);  // random draws avoid PAD/MASK
    }

    Rng rng(1);
    std::vector<int32_t> all_pad(4, kPadToken);
    CHECK_THROWS_AS(mask_sequence(all_pad, 0.5, rng, 20), ContractError);
    CHECK_THROWS_AS(mask_sequence(tokens, 0.0, rng, 20), ParamError);
    CHECK_THROWS_AS(mask_sequence(tokens, 1.0, rng, 20), ParamError);
}

TEST_CASE("test_time_mask appends MASK at the final slot") {
    std::vector<int32_t> abc = {5, 6, 7};
    auto padded = test_time_mask(abc, 5);
    CHECK(padded == std::vector<int32_t>{kPadToken, 5, 6, 7, kMaskToken});

    std::vector<int32_t> fifty(50);
    for (size_t i = 0; i < 50; ++i) fifty[i] = static_cast<int32_t>(i + 2);
    auto trimmed = test_time_mask(fifty, 50);
    REQUIRE(trimmed.size() == 50);
    CHECK(trimmed[0] == fifty[1]);  // oldest item dropped
    CHECK(trimmed[48] == fifty[49]);
    CHECK(trimmed[49] == kMaskToken);

    std::vector<int32_t> one = {9};
    CHECK(test_time_mask(one, 3) == std::vector<int32_t>{kPadToken, 9, kMaskToken});

    // MASK appears at n-1 and nowhere else
    for (size_t len = 1; len < 8; ++len) {
        std::vector<int32_t> history(len, 4);
        auto out = test_time_mask(history, 6);
        for (size_t i = 0; i + 1 < out.size(); ++i) CHECK(out[i] != kMaskToken);
        CHECK(out.back() == kMaskToken);
    }

    std::vector<int32_t> empty;
    CHECK_THROWS_AS(test_time_mask(empty, 5), ContractError);
}

TEST_CASE("make_masked_batch derives per-(epoch, user) streams") {
    SplitDataset ds = synth::random_dataset(120, 30, 8, 10, 77);
    std::vector<size_t> order(ds.user_count());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    MaskedBatch e1 = make_masked_batch(ds, order, 0.3, 9, 1);
    MaskedBatch e1_again = make_masked_batch(ds, order, 0.3, 9, 1);
    MaskedBatch e2 = make_masked_batch(ds, order, 0.3, 9, 2);

    // byte-identical on repeat
    for (size_t i = 0; i < e1.inputs.numel(); ++i) {
        CHECK(e1.inputs.data()[i] == e1_again.inputs.data()[i]);
        CHECK(e1.labels.data()[i] == e1_again.labels.data()[i]);
    }

    // re-masking: most users get different masked positions across epochs
    size_t differing_users = 0;
    for (size_t u = 0; u < ds.user_count(); ++u) {
        bool diff = false;
        for (size_t i = 0; i < ds.max_len; ++i)
            if ((e1.labels(u, i) == kIgnoreLabel) != (e2.labels(u, i) == kIgnoreLabel))
                diff = true;
        if (diff) ++differing_users;
    }
    CHECK(differing_users > ds.user_count() / 2);

    // batch order does not change a user's mask
    std::vector<size_t> subset = {17, 3, 42};
    MaskedBatch small = make_masked_batch(ds, subset, 0.3, 9, 1);
    for (size_t b = 0; b < subset.size(); ++b)
        for (size_t i = 0; i < ds.max_len; ++i) {
            CHECK(small.inputs(b, i) == e1.inputs(subset[b], i));
            CHECK(small.labels(b, i) == e1.labels(subset[b], i));
        }
}
