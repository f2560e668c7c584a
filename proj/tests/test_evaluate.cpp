#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "srkd/evaluate.hpp"
#include "synthetic.hpp"

using namespace srkd;

namespace {

// Brute-force rank oracle: materialize the candidate list, full-sort it by
// (score desc, token asc), scan for the target.
size_t rank_oracle(std::span<const double> scores, int32_t target, size_t vocab) {
    std::vector<int32_t> order;
    for (size_t c = kFirstItemToken; c < vocab; ++c)
        order.push_back(static_cast<int32_t>(c));
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        double sa = scores[static_cast<size_t>(a)];
        double sb = scores[static_cast<size_t>(b)];
        if (sa != sb) return sa > sb;
        return a < b;
    });
    for (size_t i = 0; i < order.size(); ++i)
        if (order[i] == target) return i + 1;
    return 0;
}

ModelConfig bias_only_config(size_t vocab, size_t n) {
    ModelConfig c;
    c.num_layers = 1;
    c.hidden_dim = 4;
    c.num_heads = 1;
    c.max_len = n;
    c.vocab_size = vocab;
    c.dropout_rate = 0.0;
    return c;
}

// Model whose logits equal `bias` at every position: all weights zeroed.
ModelParams bias_only_model(const ModelConfig& config, const std::vector<double>& bias) {
    ModelParams p = init_params(config, 1, InitMode::scratch_all);
    p.visit([](const std::string&, Tensor& t) {
        for (double& v : t.data()) v = 0.0;
    });
    for (size_t i = 0; i < bias.size(); ++i) p.output_bias.data()[i] = bias[i];
    return p;
}

}  // namespace

TEST_CASE("rank_of_target") {
    std::vector<double> scores = {9.0, 9.0, 0.1, 0.9, 0.5, 0.2};  // vocab 6

    // unique max -> rank 1 (PAD/MASK scores are ignored entirely)
    CHECK(rank_of_target(scores, 3, 6) == 1);
    CHECK(rank_of_target(scores, 4, 6) == 2);
    CHECK(rank_of_target(scores, 2, 6) == 4);

    // all-equal scores: the smallest token id wins the tie
    std::vector<double> flat(6, 1.0);
    CHECK(rank_of_target(flat, 2, 6) == 1);
    CHECK(rank_of_target(flat, 3, 6) == 2);
    CHECK(rank_of_target(flat, 5, 6) == 4);

    // random 20-item vectors match the brute-force full-sort oracle
    for (uint64_t seed : {5u, 6u, 7u, 8u, 9u}) {
        Rng rng(seed);
        std::vector<double> v(22);
        for (double& s : v) s = rng.next_below(8);  // coarse values force ties
        for (int32_t target = 2; target < 22; ++target)
            CHECK(rank_of_target(v, target, 22) == rank_oracle(v, target, 22));
    }

    CHECK_THROWS_AS(rank_of_target(scores, 0, 6), ContractError);
    CHECK_THROWS_AS(rank_of_target(scores, 1, 6), ContractError);
    CHECK_THROWS_AS(rank_of_target(scores, 6, 6), ContractError);
}

TEST_CASE("hr and ndcg anchors") {
    CHECK(hr_at_k(1, 10) == 1.0);
    CHECK(ndcg_at_k(1, 10) == 1.0);
    CHECK(ndcg_at_k(3, 10) == doctest::Approx(0.5).epsilon(1e-15));  // 1/log2(4)
    CHECK(hr_at_k(6, 5) == 0.0);
    CHECK(ndcg_at_k(6, 5) == 0.0);
    CHECK(hr_at_k(5, 5) == 1.0);
    CHECK(ndcg_at_k(2, 10) ==
          doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
    CHECK_THROWS_AS(hr_at_k(1, 0), ParamError);
    CHECK_THROWS_AS(ndcg_at_k(1, 0), ParamError);

    // 0 <= NDCG@K <= HR@K <= 1, both non-decreasing in K
    for (size_t rank = 1; rank <= 20; ++rank) {
        double prev_hr = 0.0, prev_ndcg = 0.0;
        for (size_t k = 1; k <= 20; ++k) {
            double hr = hr_at_k(rank, k);
            double ndcg = ndcg_at_k(rank, k);
            CHECK(ndcg <= hr);
            CHECK(hr <= 1.0);
            CHECK(ndcg >= 0.0);
            CHECK(hr >= prev_hr);
            CHECK(ndcg >= prev_ndcg);
            prev_hr = hr;
            prev_ndcg = ndcg;
        }
    }
}

TEST_CASE("top_k_tokens agrees with rank_of_target ordering") {
    Rng rng(15);
    std::vector<double> scores(30);
    for (double& s : scores) s = rng.next_below(6);
    auto top = top_k_tokens(scores, 28, 30);
    REQUIRE(top.size() == 28);
    for (size_t i = 0; i < top.size(); ++i)
        CHECK(rank_of_target(scores, top[i], 30) == i + 1);

    // metrics are invariant under strictly monotone transforms of the scores
    std::vector<double> warped(scores);
    for (double& s : warped) s = std::exp(0.5 * s) + 3.0;
    for (int32_t t = 2; t < 30; ++t)
        CHECK(rank_of_target(scores, t, 30) == rank_of_target(warped, t, 30));
}

TEST_CASE("evaluate: crafted models give hand-computable reports") {
    // all users share the same held-out items so a one-hot bias nails them
    std::vector<std::vector<int32_t>> seqs = {
        {2, 3, 4, 5}, {3, 2, 4, 5}, {6, 2, 4, 5}};
    SplitDataset ds = synth::toy_dataset(seqs, 6, 8);
    ModelConfig config = bias_only_config(8, 6);

    std::vector<double> one_hot(8, 0.0);
    one_hot[5] = 10.0;  // the shared test target
    ModelParams sharp = bias_only_model(config, one_hot);
    RankingReport perfect = evaluate(config, sharp, ds, Split::test, {5, 10});
    CHECK(perfect.metrics.at("HR@5") == 1.0);
    CHECK(perfect.metrics.at("NDCG@5") == 1.0);
    CHECK(perfect.users == 3);
    CHECK(perfect.split == "test");

    // fixed score vector, hand-computed ranks on the val split
    // scores: token2=0.9 token3=0.8 token4=0.7 token5=0.1 token6=0.3 token7=0.2
    std::vector<double> bias = {0, 0, 0.9, 0.8, 0.7, 0.1, 0.3, 0.2};
    ModelParams fixed = bias_only_model(config, bias);
    // val targets are all token 4 -> rank 3 everywhere
    RankingReport val = evaluate(config, fixed, ds, Split::validation, {5, 10});
    CHECK(val.split == "val");
    CHECK(val.metrics.at("HR@5") == 1.0);
    CHECK(val.metrics.at("NDCG@5") == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(val.metrics.at("NDCG@10") == doctest::Approx(0.5).epsilon(1e-12));

    // report json carries the pinned keys
    auto j = nlohmann::json::parse(val.to_json());
    CHECK(j["split"] == "val");
    CHECK(j["Ks"].size() == 2);
    CHECK(j["users"] == 3);
    CHECK(j["metrics"].contains("HR@10"));
    CHECK(j.contains("config_digest"));

    // deterministic on repeat
    RankingReport again = evaluate(config, fixed, ds, Split::validation, {5, 10});
    CHECK(again.metrics == val.metrics);
}

TEST_CASE("evaluate consistency on a trained-free random model") {
    SplitDataset ds = synth::random_dataset(300, 40, 6, 8, 51);
    ModelConfig config = bias_only_config(ds.vocab_size, ds.max_len);
    config.hidden_dim = 8;
    config.num_heads = 2;
    ModelParams params = init_params(config, 77, InitMode::scratch_all);
    RankingReport report = evaluate(config, params, ds, Split::test, {5, 10});

    // aggregate invariants
    CHECK(report.metrics.at("NDCG@5") <= report.metrics.at("HR@5"));
    CHECK(report.metrics.at("NDCG@10") <= report.metrics.at("HR@10"));
    CHECK(report.metrics.at("HR@5") <= report.metrics.at("HR@10"));
    CHECK(report.metrics.at("HR@10") <= 1.0);
}

TEST_CASE("experiment grids: stability stds and sweep consistency") {
    auto interactions = synth::markov_interactions(40, 12, 5, 10, 7);

    ExperimentSpec spec;
    spec.interactions = interactions;
    spec.min_count = 2;
    spec.model = bias_only_config(0, 8);  // vocab filled per mapping seed
    spec.model.hidden_dim = 8;
    spec.model.num_heads = 2;
    spec.model.max_len = 8;
    spec.train.learning_rate = 2e-3;
    spec.train.batch_size = 16;
    spec.train.max_epochs = 2;
    spec.train.patience = 5;
    spec.train.rho = 0.4;
    spec.train.seed = 3;

    // identical seeds -> std exactly zero
    ExperimentGrid same = stability_experiment(spec, {9, 9});
    for (const auto& [name, sd] : same.stddev) {
        INFO(name);
        CHECK(sd == 0.0);
    }

    // two distinct seeds -> std equals the hand-computed population formula
    ExperimentGrid two = stability_experiment(spec, {9, 10});
    REQUIRE(two.cells.size() == 2);
    for (const auto& [name, sd] : two.stddev) {
        double a = two.cells[0].metrics.at(name);
        double b = two.cells[1].metrics.at(name);
        double mean = 0.5 * (a + b);
        double expect = std::sqrt(0.5 * ((a - mean) * (a - mean) +
                                         (b - mean) * (b - mean)));
        CHECK(sd == doctest::Approx(expect).epsilon(1e-12));
        CHECK(two.mean.at(name) == doctest::Approx(mean).epsilon(1e-12));
    }

    // grid json structure
    auto j = nlohmann::json::parse(two.to_json());
    CHECK(j["axis"] == "mapping_seed");
    CHECK(j["values"].size() == 2);
    CHECK(j["cells"].size() == 2);
    CHECK(j.contains("mean"));
    CHECK(j.contains("std"));
}

TEST_CASE("sweep: single-value sweep equals a direct run; endpoints line up") {
    // build a small prepared dataset once
    auto interactions = synth::markov_interactions(30, 10, 5, 9, 21);
    auto filtered = filter_min_count(interactions, 2);
    auto sequences = build_sequences(filtered);
    std::vector<std::string> items;
    for (const auto& r : filtered) items.push_back(r.item);
    TokenMap map = TokenMap::make(items, 4);
    SplitDataset ds = split_leave_one_out(sequences, 8, map);

    ExperimentSpec spec;
    spec.dataset = ds;
    spec.has_dataset = true;
    spec.model = bias_only_config(ds.vocab_size, ds.max_len);
    spec.model.hidden_dim = 8;
    spec.model.num_heads = 2;
    spec.train.learning_rate = 2e-3;
    spec.train.batch_size = 16;
    spec.train.max_epochs = 2;
    spec.train.patience = 5;
    spec.train.seed = 5;

    // rho sweep with one value == the dedicated run
    ExperimentGrid grid = sweep("rho", {"0.4"}, spec);
    REQUIRE(grid.cells.size() == 1);
    TrainConfig direct = spec.train;
    direct.rho = 0.4;
    TrainResult run = train(spec.model, init_params(spec.model, 5, InitMode::scratch_all),
                            ds, direct);
    RankingReport report =
        evaluate(spec.model, run.best_params, ds, Split::validation, {5, 10});
    for (const auto& [name, value] : report.metrics)
        CHECK(grid.cells[0].metrics.at(name) == value);

    // unknown axis / missing inputs are parameter errors
    CHECK_THROWS_AS(sweep("banana", {"1"}, spec), ParamError);
    CHECK_THROWS_AS(sweep("alpha", {"0.5"}, spec), ParamError);  // no teacher
    CHECK_THROWS_AS(sweep("rho", {}, spec), ParamError);
}
