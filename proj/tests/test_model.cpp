#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "reference_model.hpp"
#include "srkd/model.hpp"
#include "srkd/train.hpp"

using namespace srkd;
namespace ag = srkd::ag;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_config() {
    ModelConfig c;
    c.num_layers = 1;
    c.hidden_dim = 8;
    c.num_heads = 2;
    c.ffn_dim = 0;
    c.max_len = 6;
    c.vocab_size = 12;
    c.dropout_rate = 0.0;
    return c;
}

IntTensor toy_inputs() {
    return IntTensor(Shape{2, 6}, {0, 0, 4, 7, 2, 11, 0, 3, 9, 9, 5, 6});
}

std::string temp_file(const std::string& name) {
    return (fs::temp_directory_path() /
            ("srkd_model_" + std::to_string(::getpid()) + "_" + name))
        .string();
}

}  // namespace

TEST_CASE("embed sums token, position and segment embeddings") {
    ModelConfig config = toy_config();
    ModelParams zero = init_params(config, 1, InitMode::scratch_all);
    zero.visit([](const std::string&, Tensor& t) {
        for (double& v : t.data()) v = 0.0;
    });

    ag::Tape tape;
    ModelVars vars = bind_params(tape, zero);
    auto out = embed(tape, vars, config, toy_inputs(), false, nullptr);
    for (double v : out->value.data()) CHECK(v == 0.0);

    // single token at position 0: exactly E[tok] + P[0] + G
    ModelConfig one = config;
    one.max_len = 1;
    ModelParams one_params = init_params(one, 2, InitMode::scratch_all);
    ag::Tape t2;
    ModelVars v2 = bind_params(t2, one_params);
    IntTensor single(Shape{1, 1}, {7});
    auto emb = embed(t2, v2, one, single, false, nullptr);
    for (size_t j = 0; j < config.hidden_dim; ++j)
        CHECK(emb->value.data()[j] ==
              doctest::Approx(one_params.token_embedding(7, j) +
                              one_params.position_embedding(0, j) +
                              one_params.segment_embedding.data()[j])
                  .epsilon(1e-15));
    ModelParams params = init_params(config, 2, InitMode::scratch_all);

    // train-mode dropout: deterministic for a fixed seed, equals the
    // recorded-mask reconstruction
    ModelConfig droppy = config;
    droppy.dropout_rate = 0.5;
    ag::Tape t3;
    ModelVars v3 = bind_params(t3, params);
    Rng rng_a(91);
    auto masked_a = embed(t3, v3, droppy, toy_inputs(), true, &rng_a);
    ag::Tape t4;
    ModelVars v4 = bind_params(t4, params);
    Rng rng_b(91);
    auto plain = embed(t4, v4, config, toy_inputs(), false, nullptr);
    Tensor mask;
    {
        // regenerate the identical mask stream and rebuild by hand
        Rng rng_c(91);
        ag::Tape t5;
        auto probe = t5.leaf(Tensor(plain->value.shape()));
        ag::dropout(probe, 0.5, rng_c, true, &mask);
    }
    for (size_t i = 0; i < plain->value.numel(); ++i)
        CHECK(masked_a->value.data()[i] ==
              doctest::Approx(plain->value.data()[i] * mask.data()[i] / 0.5)
                  .epsilon(1e-15));

    IntTensor bad(Shape{1, 6}, {0, 0, 0, 0, 0, 12});
    ag::Tape t6;
    ModelVars v6 = bind_params(t6, params);
    CHECK_THROWS_AS(embed(t6, v6, config, bad, false, nullptr), DataError);
}

TEST_CASE("attention basics") {
    // n = 1: softmax over a single key is 1, output == V
    ag::Tape tape;
    Rng rng(3);
    Tensor q(Shape{1, 1, 4}), k(Shape{1, 1, 4}), v(Shape{1, 1, 4});
    for (auto t : {&q, &k, &v})
        for (double& x : t->data()) x = rng.next_normal();
    auto out = attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), nullptr);
    for (size_t j = 0; j < 4; ++j)
        CHECK(out->value.data()[j] == doctest::Approx(v.data()[j]).epsilon(1e-12));

    // identical K rows: uniform weights, output = mean of V rows
    Tensor q2(Shape{1, 2, 2}, {0.3, -0.7, 1.1, 0.2});
    Tensor k2(Shape{1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
    Tensor v2(Shape{1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    auto out2 = attention(tape.leaf(q2), tape.leaf(k2), tape.leaf(v2), nullptr);
    CHECK(out2->value(0, 0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(out2->value(0, 0, 1) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(out2->value(0, 1, 0) == doctest::Approx(2.0).epsilon(1e-12));

    // per-head layout [B, h, n, d_k]: each head slice behaves like its own
    // 3d attention call
    Rng r4(9);
    Tensor q4(Shape{2, 2, 3, 2}), k4(Shape{2, 2, 3, 2}), v4(Shape{2, 2, 3, 2});
    for (auto t : {&q4, &k4, &v4})
        for (double& x : t->data()) x = r4.next_normal();
    auto out4 = attention(tape.leaf(q4), tape.leaf(k4), tape.leaf(v4), nullptr);
    REQUIRE(out4->value.shape() == Shape{2, 2, 3, 2});
    for (size_t b = 0; b < 2; ++b)
        for (size_t h = 0; h < 2; ++h) {
            size_t off = (b * 2 + h) * 6;
            auto slice = [&](const Tensor& t) {
                return Tensor(Shape{1, 3, 2},
                              {t.data().begin() + off, t.data().begin() + off + 6});
            };
            auto head = attention(tape.leaf(slice(q4)), tape.leaf(slice(k4)),
                                  tape.leaf(slice(v4)), nullptr);
            for (size_t i = 0; i < 6; ++i)
                CHECK(out4->value.data()[off + i] ==
                      doctest::Approx(head->value.data()[i]).epsilon(1e-12));
        }

    // 2x2 hand case against a scalar-loop evaluation
    Tensor q3(Shape{1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor k3(Shape{1, 2, 2}, {0.2, -0.4, 0.9, 0.1});
    Tensor v3(Shape{1, 2, 2}, {1.0, -1.0, 2.0, 0.5});
    auto out3 = attention(tape.leaf(q3), tape.leaf(k3), tape.leaf(v3), nullptr);
    for (size_t i = 0; i < 2; ++i) {
        double s0 = (q3(0, i, 0) * k3(0, 0, 0) + q3(0, i, 1) * k3(0, 0, 1)) /
                    std::sqrt(2.0);
        double s1 = (q3(0, i, 0) * k3(0, 1, 0) + q3(0, i, 1) * k3(0, 1, 1)) /
                    std::sqrt(2.0);
        auto w = oracle::softmax_row({s0, s1}, 1.0);
        for (size_t j = 0; j < 2; ++j)
            CHECK(out3->value(0, i, j) ==
                  doctest::Approx(w[0] * v3(0, 0, j) + w[1] * v3(0, 1, j))
                      .epsilon(1e-12));
    }
}

TEST_CASE("forward with zero weights yields the output bias everywhere") {
    ModelConfig config = toy_config();
    ModelParams params = init_params(config, 1, InitMode::scratch_all);
    params.visit([](const std::string& name, Tensor& t) {
        if (name != "output_bias")
            for (double& v : t.data()) v = 0.0;
    });
    Rng rng(8);
    for (double& v : params.output_bias.data()) v = rng.next_normal();

    Tensor logits = forward_eval(config, params, toy_inputs());
    for (size_t b = 0; b < 2; ++b)
        for (size_t i = 0; i < 6; ++i)
            for (size_t t = 0; t < 12; ++t)
                CHECK(logits(b, i, t) == doctest::Approx(params.output_bias.data()[t])
                                             .epsilon(1e-12));
}

TEST_CASE("permuting the batch permutes the outputs") {
    ModelConfig config = toy_config();
    ModelParams params = init_params(config, 21, InitMode::scratch_all);
    IntTensor fwd(Shape{2, 6}, {0, 4, 7, 2, 11, 3, 0, 0, 9, 9, 5, 6});
    IntTensor rev(Shape{2, 6}, {0, 0, 9, 9, 5, 6, 0, 4, 7, 2, 11, 3});
    Tensor a = forward_eval(config, params, fwd);
    Tensor b = forward_eval(config, params, rev);
    size_t row = 6 * 12;
    for (size_t i = 0; i < row; ++i) {
        CHECK(a.data()[i] == b.data()[row + i]);
        CHECK(a.data()[row + i] == b.data()[i]);
    }
}

TEST_CASE("forward matches the straight-line scalar reference") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        ModelConfig config = toy_config();
        config.num_layers = 2;
        ModelParams params = init_params(config, seed, InitMode::scratch_all);
        // inflate weights so the check is not trivially near zero
        params.visit([&](const std::string&, Tensor& t) {
            for (double& v : t.data()) v *= 7.0;
        });
        IntTensor inputs = toy_inputs();
        Tensor got = forward_eval(config, params, inputs);
        auto want = oracle::reference_forward(config, params, inputs);
        REQUIRE(got.numel() == want.size());
        double worst = 0.0;
        for (size_t i = 0; i < want.size(); ++i)
            worst = std::max(worst,
                             std::abs(got.data()[i] - want[i]) /
                                 std::max(1.0, std::abs(want[i])));
        CHECK(worst < 1e-9);
    }

    // untied output head takes the same path
    ModelConfig untied = toy_config();
    untied.tie_output_to_embedding = false;
    ModelParams params = init_params(untied, 5, InitMode::scratch_all);
    Tensor got = forward_eval(untied, params, toy_inputs());
    auto want = oracle::reference_forward(untied, params, toy_inputs());
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want[i]).epsilon(1e-9));
}

TEST_CASE("PAD keys never influence non-PAD logits") {
    ModelConfig config = toy_config();
    ModelParams params = init_params(config, 31, InitMode::scratch_all);
    IntTensor a(Shape{1, 6}, {0, 0, 4, 7, 2, 11});
    Tensor la = forward_eval(config, params, a);

    // the embedding rows at PAD positions change, the PAD token does not
    ModelParams tweaked = detail::clone_params(params);
    for (size_t j = 0; j < config.hidden_dim; ++j)
        tweaked.position_embedding(0, j) += 3.5;  // position 0 is PAD here
    Tensor lb = forward_eval(config, tweaked, a);
    for (size_t i = 2; i < 6; ++i)
        for (size_t t = 0; t < 12; ++t)
            CHECK(la(0, i, t) == doctest::Approx(lb(0, i, t)).epsilon(1e-12));
}

TEST_CASE("downstream softmax is shift-invariant in the logits") {
    ModelConfig config = toy_config();
    ModelParams params = init_params(config, 41, InitMode::scratch_all);
    Tensor logits = forward_eval(config, params, toy_inputs());
    std::vector<double> row(logits.raw() + 5 * 12, logits.raw() + 6 * 12);
    auto p = oracle::softmax_row(row, 1.5);
    for (double& v : row) v += 123.456;
    auto q = oracle::softmax_row(row, 1.5);
    for (size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - q[i]) <= 1e-12);
}

TEST_CASE("init modes") {
    ModelConfig config = toy_config();

    ModelParams a = init_params(config, 123, InitMode::scratch_all);
    ModelParams b = init_params(config, 123, InitMode::scratch_all);
    bool identical = true;
    a.visit([&](const std::string& name, Tensor& t) {
        ModelParams& other = b;
        other.visit([&](const std::string& name2, Tensor& t2) {
            if (name == name2)
                for (size_t i = 0; i < t.numel(); ++i)
                    if (t.data()[i] != t2.data()[i]) identical = false;
        });
    });
    CHECK(identical);

    // truncated normal: all weight draws inside 2 sigma
    for (double v : a.token_embedding.data()) CHECK(std::abs(v) <= 0.04 + 1e-12);
    for (double v : a.layers[0].ln1_gamma.data()) CHECK(v == 1.0);
    for (double v : a.layers[0].ffn_b1.data()) CHECK(v == 0.0);

    ModelParams embed_scratch =
        init_params(config, 999, InitMode::scratch_embed, &a, &config);
    // layer tensors equal the checkpoint, embedding tensors differ
    for (size_t i = 0; i < a.layers[0].wq.numel(); ++i)
        CHECK(embed_scratch.layers[0].wq.data()[i] == a.layers[0].wq.data()[i]);
    bool emb_differs = false;
    for (size_t i = 0; i < a.token_embedding.numel(); ++i)
        if (embed_scratch.token_embedding.data()[i] != a.token_embedding.data()[i])
            emb_differs = true;
    CHECK(emb_differs);

    ModelParams layer_scratch =
        init_params(config, 999, InitMode::scratch_layer, &a, &config);
    for (size_t i = 0; i < a.token_embedding.numel(); ++i)
        CHECK(layer_scratch.token_embedding.data()[i] == a.token_embedding.data()[i]);
    bool layer_differs = false;
    for (size_t i = 0; i < a.layers[0].wq.numel(); ++i)
        if (layer_scratch.layers[0].wq.data()[i] != a.layers[0].wq.data()[i])
            layer_differs = true;
    CHECK(layer_differs);

    ModelParams copied = init_params(config, 999, InitMode::from_checkpoint, &a, &config);
    for (size_t i = 0; i < a.token_embedding.numel(); ++i)
        CHECK(copied.token_embedding.data()[i] == a.token_embedding.data()[i]);

    CHECK_THROWS_AS(init_params(config, 1, InitMode::from_checkpoint), ParamError);
    ModelConfig other = config;
    other.hidden_dim = 4;
    other.num_heads = 2;
    CHECK_THROWS_AS(init_params(other, 1, InitMode::from_checkpoint, &a, &config),
                    ConfigError);

    // vocabulary adaptation: extra checkpoint rows dropped, missing rows scratch
    ModelConfig grown = config;
    grown.vocab_size = 15;
    ModelParams adapted = init_params(grown, 7, InitMode::from_checkpoint, &a, &config);
    for (size_t r = 0; r < 12; ++r)
        for (size_t j = 0; j < config.hidden_dim; ++j)
            CHECK(adapted.token_embedding(r, j) == a.token_embedding(r, j));
    ModelConfig shrunk = config;
    shrunk.vocab_size = 9;
    ModelParams trimmed = init_params(shrunk, 7, InitMode::from_checkpoint, &a, &config);
    for (size_t r = 0; r < 9; ++r)
        for (size_t j = 0; j < config.hidden_dim; ++j)
            CHECK(trimmed.token_embedding(r, j) == a.token_embedding(r, j));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    ModelConfig config = toy_config();
    config.tie_output_to_embedding = false;
    ModelParams params = init_params(config, 77, InitMode::scratch_all);
    std::string path = temp_file("roundtrip.srkd");

    save_checkpoint(params, config, path);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.config.num_layers == config.num_layers);
    CHECK(loaded.config.vocab_size == config.vocab_size);
    CHECK(loaded.config.tie_output_to_embedding == false);

    bool equal = true;
    params.visit([&](const std::string& name, Tensor& t) {
        loaded.params.visit([&](const std::string& name2, Tensor& t2) {
            if (name != name2) return;
            for (size_t i = 0; i < t.numel(); ++i)
                if (t.data()[i] != t2.data()[i]) equal = false;
        });
    });
    CHECK(equal);

    // save(load(x)) reproduces the identical bytes
    std::string path2 = temp_file("roundtrip2.srkd");
    save_checkpoint(loaded.params, loaded.config, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);

    // 8-byte alignment of the data section
    uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i)
        header_len |= static_cast<uint32_t>(static_cast<unsigned char>(b1[5 + i])) << (8 * i);
    CHECK((9 + header_len) % 8 == 0);

    // corrupted magic and truncated payload are refused
    std::string bad = b1;
    bad[0] = 'Z';
    std::string bad_path = temp_file("bad.srkd");
    std::ofstream(bad_path, std::ios::binary) << bad;
    CHECK_THROWS_AS(load_checkpoint(bad_path), FormatError);
    std::string cut_path = temp_file("cut.srkd");
    std::ofstream(cut_path, std::ios::binary) << b1.substr(0, b1.size() - 16);
    CHECK_THROWS_WITH_AS(load_checkpoint(cut_path), doctest::Contains("output_bias"),
                         FormatError);

    fs::remove(path);
    fs::remove(path2);
    fs::remove(bad_path);
    fs::remove(cut_path);
}

TEST_CASE("eval forward ignores the seed, train forward uses it") {
    ModelConfig config = toy_config();
    config.dropout_rate = 0.3;
    ModelParams params = init_params(config, 51, InitMode::scratch_all);
    Tensor a = forward_eval(config, params, toy_inputs());
    Tensor b = forward_eval(config, params, toy_inputs());
    for (size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);

    ag::Tape t1;
    ModelVars v1 = bind_params(t1, params);
    Rng r1(5);
    auto train_a = forward(t1, v1, config, toy_inputs(), true, &r1);
    ag::Tape t2;
    ModelVars v2 = bind_params(t2, params);
    Rng r2(5);
    auto train_b = forward(t2, v2, config, toy_inputs(), true, &r2);
    for (size_t i = 0; i < train_a->value.numel(); ++i)
        CHECK(train_a->value.data()[i] == train_b->value.data()[i]);
}

TEST_CASE("full model gradient passes finite differences on the toy config") {
    // L=1, d=8, h=2, n=6, V=12, checked for several seeds in eval mode and
    // once with dropout active (fixed mask stream).
    for (uint64_t seed : {11u, 12u, 13u, 14u, 15u}) {
        ModelConfig config = toy_config();
        ModelParams params = init_params(config, seed, InitMode::scratch_all);
        IntTensor inputs = toy_inputs();
        IntTensor labels(Shape{2, 6}, {-1, -1, 7, -1, 3, -1, -1, 1, -1, -1, -1, 5});

        auto forward_loss = [&]() {
            ag::Tape tape;
            ModelVars vars = bind_params(tape, params);
            auto logits = forward(tape, vars, config, inputs, false, nullptr);
            return mlm_loss(logits, labels).loss->value.item();
        };

        ag::Tape tape;
        ModelVars vars = bind_params(tape, params);
        auto logits = forward(tape, vars, config, inputs, false, nullptr);
        tape.backward(mlm_loss(logits, labels).loss);

        std::vector<std::pair<std::string, Tensor>> slots;
        params.visit([&](const std::string& name, Tensor& t) {
            slots.emplace_back(name, t);
        });
        size_t slot = 0;
        vars.visit([&](const std::string& name, ag::Var& v) {
            Tensor analytic = tape.gradient(v);
            Tensor fd = oracle::finite_diff(slots[slot].second, forward_loss);
            INFO("parameter ", name, " seed ", seed);
            CHECK(oracle::rel_err(analytic, fd) < 1e-6);
            ++slot;
        });
    }

    // train mode with live dropout, mask stream pinned by the seed
    ModelConfig config = toy_config();
    config.dropout_rate = 0.25;
    ModelParams params = init_params(config, 99, InitMode::scratch_all);
    IntTensor inputs = toy_inputs();
    IntTensor labels(Shape{2, 6}, {-1, -1, 7, -1, -1, -1, -1, -1, -1, -1, -1, 5});
    auto forward_loss = [&]() {
        ag::Tape tape;
        ModelVars vars = bind_params(tape, params);
        Rng rng(4242);
        auto logits = forward(tape, vars, config, inputs, true, &rng);
        return mlm_loss(logits, labels).loss->value.item();
    };
    ag::Tape tape;
    ModelVars vars = bind_params(tape, params);
    Rng rng(4242);
    auto logits = forward(tape, vars, config, inputs, true, &rng);
    tape.backward(mlm_loss(logits, labels).loss);
    Tensor analytic = tape.gradient(vars.token_embedding);
    Tensor fd = oracle::finite_diff(params.token_embedding, forward_loss);
    CHECK(oracle::rel_err(analytic, fd) < 1e-6);
}
