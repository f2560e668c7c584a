#include "srkd/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "srkd/error.hpp"

namespace srkd {

namespace {

using nlohmann::json;

constexpr double kInitSigma = 0.02;
constexpr double kLayerNormEps = 1e-12;
constexpr double kPadBias = -1e9;

void fill_trunc_normal(Tensor& t, Rng& rng) {
    for (double& v : t.data()) v = rng.next_trunc_normal(kInitSigma);
}

}  // namespace

void ModelConfig::validate() const {
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (num_heads < 1 || hidden_dim % num_heads != 0)
        throw ConfigError("hidden_dim " + std::to_string(hidden_dim) +
                          " is not divisible by num_heads " + std::to_string(num_heads));
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    if (vocab_size < 3) throw ConfigError("vocab_size must cover PAD, MASK and items");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("dropout_rate must lie in [0, 1)");
}

void ModelParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("token_embedding", token_embedding);
    fn("position_embedding", position_embedding);
    fn("segment_embedding", segment_embedding);
    for (size_t l = 0; l < layers.size(); ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        fn(p + "wq", layers[l].wq);
        fn(p + "wk", layers[l].wk);
        fn(p + "wv", layers[l].wv);
        fn(p + "wo", layers[l].wo);
        fn(p + "ln1_gamma", layers[l].ln1_gamma);
        fn(p + "ln1_beta", layers[l].ln1_beta);
        fn(p + "ffn_w1", layers[l].ffn_w1);
        fn(p + "ffn_b1", layers[l].ffn_b1);
        fn(p + "ffn_w2", layers[l].ffn_w2);
        fn(p + "ffn_b2", layers[l].ffn_b2);
        fn(p + "ln2_gamma", layers[l].ln2_gamma);
        fn(p + "ln2_beta", layers[l].ln2_beta);
    }
    if (!tied) fn("output_weight", output_weight);
    fn("output_bias", output_bias);
}

size_t ModelParams::tensor_count() {
    size_t n = 0;
    visit([&](const std::string&, Tensor&) { ++n; });
    return n;
}

InitMode parse_init_mode(const std::string& name) {
    if (name == "scratch_all") return InitMode::scratch_all;
    if (name == "scratch_embed") return InitMode::scratch_embed;
    if (name == "scratch_layer") return InitMode::scratch_layer;
    if (name == "from_checkpoint") return InitMode::from_checkpoint;
    throw ParamError("unknown init mode '" + name + "'");
}

std::string init_mode_name(InitMode mode) {
    switch (mode) {
        case InitMode::scratch_all: return "scratch_all";
        case InitMode::scratch_embed: return "scratch_embed";
        case InitMode::scratch_layer: return "scratch_layer";
        case InitMode::from_checkpoint: return "from_checkpoint";
    }
    return "?";
}

namespace {

ModelParams fresh_params(const ModelConfig& config, uint64_t seed) {
    size_t d = config.hidden_dim;
    size_t ffn = config.ffn_dim ? config.ffn_dim : 4 * d;
    ModelParams p;
    p.tied = config.tie_output_to_embedding;
    p.token_embedding = Tensor(Shape{config.vocab_size, d});
    p.position_embedding = Tensor(Shape{config.max_len, d});
    p.segment_embedding = Tensor(Shape{d});
    p.layers.resize(config.num_layers);
    for (auto& l : p.layers) {
        l.wq = Tensor(Shape{d, d});
        l.wk = Tensor(Shape{d, d});
        l.wv = Tensor(Shape{d, d});
        l.wo = Tensor(Shape{d, d});
        l.ln1_gamma = Tensor::full(Shape{d}, 1.0);
        l.ln1_beta = Tensor(Shape{d});
        l.ffn_w1 = Tensor(Shape{d, ffn});
        l.ffn_b1 = Tensor(Shape{ffn});
        l.ffn_w2 = Tensor(Shape{ffn, d});
        l.ffn_b2 = Tensor(Shape{d});
        l.ln2_gamma = Tensor::full(Shape{d}, 1.0);
        l.ln2_beta = Tensor(Shape{d});
    }
    if (!p.tied) p.output_weight = Tensor(Shape{d, config.vocab_size});
    p.output_bias = Tensor(Shape{config.vocab_size});

    Rng rng(Rng::derive_seed(seed, rng_stream::model_init));
    p.visit([&](const std::string& name, Tensor& t) {
        bool is_weight = name == "token_embedding" || name == "position_embedding" ||
                         name == "segment_embedding" || name == "output_weight" ||
                         name.ends_with(".wq") || name.ends_with(".wk") ||
                         name.ends_with(".wv") || name.ends_with(".wo") ||
                         name.ends_with(".ffn_w1") || name.ends_with(".ffn_w2");
        if (is_weight) fill_trunc_normal(t, rng);
    });
    return p;
}

bool is_embedding_group(const std::string& name) {
    return name == "token_embedding" || name == "position_embedding" ||
           name == "segment_embedding" || name == "output_weight" ||
           name == "output_bias";
}

// Copy src into dst. Vocabulary-sized leading dims may differ; for those the
// overlapping rows transfer and the rest keeps its scratch init.
void copy_tensor(const std::string& name, Tensor& dst, const Tensor& src) {
    bool vocab_rows = name == "token_embedding" || name == "output_bias";
    if (vocab_rows && dst.rank() == src.rank()) {
        bool trailing_match =
            std::equal(dst.shape().begin() + 1, dst.shape().end(), src.shape().begin() + 1);
        if (trailing_match) {
            size_t row = dst.numel() / dst.dim(0);
            size_t rows = std::min(dst.dim(0), src.dim(0));
            std::memcpy(dst.raw(), src.raw(), rows * row * sizeof(double));
            return;
        }
    }
    if (name == "output_weight" && dst.rank() == 2 && src.rank() == 2 &&
        dst.dim(0) == src.dim(0)) {
        size_t cols = std::min(dst.dim(1), src.dim(1));
        for (size_t i = 0; i < dst.dim(0); ++i)
            std::memcpy(dst.raw() + i * dst.dim(1), src.raw() + i * src.dim(1),
                        cols * sizeof(double));
        return;
    }
    if (!dst.same_shape(src))
        throw Error(ErrorCode::config,
                    "checkpoint tensor '" + name + "' has shape " +
                        shape_str(src.shape()) + ", config expects " +
                        shape_str(dst.shape()));
    std::memcpy(dst.raw(), src.raw(), dst.numel() * sizeof(double));
}

}  // namespace

ModelParams init_params(const ModelConfig& config, uint64_t seed, InitMode mode,
                        const ModelParams* checkpoint,
                        const ModelConfig* checkpoint_config) {
    config.validate();
    ModelParams params = fresh_params(config, seed);
    if (mode == InitMode::scratch_all) return params;

    if (!checkpoint || !checkpoint_config)
        throw ParamError("init mode " + init_mode_name(mode) +
                         " needs a checkpoint");
    if (checkpoint_config->num_layers != config.num_layers ||
        checkpoint_config->hidden_dim != config.hidden_dim ||
        checkpoint_config->num_heads != config.num_heads ||
        (checkpoint_config->ffn_dim ? checkpoint_config->ffn_dim
                                    : 4 * checkpoint_config->hidden_dim) !=
            (config.ffn_dim ? config.ffn_dim : 4 * config.hidden_dim) ||
        checkpoint_config->max_len != config.max_len)
        throw ConfigError("checkpoint architecture (" +
                          std::to_string(checkpoint_config->num_layers) + " layers, d=" +
                          std::to_string(checkpoint_config->hidden_dim) +
                          ") does not match the requested config");

    std::map<std::string, Tensor> src;  // copies share buffers, cheap
    ModelParams ckpt_view = *checkpoint;
    ckpt_view.visit([&](const std::string& name, Tensor& t) { src[name] = t; });

    params.visit([&](const std::string& name, Tensor& dst) {
        bool emb = is_embedding_group(name);
        bool copy = mode == InitMode::from_checkpoint ||
                    (mode == InitMode::scratch_embed && !emb) ||
                    (mode == InitMode::scratch_layer && emb);
        if (!copy) return;
        auto it = src.find(name);
        if (it == src.end()) return;  // e.g. untied head absent in checkpoint
        copy_tensor(name, dst, it->second);
    });
    return params;
}

void ModelVars::visit(const std::function<void(const std::string&, ag::Var&)>& fn) {
    fn("token_embedding", token_embedding);
    fn("position_embedding", position_embedding);
    fn("segment_embedding", segment_embedding);
    for (size_t l = 0; l < layers.size(); ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        fn(p + "wq", layers[l].wq);
        fn(p + "wk", layers[l].wk);
        fn(p + "wv", layers[l].wv);
        fn(p + "wo", layers[l].wo);
        fn(p + "ln1_gamma", layers[l].ln1_gamma);
        fn(p + "ln1_beta", layers[l].ln1_beta);
        fn(p + "ffn_w1", layers[l].ffn_w1);
        fn(p + "ffn_b1", layers[l].ffn_b1);
        fn(p + "ffn_w2", layers[l].ffn_w2);
        fn(p + "ffn_b2", layers[l].ffn_b2);
        fn(p + "ln2_gamma", layers[l].ln2_gamma);
        fn(p + "ln2_beta", layers[l].ln2_beta);
    }
    if (output_weight) fn("output_weight", output_weight);
    fn("output_bias", output_bias);
}

ModelVars bind_params(ag::Tape& tape, ModelParams& params) {
    ModelVars vars;
    vars.token_embedding = tape.leaf(params.token_embedding);
    vars.position_embedding = tape.leaf(params.position_embedding);
    vars.segment_embedding = tape.leaf(params.segment_embedding);
    vars.layers.resize(params.layers.size());
    for (size_t l = 0; l < params.layers.size(); ++l) {
        auto& src = params.layers[l];
        auto& dst = vars.layers[l];
        dst.wq = tape.leaf(src.wq);
        dst.wk = tape.leaf(src.wk);
        dst.wv = tape.leaf(src.wv);
        dst.wo = tape.leaf(src.wo);
        dst.ln1_gamma = tape.leaf(src.ln1_gamma);
        dst.ln1_beta = tape.leaf(src.ln1_beta);
        dst.ffn_w1 = tape.leaf(src.ffn_w1);
        dst.ffn_b1 = tape.leaf(src.ffn_b1);
        dst.ffn_w2 = tape.leaf(src.ffn_w2);
        dst.ffn_b2 = tape.leaf(src.ffn_b2);
        dst.ln2_gamma = tape.leaf(src.ln2_gamma);
        dst.ln2_beta = tape.leaf(src.ln2_beta);
    }
    if (!params.tied) vars.output_weight = tape.leaf(params.output_weight);
    vars.output_bias = tape.leaf(params.output_bias);
    return vars;
}

ag::Var embed(ag::Tape& tape, const ModelVars& vars, const ModelConfig& config,
              const IntTensor& inputs, bool train_mode, Rng* dropout_rng) {
    if (inputs.rank() != 2 || inputs.dim(1) != config.max_len)
        throw ShapeError("embed: inputs must be [B, " + std::to_string(config.max_len) +
                         "], got " + shape_str(inputs.shape()));
    auto x = ag::embedding_gather(vars.token_embedding, inputs);
    x = ag::add(x, vars.position_embedding);
    x = ag::add(x, vars.segment_embedding);
    if (train_mode && config.dropout_rate > 0.0) {
        if (!dropout_rng)
            throw ContractError("train-mode forward needs a dropout rng");
        x = ag::dropout(x, config.dropout_rate, *dropout_rng, true);
    }
    (void)tape;
    return x;
}

ag::Var attention(ag::Var q, ag::Var k, ag::Var v, const ag::Var& key_bias) {
    size_t dk = q->value.dim(q->value.rank() - 1);
    auto scores = ag::scale(ag::matmul(q, ag::transpose_last_two(k)),
                            1.0 / std::sqrt(static_cast<double>(dk)));
    if (key_bias) scores = ag::add(scores, key_bias);
    return ag::matmul(ag::softmax_rows(scores, 1.0), v);
}

namespace {

Tensor pad_key_bias(const IntTensor& inputs) {
    size_t batch = inputs.dim(0), n = inputs.dim(1);
    Tensor bias(Shape{batch, n, n});
    for (size_t b = 0; b < batch; ++b)
        for (size_t j = 0; j < n; ++j)
            if (inputs(b, j) == 0) {  // PAD keys masked out for every query
                for (size_t i = 0; i < n; ++i) bias(b, i, j) = kPadBias;
            }
    return bias;
}

}  // namespace

ag::Var forward(ag::Tape& tape, const ModelVars& vars, const ModelConfig& config,
                const IntTensor& inputs, bool train_mode, Rng* dropout_rng) {
    config.validate();
    auto x = embed(tape, vars, config, inputs, train_mode, dropout_rng);
    auto key_bias = tape.constant(pad_key_bias(inputs));

    size_t dk = config.head_dim();
    bool drop = train_mode && config.dropout_rate > 0.0;
    for (const auto& layer : vars.layers) {
        auto q = ag::matmul(x, layer.wq);
        auto k = ag::matmul(x, layer.wk);
        auto v = ag::matmul(x, layer.wv);
        std::vector<ag::Var> heads;
        heads.reserve(config.num_heads);
        for (size_t h = 0; h < config.num_heads; ++h) {
            size_t off = h * dk;
            heads.push_back(attention(ag::slice_last_axis(q, off, dk),
                                      ag::slice_last_axis(k, off, dk),
                                      ag::slice_last_axis(v, off, dk), key_bias));
        }
        auto attn = ag::matmul(ag::concat_last_axis(heads), layer.wo);
        if (drop) attn = ag::dropout(attn, config.dropout_rate, *dropout_rng, true);
        x = ag::layer_norm(ag::add(attn, x), layer.ln1_gamma, layer.ln1_beta,
                           kLayerNormEps);

        auto hidden = ag::gelu(ag::add(ag::matmul(x, layer.ffn_w1), layer.ffn_b1));
        auto ffn = ag::add(ag::matmul(hidden, layer.ffn_w2), layer.ffn_b2);
        if (drop) ffn = ag::dropout(ffn, config.dropout_rate, *dropout_rng, true);
        x = ag::layer_norm(ag::add(ffn, x), layer.ln2_gamma, layer.ln2_beta,
                           kLayerNormEps);
    }

    auto head = vars.output_weight
                    ? ag::matmul(x, vars.output_weight)
                    : ag::matmul(x, ag::transpose_last_two(vars.token_embedding));
    return ag::add(head, vars.output_bias);
}

Tensor forward_eval(const ModelConfig& config, ModelParams& params,
                    const IntTensor& inputs) {
    ag::Tape tape(false);
    ModelVars vars = bind_params(tape, params);
    return forward(tape, vars, config, inputs, false, nullptr)->value;
}

// ---- checkpoint io -------------------------------------------------------

namespace {

static_assert(sizeof(double) == 8);

void append_f64_le(std::string& out, std::span<const double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(values.data()),
                   values.size() * sizeof(double));
    } else {
        for (double v : values) {
            auto bits = std::bit_cast<uint64_t>(v);
            for (int i = 0; i < 8; ++i)
                out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }
    }
}

void read_f64_le(const std::string& in, size_t pos, std::span<double> values) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(values.data(), in.data() + pos, values.size() * sizeof(double));
    } else {
        for (size_t i = 0; i < values.size(); ++i) {
            uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= static_cast<uint64_t>(
                            static_cast<unsigned char>(in[pos + i * 8 + b]))
                        << (8 * b);
            values[i] = std::bit_cast<double>(bits);
        }
    }
}

json config_to_json(const ModelConfig& c) {
    json j;
    j["num_layers"] = c.num_layers;
    j["hidden_dim"] = c.hidden_dim;
    j["num_heads"] = c.num_heads;
    j["ffn_dim"] = c.ffn_dim ? c.ffn_dim : 4 * c.hidden_dim;
    j["max_len"] = c.max_len;
    j["vocab_size"] = c.vocab_size;
    j["dropout_rate"] = c.dropout_rate;
    j["tie_output_to_embedding"] = c.tie_output_to_embedding;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<size_t>();
    c.hidden_dim = j.at("hidden_dim").get<size_t>();
    c.num_heads = j.at("num_heads").get<size_t>();
    c.ffn_dim = j.at("ffn_dim").get<size_t>();
    c.max_len = j.at("max_len").get<size_t>();
    c.vocab_size = j.at("vocab_size").get<size_t>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.tie_output_to_embedding = j.at("tie_output_to_embedding").get<bool>();
    return c;
}

}  // namespace

void save_checkpoint(ModelParams& params, const ModelConfig& config,
                     const std::string& path) {
    json manifest = json::array();
    std::string data;
    params.visit([&](const std::string& name, Tensor& t) {
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape();
        entry["byte_offset"] = data.size();
        manifest.push_back(entry);
        append_f64_le(data, t.data());
    });

    json header;
    header["format_version"] = 1;
    header["config"] = config_to_json(config);
    header["manifest"] = manifest;
    std::string header_bytes = header.dump();
    // data section starts 8-byte aligned: magic(5) + len(4) + header + pad
    while ((5 + 4 + header_bytes.size()) % 8 != 0) header_bytes.push_back(' ');

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot create " + path);
    f.write("SRKD1", 5);
    uint32_t len = static_cast<uint32_t>(header_bytes.size());
    char len_bytes[4];
    for (int i = 0; i < 4; ++i) len_bytes[i] = static_cast<char>((len >> (8 * i)) & 0xFF);
    f.write(len_bytes, 4);
    f.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!f) throw IoError("write failed on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    if (bytes.size() < 9 || bytes.compare(0, 5, "SRKD1") != 0)
        throw FormatError(path + ": bad magic, not an SRKD1 checkpoint");
    uint32_t header_len = 0;
    for (int i = 0; i < 4; ++i)
        header_len |= static_cast<uint32_t>(static_cast<unsigned char>(bytes[5 + i]))
                      << (8 * i);
    if (9 + static_cast<size_t>(header_len) > bytes.size())
        throw FormatError(path + ": truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(9, header_len));
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad header json: " + e.what());
    }

    Checkpoint out;
    size_t data_start = 9 + header_len;
    try {
        out.config = config_from_json(header.at("config"));
        out.config.validate();
        out.params = init_params(out.config, 0, InitMode::scratch_all);

        std::map<std::string, Tensor*> dst;
        out.params.visit([&](const std::string& name, Tensor& t) { dst[name] = &t; });

        for (const auto& entry : header.at("manifest")) {
            std::string name = entry.at("name").get<std::string>();
            Shape shape = entry.at("shape").get<Shape>();
            size_t offset = entry.at("byte_offset").get<size_t>();
            auto it = dst.find(name);
            if (it == dst.end())
                throw FormatError(path + ": unexpected tensor '" + name + "'");
            if (it->second->shape() != shape)
                throw FormatError(path + ": tensor '" + name + "' has shape " +
                                  shape_str(shape) + ", config expects " +
                                  shape_str(it->second->shape()));
            size_t bytes_needed = it->second->numel() * sizeof(double);
            if (data_start + offset + bytes_needed > bytes.size())
                throw FormatError(path + ": tensor '" + name + "' extends past EOF");
            read_f64_le(bytes, data_start + offset, it->second->data());
            dst.erase(it);
        }
        if (!dst.empty())
            throw FormatError(path + ": tensor '" + dst.begin()->first +
                              "' missing from manifest");
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad header field: " + e.what());
    }
    return out;
}

}  // namespace srkd
