#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "srkd/autograd.hpp"
#include "srkd/rng.hpp"
#include "srkd/tensor.hpp"

namespace srkd {

struct ModelConfig {
    size_t num_layers = 2;
    size_t hidden_dim = 256;
    size_t num_heads = 4;
    size_t ffn_dim = 0;  // 0 -> 4 * hidden_dim
    size_t max_len = 50;
    size_t vocab_size = 0;
    double dropout_rate = 0.1;
    bool tie_output_to_embedding = true;

    size_t head_dim() const { return hidden_dim / num_heads; }
    void validate() const;
};

struct LayerParams {
    Tensor wq, wk, wv, wo;              // [d, d] fused per-head projections
    Tensor ln1_gamma, ln1_beta;         // [d]
    Tensor ffn_w1, ffn_b1;              // [d, ffn], [ffn]
    Tensor ffn_w2, ffn_b2;              // [ffn, d], [d]
    Tensor ln2_gamma, ln2_beta;         // [d]
};

// All learnable tensors. The output projection reuses the token embedding
// (transposed) unless the config unties it, in which case output_weight
// [d, V] exists as its own tensor.
struct ModelParams {
    Tensor token_embedding;     // [V, d]
    Tensor position_embedding;  // [n, d]
    Tensor segment_embedding;   // [d], one constant segment per sequence
    std::vector<LayerParams> layers;
    Tensor output_weight;  // [d, V], only when untied
    Tensor output_bias;    // [V]
    bool tied = true;

    // Canonical traversal; the order fixes init draws, checkpoint manifest
    // order and optimizer slot order.
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
    size_t tensor_count();
};

enum class InitMode { scratch_all, scratch_embed, scratch_layer, from_checkpoint };

InitMode parse_init_mode(const std::string& name);
std::string init_mode_name(InitMode mode);

// Fresh parameters: truncated normal (sigma 0.02, clipped at 2 sigma) for
// embeddings and projection matrices, zeros for biases, (1, 0) layer norms.
// For the three checkpoint-based modes the non-scratch groups are copied
// verbatim; vocabulary-sized tensors adapt row-wise (extra checkpoint rows
// dropped, missing rows keep their scratch init), everything else must
// match shape exactly.
ModelParams init_params(const ModelConfig& config, uint64_t seed, InitMode mode,
                        const ModelParams* checkpoint = nullptr,
                        const ModelConfig* checkpoint_config = nullptr);

// Var mirror of ModelParams bound to one tape (buffers shared, not copied).
struct LayerVars {
    ag::Var wq, wk, wv, wo, ln1_gamma, ln1_beta;
    ag::Var ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_gamma, ln2_beta;
};

struct ModelVars {
    ag::Var token_embedding, position_embedding, segment_embedding;
    std::vector<LayerVars> layers;
    ag::Var output_weight;  // null when tied
    ag::Var output_bias;

    void visit(const std::function<void(const std::string&, ag::Var&)>& fn);
};

ModelVars bind_params(ag::Tape& tape, ModelParams& params);

// E[token] + P[position] + G, then dropout in train mode.
ag::Var embed(ag::Tape& tape, const ModelVars& vars, const ModelConfig& config,
              const IntTensor& inputs, bool train_mode, Rng* dropout_rng);

// Scaled dot-product attention over the trailing (n, d_k) axes. key_bias,
// when present, is added to the score matrix before the softmax (PAD keys
// carry -1e9 there).
ag::Var attention(ag::Var q, ag::Var k, ag::Var v, const ag::Var& key_bias);

// Full encoder stack -> per-position vocabulary logits [B, n, V].
ag::Var forward(ag::Tape& tape, const ModelVars& vars, const ModelConfig& config,
                const IntTensor& inputs, bool train_mode, Rng* dropout_rng);

// Gradient-free eval-mode forward.
Tensor forward_eval(const ModelConfig& config, ModelParams& params,
                    const IntTensor& inputs);

// Checkpoint container: magic "SRKD1", u32-le header length, JSON header
// {format_version, config, manifest:[{name, shape, byte_offset}]} padded so
// the data section is 8-byte aligned, then raw little-endian float64 tensor
// data in manifest order; byte_offset is relative to the data section.
void save_checkpoint(ModelParams& params, const ModelConfig& config,
                     const std::string& path);

struct Checkpoint {
    ModelParams params;
    ModelConfig config;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace srkd
