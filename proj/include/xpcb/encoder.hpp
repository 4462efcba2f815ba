#pragma once

// Mini-transformer text encoder.
//
// Post-norm stack: token + position embeddings, then per layer
//   h = LayerNorm(x + Dropout(MultiHeadSelfAttention(x) Wo))
//   y = LayerNorm(h + Dropout(ReLU(h W1 + b1) W2 + b2))
// Padded keys are excluded from attention with an additive -inf mask.
// Hidden states are exposed for every layer (index 0 = embedding output).
//
// Numerics are templated on the scalar type: float for training and
// inference, double for finite-difference gradient checks.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xpcb/corpus.hpp"
#include "xpcb/random.hpp"
#include "xpcb/tensor.hpp"

namespace xpcb {

enum class Pooling { first_token, mean };

Pooling parse_pooling(std::string_view name);
std::string_view pooling_name(Pooling pooling);

struct EncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_positions = 128;
    double dropout_rate = 0.1;
    Pooling pooling = Pooling::first_token;

    void validate() const;
    std::size_t head_dim() const { return d_model / n_heads; }
    bool operator==(const EncoderConfig&) const = default;
};

template <class T>
struct LayerParams {
    Tensor<T> wq, wk, wv, wo;  // [d_model x d_model]
    Tensor<T> w1, b1;          // [d_model x d_ff], [d_ff]
    Tensor<T> w2, b2;          // [d_ff x d_model], [d_model]
    Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;

    template <class Self, class F>
    static void visit_impl(Self& self, const std::string& prefix, F&& f) {
        f(prefix + "attn.wq", self.wq);
        f(prefix + "attn.wk", self.wk);
        f(prefix + "attn.wv", self.wv);
        f(prefix + "attn.wo", self.wo);
        f(prefix + "ffn.w1", self.w1);
        f(prefix + "ffn.b1", self.b1);
        f(prefix + "ffn.w2", self.w2);
        f(prefix + "ffn.b2", self.b2);
        f(prefix + "ln1.gain", self.ln1_gain);
        f(prefix + "ln1.bias", self.ln1_bias);
        f(prefix + "ln2.gain", self.ln2_gain);
        f(prefix + "ln2.bias", self.ln2_bias);
    }
};

template <class T>
struct EncoderParams {
    EncoderConfig config;
    Tensor<T> token_embedding;     // [vocab_size x d_model]
    Tensor<T> position_embedding;  // [max_positions x d_model]
    std::vector<LayerParams<T>> layers;

    std::string prefix = "encoder.";

    template <class F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <class F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }

    template <class U>
    EncoderParams<U> cast() const;

private:
    template <class Self, class F>
    static void visit_impl(Self& self, F& f) {
        f(self.prefix + "token_embedding", self.token_embedding);
        f(self.prefix + "position_embedding", self.position_embedding);
        for (std::size_t i = 0; i < self.layers.size(); ++i)
            LayerParams<T>::visit_impl(self.layers[i], self.prefix + "layers." + std::to_string(i) + ".", f);
    }
};

template <class T>
template <class U>
EncoderParams<U> EncoderParams<T>::cast() const {
    EncoderParams<U> out;
    out.config = config;
    out.prefix = prefix;
    out.token_embedding = token_embedding.template cast<U>();
    out.position_embedding = position_embedding.template cast<U>();
    out.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        std::vector<Tensor<U>*> dst;
        LayerParams<U>::visit_impl(out.layers[i], "", [&](const std::string&, Tensor<U>& t) { dst.push_back(&t); });
        std::size_t k = 0;
        LayerParams<T>::visit_impl(layers[i], "", [&](const std::string&, const Tensor<T>& t) {
            *dst[k++] = t.template cast<U>();
        });
    }
    return out;
}

template <class T>
EncoderParams<T> init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Per-layer activations, each [batch x max_len x d_model]; n_layers + 1 entries.
template <class T>
struct HiddenStates {
    std::size_t batch = 0;
    std::size_t max_len = 0;
    std::vector<Tensor<T>> layers;
};

// Full-length inference forward pass, dropout disabled. Throws InputError
// for out-of-range ids or over-long batches, NumericalError on non-finite
// activations (naming the layer).
template <class T>
HiddenStates<T> encode(const EncoderParams<T>& params, const TokenBatch& batch);

// Pool one layer: [batch x max_len x d] -> [batch x d].
template <class T>
Tensor<T> pool(const Tensor<T>& layer_states, std::span<const std::uint8_t> mask, std::size_t batch,
               std::size_t len, Pooling strategy);
template <class T>
Tensor<T> pool(const HiddenStates<T>& states, std::size_t layer, std::span<const std::uint8_t> mask,
               Pooling strategy);

// d(layer_states) from d(pooled).
template <class T>
Tensor<T> pool_backward(const Tensor<T>& d_pooled, std::span<const std::uint8_t> mask, std::size_t batch,
                        std::size_t len, Pooling strategy);

// ---------------------------------------------------------------- training

template <class T>
struct LayerCache {
    Tensor<T> q, k, v;   // [rows x d]
    Tensor<T> probs;     // [batch x heads x len x len]
    Tensor<T> attn;      // concatenated heads, [rows x d]
    Tensor<T> drop1;     // dropout multipliers on attention output, empty if none
    Tensor<T> ln1_xhat;  // [rows x d]
    std::vector<T> ln1_rstd;
    Tensor<T> h1;        // [rows x d]
    Tensor<T> z1;        // pre-activation, [rows x d_ff]
    Tensor<T> r;         // ReLU(z1)
    Tensor<T> drop2;
    Tensor<T> ln2_xhat;
    std::vector<T> ln2_rstd;
};

// Activations recorded for backward. Sequences are trimmed to the longest
// unmasked prefix in the batch when options.trim is set; trimmed positions
// are padding in every row and cannot affect any unmasked output.
template <class T>
struct EncoderTape {
    std::size_t batch = 0;
    std::size_t len = 0;
    std::vector<std::int32_t> ids;   // [batch x len]
    std::vector<std::uint8_t> mask;  // [batch x len]
    std::vector<Tensor<T>> states;   // states[l]: [batch*len x d], l = 0..top
    std::vector<LayerCache<T>> caches;

    std::size_t top_layer() const { return states.empty() ? 0 : states.size() - 1; }
    Tensor<T> pooled(std::size_t layer, Pooling strategy) const {
        return pool(states.at(layer), mask, batch, len, strategy);
    }
};

struct ForwardOptions {
    std::optional<std::size_t> top_layer;  // default: all layers
    bool trim = true;
    Rng* dropout_rng = nullptr;            // null disables dropout
};

template <class T>
EncoderTape<T> encoder_forward(const EncoderParams<T>& params, const TokenBatch& batch,
                               const ForwardOptions& options = {});

// Accumulates parameter gradients into grads. d_states[l] is the loss
// gradient with respect to tape.states[l] (empty tensor = zero).
template <class T>
void encoder_backward(const EncoderParams<T>& params, const EncoderTape<T>& tape,
                      std::vector<Tensor<T>> d_states, EncoderParams<T>& grads);

// Layer normalisation over the last axis. Exposed for testing.
template <class T>
void layer_norm_forward(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, Tensor<T>& y,
                        Tensor<T>& xhat, std::vector<T>& rstd);

inline constexpr double kLayerNormEps = 1e-5;

// ---------------------------------------------------------------- sharing

struct ShareMode {
    enum class Kind { full, partial };
    Kind kind = Kind::full;
    std::size_t frozen_layers = 0;  // partial only

    static ShareMode full() { return {}; }
    static ShareMode partial(std::size_t k) { return {Kind::partial, k}; }
    bool operator==(const ShareMode&) const = default;
};

using FrozenSet = std::set<std::string>;

template <class T>
struct TargetInit {
    EncoderParams<T> params;
    FrozenSet frozen;
};

// Deep copy of the source encoder. Partial sharing freezes the embeddings and
// the attention/FFN weights of the bottom k layers; layer-norm gains and
// biases always stay trainable. Throws ArtifactMismatch if expected differs
// from the source config.
template <class T>
TargetInit<T> init_target_from_source(const EncoderParams<T>& source, ShareMode mode,
                                      const EncoderConfig* expected = nullptr);

}  // namespace xpcb
