#include "xpcb/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xpcb/errors.hpp"
#include "xpcb/kernels.hpp"

namespace xpcb {

Pooling parse_pooling(std::string_view name) {
    if (name == "first_token") return Pooling::first_token;
    if (name == "mean") return Pooling::mean;
    throw InputError("unknown pooling strategy: " + std::string(name));
}

std::string_view pooling_name(Pooling pooling) { return pooling == Pooling::mean ? "mean" : "first_token"; }

void EncoderConfig::validate() const {
    if (vocab_size <= Vocabulary::kReserved) throw InputError("encoder.vocab_size must exceed the reserved ids");
    if (d_model == 0 || n_heads == 0 || d_ff == 0) throw InputError("encoder dimensions must be positive");
    if (d_model % n_heads != 0) throw InputError("encoder.d_model must be divisible by encoder.n_heads");
    if (max_positions < 2) throw InputError("encoder.max_positions must be at least 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InputError("encoder.dropout must be in [0, 1)");
}

namespace {

template <class T>
void fill_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * stddev);
}

template <class T>
void xavier(Tensor<T>& t, Rng& rng) {
    const double fan_in = static_cast<double>(t.shape[0]);
    const double fan_out = static_cast<double>(t.shape[1]);
    fill_normal(t, rng, std::sqrt(2.0 / (fan_in + fan_out)));
}

template <class T>
void check_finite(const Tensor<T>& t, const std::string& where) {
    if (!all_finite(t.span())) throw NumericalError("non-finite activation in " + where);
}

// y += bias broadcast over rows
template <class T>
void add_bias(Tensor<T>& y, const Tensor<T>& bias) {
    const std::size_t cols = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
        T* row = y.data.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += bias.data[c];
    }
}

template <class T>
void column_sums(const Tensor<T>& x, Tensor<T>& out) {
    const std::size_t cols = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const T* row = x.data.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) out.data[c] += row[c];
    }
}

template <class T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
    Tensor<T> y = matrix<T>(x.rows(), w.cols());
    kernels::gemm_nn(x.rows(), w.cols(), x.cols(), x.span(), w.span(), y.span());
    return y;
}

template <class T>
Tensor<T> dropout_mask(std::size_t rows, std::size_t cols, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return {};
    Tensor<T> m = matrix<T>(rows, cols);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& v : m.data) v = rng->uniform() < rate ? T(0) : keep_scale;
    return m;
}

template <class T>
void layer_norm_backward(const Tensor<T>& dy, const Tensor<T>& xhat, const std::vector<T>& rstd,
                         const Tensor<T>& gain, Tensor<T>& dx, Tensor<T>& dgain, Tensor<T>& dbias) {
    const std::size_t rows = dy.rows(), d = dy.cols();
    dx = matrix<T>(rows, d);
    std::vector<T> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* g = dy.data.data() + r * d;
        const T* xh = xhat.data.data() + r * d;
        T mean_d = 0, mean_dx = 0;
        for (std::size_t c = 0; c < d; ++c) {
            dgain.data[c] += g[c] * xh[c];
            dbias.data[c] += g[c];
            dxhat[c] = g[c] * gain.data[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xh[c];
        }
        mean_d /= static_cast<T>(d);
        mean_dx /= static_cast<T>(d);
        T* out = dx.data.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) out[c] = rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
    }
}

template <class T>
void validate_batch(const EncoderParams<T>& params, const TokenBatch& batch) {
    const auto& cfg = params.config;
    if (batch.batch == 0) throw InputError("empty token batch");
    if (batch.max_len > cfg.max_positions)
        throw InputError("batch length " + std::to_string(batch.max_len) + " exceeds max_positions " +
                         std::to_string(cfg.max_positions));
    if (batch.ids.size() != batch.batch * batch.max_len || batch.mask.size() != batch.ids.size())
        throw InputError("token batch shape mismatch");
    for (auto id : batch.ids)
        if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
            throw InputError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                             std::to_string(cfg.vocab_size));
}

template <class T>
Tensor<T> layer_forward(const EncoderParams<T>& params, const LayerParams<T>& lp, const Tensor<T>& x,
                        std::size_t batch, std::size_t len, std::span<const std::uint8_t> mask, Rng* rng,
                        LayerCache<T>& cache) {
    const auto& cfg = params.config;
    const std::size_t d = cfg.d_model, heads = cfg.n_heads, dh = cfg.head_dim(), rows = batch * len;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    const T neg_inf = -std::numeric_limits<T>::infinity();

    cache.q = matmul(x, lp.wq);
    cache.k = matmul(x, lp.wk);
    cache.v = matmul(x, lp.wv);
    cache.probs = Tensor<T>({batch, heads, len, len});
    cache.attn = matrix<T>(rows, d);

    // Padded query rows keep zero attention. Nothing unmasked reads them, and
    // their gradients are zero, so skipping them changes no unmasked value.
    const auto ops = kernels::vector_ops<T>();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < len; ++i) {
                if (!mask[b * len + i]) continue;
                T* p = cache.probs.data.data() + ((b * heads + h) * len + i) * len;
                const T* qi = cache.q.data.data() + (b * len + i) * d + h * dh;
                T maxv = neg_inf;
                for (std::size_t j = 0; j < len; ++j) {
                    if (!mask[b * len + j]) {
                        p[j] = neg_inf;
                        continue;
                    }
                    p[j] = ops.dot(qi, cache.k.data.data() + (b * len + j) * d + h * dh, dh) * scale;
                    maxv = std::max(maxv, p[j]);
                }
                T sum = 0;
                for (std::size_t j = 0; j < len; ++j) {
                    p[j] = std::exp(p[j] - maxv);
                    sum += p[j];
                }
                const T inv = T(1) / sum;
                T* out = cache.attn.data.data() + (b * len + i) * d + h * dh;
                for (std::size_t j = 0; j < len; ++j) {
                    p[j] *= inv;
                    if (p[j] != T(0)) ops.axpy(p[j], cache.v.data.data() + (b * len + j) * d + h * dh, out, dh);
                }
            }
        }
    }

    Tensor<T> s1 = matmul(cache.attn, lp.wo);
    cache.drop1 = dropout_mask<T>(rows, d, cfg.dropout_rate, rng);
    if (!cache.drop1.empty())
        for (std::size_t i = 0; i < s1.size(); ++i) s1.data[i] *= cache.drop1.data[i];
    for (std::size_t i = 0; i < s1.size(); ++i) s1.data[i] += x.data[i];
    layer_norm_forward(s1, lp.ln1_gain, lp.ln1_bias, cache.h1, cache.ln1_xhat, cache.ln1_rstd);

    cache.z1 = matmul(cache.h1, lp.w1);
    add_bias(cache.z1, lp.b1);
    cache.r = cache.z1;
    for (auto& v : cache.r.data) v = v > T(0) ? v : T(0);
    Tensor<T> s2 = matmul(cache.r, lp.w2);
    add_bias(s2, lp.b2);
    cache.drop2 = dropout_mask<T>(rows, d, cfg.dropout_rate, rng);
    if (!cache.drop2.empty())
        for (std::size_t i = 0; i < s2.size(); ++i) s2.data[i] *= cache.drop2.data[i];
    for (std::size_t i = 0; i < s2.size(); ++i) s2.data[i] += cache.h1.data[i];
    Tensor<T> y;
    layer_norm_forward(s2, lp.ln2_gain, lp.ln2_bias, y, cache.ln2_xhat, cache.ln2_rstd);
    return y;
}

// Returns dx; accumulates parameter gradients into g.
template <class T>
Tensor<T> layer_backward(const EncoderParams<T>& params, const LayerParams<T>& lp, const Tensor<T>& x,
                         const LayerCache<T>& cache, const Tensor<T>& dy, std::size_t batch, std::size_t len,
                         std::span<const std::uint8_t> mask, LayerParams<T>& g) {
    const auto& cfg = params.config;
    const std::size_t d = cfg.d_model, heads = cfg.n_heads, dh = cfg.head_dim(), ff = cfg.d_ff;
    const std::size_t rows = batch * len;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    Tensor<T> ds2;
    layer_norm_backward(dy, cache.ln2_xhat, cache.ln2_rstd, lp.ln2_gain, ds2, g.ln2_gain, g.ln2_bias);

    Tensor<T> dh1 = ds2;
    Tensor<T> df = ds2;
    if (!cache.drop2.empty())
        for (std::size_t i = 0; i < df.size(); ++i) df.data[i] *= cache.drop2.data[i];
    column_sums(df, g.b2);
    kernels::gemm_tn(ff, d, rows, cache.r.span(), df.span(), g.w2.span());
    Tensor<T> dz = matrix<T>(rows, ff);
    kernels::gemm_nt(rows, ff, d, df.span(), lp.w2.span(), dz.span());
    for (std::size_t i = 0; i < dz.size(); ++i)
        if (cache.z1.data[i] <= T(0)) dz.data[i] = 0;
    column_sums(dz, g.b1);
    kernels::gemm_tn(d, ff, rows, cache.h1.span(), dz.span(), g.w1.span());
    kernels::gemm_nt(rows, d, ff, dz.span(), lp.w1.span(), dh1.span());

    Tensor<T> ds1;
    layer_norm_backward(dh1, cache.ln1_xhat, cache.ln1_rstd, lp.ln1_gain, ds1, g.ln1_gain, g.ln1_bias);

    Tensor<T> dx = ds1;
    Tensor<T> dout = ds1;
    if (!cache.drop1.empty())
        for (std::size_t i = 0; i < dout.size(); ++i) dout.data[i] *= cache.drop1.data[i];
    kernels::gemm_tn(d, d, rows, cache.attn.span(), dout.span(), g.wo.span());
    Tensor<T> dattn = matrix<T>(rows, d);
    kernels::gemm_nt(rows, d, d, dout.span(), lp.wo.span(), dattn.span());

    Tensor<T> dq = matrix<T>(rows, d), dk = matrix<T>(rows, d), dv = matrix<T>(rows, d);
    std::vector<T> dp(len);
    const auto ops = kernels::vector_ops<T>();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < len; ++i) {
                if (!mask[b * len + i]) continue;
                const T* p = cache.probs.data.data() + ((b * heads + h) * len + i) * len;
                const T* dai = dattn.data.data() + (b * len + i) * d + h * dh;
                T weighted = 0;
                for (std::size_t j = 0; j < len; ++j) {
                    if (p[j] == T(0)) {
                        dp[j] = 0;
                        continue;
                    }
                    const std::size_t row_j = (b * len + j) * d + h * dh;
                    dp[j] = ops.dot(dai, cache.v.data.data() + row_j, dh);
                    ops.axpy(p[j], dai, dv.data.data() + row_j, dh);
                    weighted += p[j] * dp[j];
                }
                const std::size_t row_i = (b * len + i) * d + h * dh;
                T* dqi = dq.data.data() + row_i;
                const T* qi = cache.q.data.data() + row_i;
                for (std::size_t j = 0; j < len; ++j) {
                    if (p[j] == T(0)) continue;
                    const T ds = p[j] * (dp[j] - weighted) * scale;
                    const std::size_t row_j = (b * len + j) * d + h * dh;
                    ops.axpy(ds, cache.k.data.data() + row_j, dqi, dh);
                    ops.axpy(ds, qi, dk.data.data() + row_j, dh);
                }
            }
        }
    }

    kernels::gemm_tn(d, d, rows, x.span(), dq.span(), g.wq.span());
    kernels::gemm_tn(d, d, rows, x.span(), dk.span(), g.wk.span());
    kernels::gemm_tn(d, d, rows, x.span(), dv.span(), g.wv.span());
    kernels::gemm_nt(rows, d, d, dq.span(), lp.wq.span(), dx.span());
    kernels::gemm_nt(rows, d, d, dk.span(), lp.wk.span(), dx.span());
    kernels::gemm_nt(rows, d, d, dv.span(), lp.wv.span(), dx.span());
    return dx;
}

}  // namespace

template <class T>
EncoderParams<T> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    const std::size_t d = config.d_model, ff = config.d_ff;
    EncoderParams<T> p;
    p.config = config;
    p.token_embedding = matrix<T>(config.vocab_size, d);
    p.position_embedding = matrix<T>(config.max_positions, d);
    fill_normal(p.token_embedding, rng, 0.5);
    fill_normal(p.position_embedding, rng, 0.1);
    p.layers.resize(config.n_layers);
    for (auto& l : p.layers) {
        for (Tensor<T>* w : {&l.wq, &l.wk, &l.wv, &l.wo}) {
            *w = matrix<T>(d, d);
            xavier(*w, rng);
        }
        l.w1 = matrix<T>(d, ff);
        xavier(l.w1, rng);
        l.b1 = Tensor<T>({ff});
        l.w2 = matrix<T>(ff, d);
        xavier(l.w2, rng);
        l.b2 = Tensor<T>({d});
        l.ln1_gain = Tensor<T>({d}, T(1));
        l.ln1_bias = Tensor<T>({d});
        l.ln2_gain = Tensor<T>({d}, T(1));
        l.ln2_bias = Tensor<T>({d});
    }
    return p;
}

template <class T>
void layer_norm_forward(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, Tensor<T>& y,
                        Tensor<T>& xhat, std::vector<T>& rstd) {
    const std::size_t rows = x.rows(), d = x.cols();
    y = matrix<T>(rows, d);
    xhat = matrix<T>(rows, d);
    rstd.assign(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = x.data.data() + r * d;
        T mean = 0;
        for (std::size_t c = 0; c < d; ++c) mean += in[c];
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<T>(d);
        rstd[r] = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        T* xh = xhat.data.data() + r * d;
        T* out = y.data.data() + r * d;
        for (std::size_t c = 0; c < d; ++c) {
            xh[c] = (in[c] - mean) * rstd[r];
            out[c] = gain.data[c] * xh[c] + bias.data[c];
        }
    }
}

template <class T>
EncoderTape<T> encoder_forward(const EncoderParams<T>& params, const TokenBatch& batch,
                               const ForwardOptions& options) {
    validate_batch(params, batch);
    const auto& cfg = params.config;
    const std::size_t top = options.top_layer.value_or(cfg.n_layers);
    if (top > cfg.n_layers) throw InputError("requested layer " + std::to_string(top) + " beyond encoder depth");

    EncoderTape<T> tape;
    tape.batch = batch.batch;
    tape.len = options.trim ? batch.active_length() : batch.max_len;
    const std::size_t len = tape.len, d = cfg.d_model;
    tape.ids.resize(batch.batch * len);
    tape.mask.resize(batch.batch * len);
    for (std::size_t b = 0; b < batch.batch; ++b)
        for (std::size_t t = 0; t < len; ++t) {
            tape.ids[b * len + t] = batch.ids[b * batch.max_len + t];
            tape.mask[b * len + t] = batch.mask[b * batch.max_len + t];
        }

    Tensor<T> x = matrix<T>(batch.batch * len, d);
    for (std::size_t b = 0; b < batch.batch; ++b)
        for (std::size_t t = 0; t < len; ++t) {
            T* out = x.data.data() + (b * len + t) * d;
            const T* tok = params.token_embedding.data.data() + static_cast<std::size_t>(tape.ids[b * len + t]) * d;
            const T* pos = params.position_embedding.data.data() + t * d;
            for (std::size_t c = 0; c < d; ++c) out[c] = tok[c] + pos[c];
        }
    check_finite(x, "embeddings");
    tape.states.push_back(std::move(x));
    tape.caches.resize(top);
    for (std::size_t l = 0; l < top; ++l) {
        Tensor<T> y = layer_forward(params, params.layers[l], tape.states[l], batch.batch, len, tape.mask,
                                    options.dropout_rng, tape.caches[l]);
        check_finite(y, "layer " + std::to_string(l + 1));
        tape.states.push_back(std::move(y));
    }
    return tape;
}

template <class T>
void encoder_backward(const EncoderParams<T>& params, const EncoderTape<T>& tape, std::vector<Tensor<T>> d_states,
                      EncoderParams<T>& grads) {
    const std::size_t top = tape.top_layer();
    const std::size_t d = params.config.d_model;
    const std::size_t rows = tape.batch * tape.len;
    d_states.resize(top + 1);
    Tensor<T> dy = d_states[top].empty() ? matrix<T>(rows, d) : std::move(d_states[top]);
    for (std::size_t l = top; l-- > 0;) {
        dy = layer_backward(params, params.layers[l], tape.states[l], tape.caches[l], dy, tape.batch, tape.len,
                            tape.mask, grads.layers[l]);
        if (!d_states[l].empty())
            for (std::size_t i = 0; i < dy.size(); ++i) dy.data[i] += d_states[l].data[i];
    }
    for (std::size_t b = 0; b < tape.batch; ++b)
        for (std::size_t t = 0; t < tape.len; ++t) {
            const T* g = dy.data.data() + (b * tape.len + t) * d;
            T* tok = grads.token_embedding.data.data() + static_cast<std::size_t>(tape.ids[b * tape.len + t]) * d;
            T* pos = grads.position_embedding.data.data() + t * d;
            for (std::size_t c = 0; c < d; ++c) {
                tok[c] += g[c];
                pos[c] += g[c];
            }
        }
}

template <class T>
HiddenStates<T> encode(const EncoderParams<T>& params, const TokenBatch& batch) {
    ForwardOptions options;
    options.trim = false;
    EncoderTape<T> tape = encoder_forward(params, batch, options);
    HiddenStates<T> hs;
    hs.batch = batch.batch;
    hs.max_len = batch.max_len;
    for (auto& s : tape.states) {
        s.shape = {batch.batch, batch.max_len, params.config.d_model};
        hs.layers.push_back(std::move(s));
    }
    return hs;
}

template <class T>
Tensor<T> pool(const Tensor<T>& layer_states, std::span<const std::uint8_t> mask, std::size_t batch,
               std::size_t len, Pooling strategy) {
    const std::size_t d = layer_states.cols();
    Tensor<T> out = matrix<T>(batch, d);
    for (std::size_t b = 0; b < batch; ++b) {
        T* o = out.data.data() + b * d;
        if (strategy == Pooling::first_token) {
            const T* src = layer_states.data.data() + b * len * d;
            std::copy(src, src + d, o);
            continue;
        }
        std::size_t count = 0;
        for (std::size_t t = 0; t < len; ++t) {
            if (!mask[b * len + t]) continue;
            ++count;
            const T* src = layer_states.data.data() + (b * len + t) * d;
            for (std::size_t c = 0; c < d; ++c) o[c] += src[c];
        }
        const T inv = T(1) / static_cast<T>(std::max<std::size_t>(count, 1));
        for (std::size_t c = 0; c < d; ++c) o[c] *= inv;
    }
    return out;
}

template <class T>
Tensor<T> pool(const HiddenStates<T>& states, std::size_t layer, std::span<const std::uint8_t> mask,
               Pooling strategy) {
    if (layer >= states.layers.size()) throw InputError("pool: layer out of range");
    return pool(states.layers[layer], mask, states.batch, states.max_len, strategy);
}

template <class T>
Tensor<T> pool_backward(const Tensor<T>& d_pooled, std::span<const std::uint8_t> mask, std::size_t batch,
                        std::size_t len, Pooling strategy) {
    const std::size_t d = d_pooled.cols();
    Tensor<T> out = matrix<T>(batch * len, d);
    for (std::size_t b = 0; b < batch; ++b) {
        const T* g = d_pooled.data.data() + b * d;
        if (strategy == Pooling::first_token) {
            std::copy(g, g + d, out.data.data() + b * len * d);
            continue;
        }
        std::size_t count = 0;
        for (std::size_t t = 0; t < len; ++t) count += mask[b * len + t] ? 1 : 0;
        const T inv = T(1) / static_cast<T>(std::max<std::size_t>(count, 1));
        for (std::size_t t = 0; t < len; ++t) {
            if (!mask[b * len + t]) continue;
            T* o = out.data.data() + (b * len + t) * d;
            for (std::size_t c = 0; c < d; ++c) o[c] = g[c] * inv;
        }
    }
    return out;
}

template <class T>
TargetInit<T> init_target_from_source(const EncoderParams<T>& source, ShareMode mode, const EncoderConfig* expected) {
    if (expected != nullptr && !(*expected == source.config))
        throw ArtifactMismatch("source and target encoder configurations differ");
    if (mode.kind == ShareMode::Kind::partial && mode.frozen_layers > source.config.n_layers)
        throw InputError("cannot freeze " + std::to_string(mode.frozen_layers) + " layers of a " +
                         std::to_string(source.config.n_layers) + "-layer encoder");
    TargetInit<T> init{source, {}};
    if (mode.kind == ShareMode::Kind::partial) {
        const std::string& pre = init.params.prefix;
        init.frozen.insert(pre + "token_embedding");
        init.frozen.insert(pre + "position_embedding");
        for (std::size_t l = 0; l < mode.frozen_layers; ++l) {
            const std::string lp = pre + "layers." + std::to_string(l) + ".";
            for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"})
                init.frozen.insert(lp + name);
        }
    }
    return init;
}

#define XPCB_INSTANTIATE(T)                                                                                       \
    template EncoderParams<T> init_encoder<T>(const EncoderConfig&, std::uint64_t);                              \
    template HiddenStates<T> encode<T>(const EncoderParams<T>&, const TokenBatch&);                              \
    template Tensor<T> pool<T>(const Tensor<T>&, std::span<const std::uint8_t>, std::size_t, std::size_t, Pooling); \
    template Tensor<T> pool<T>(const HiddenStates<T>&, std::size_t, std::span<const std::uint8_t>, Pooling);     \
    template Tensor<T> pool_backward<T>(const Tensor<T>&, std::span<const std::uint8_t>, std::size_t, std::size_t, \
                                        Pooling);                                                                \
    template EncoderTape<T> encoder_forward<T>(const EncoderParams<T>&, const TokenBatch&, const ForwardOptions&); \
    template void encoder_backward<T>(const EncoderParams<T>&, const EncoderTape<T>&, std::vector<Tensor<T>>,    \
                                      EncoderParams<T>&);                                                        \
    template void layer_norm_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&,        \
                                        Tensor<T>&, std::vector<T>&);                                            \
    template TargetInit<T> init_target_from_source<T>(const EncoderParams<T>&, ShareMode, const EncoderConfig*);

XPCB_INSTANTIATE(float)
XPCB_INSTANTIATE(double)

#undef XPCB_INSTANTIATE

}  // namespace xpcb
