#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "xpcb/encoder.hpp"
#include "xpcb/errors.hpp"
#include "xpcb/kernels.hpp"
#include "xpcb/optim.hpp"

using namespace xpcb;

namespace {

EncoderConfig small_config(std::size_t layers = 4, std::size_t d = 64) {
    EncoderConfig c;
    c.vocab_size = 20;
    c.d_model = d;
    c.n_layers = layers;
    c.n_heads = 4;
    c.d_ff = 2 * d;
    c.max_positions = 16;
    c.dropout_rate = 0.0;
    return c;
}

TokenBatch make_batch(const std::vector<std::vector<std::int32_t>>& rows, std::size_t len) {
    TokenBatch b;
    b.batch = rows.size();
    b.max_len = len;
    b.ids.assign(b.batch * len, Vocabulary::kPad);
    b.mask.assign(b.batch * len, 0);
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t t = 0; t < rows[r].size(); ++t) {
            b.ids[r * len + t] = rows[r][t];
            b.mask[r * len + t] = 1;
        }
    return b;
}

// Textbook post-norm layer written out with plain loops.
std::vector<double> layer_norm_rows(const std::vector<double>& x, std::size_t d, const Tensor<double>& g,
                                    const Tensor<double>& b) {
    std::vector<double> y(x.size());
    for (std::size_t r = 0; r < x.size() / d; ++r) {
        double mean = 0, var = 0;
        for (std::size_t c = 0; c < d; ++c) mean += x[r * d + c];
        mean /= d;
        for (std::size_t c = 0; c < d; ++c) var += (x[r * d + c] - mean) * (x[r * d + c] - mean);
        var /= d;
        for (std::size_t c = 0; c < d; ++c)
            y[r * d + c] = g.data[c] * (x[r * d + c] - mean) / std::sqrt(var + kLayerNormEps) + b.data[c];
    }
    return y;
}

std::vector<double> matmul_rows(const std::vector<double>& x, std::size_t rows, std::size_t k, const Tensor<double>& w) {
    const std::size_t n = w.cols();
    std::vector<double> y(rows * n, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) y[r * n + j] += x[r * k + p] * w(p, j);
    return y;
}

std::vector<std::vector<double>> oracle_encode(const EncoderParams<double>& p, const TokenBatch& batch) {
    const auto& cfg = p.config;
    const std::size_t d = cfg.d_model, len = batch.max_len, dh = cfg.head_dim();
    std::vector<std::vector<double>> states;
    std::vector<double> x(batch.batch * len * d);
    for (std::size_t b = 0; b < batch.batch; ++b)
        for (std::size_t t = 0; t < len; ++t)
            for (std::size_t c = 0; c < d; ++c)
                x[(b * len + t) * d + c] =
                    p.token_embedding(static_cast<std::size_t>(batch.ids[b * len + t]), c) + p.position_embedding(t, c);
    states.push_back(x);
    for (const auto& lp : p.layers) {
        std::vector<double> out(x.size());
        for (std::size_t b = 0; b < batch.batch; ++b) {
            std::vector<double> xb(x.begin() + static_cast<std::ptrdiff_t>(b * len * d),
                                   x.begin() + static_cast<std::ptrdiff_t>((b + 1) * len * d));
            auto q = matmul_rows(xb, len, d, lp.wq), k = matmul_rows(xb, len, d, lp.wk), v = matmul_rows(xb, len, d, lp.wv);
            std::vector<double> attn(len * d, 0.0);
            for (std::size_t h = 0; h < cfg.n_heads; ++h)
                for (std::size_t i = 0; i < len; ++i) {
                    std::vector<double> s(len, -1e300);
                    double mx = -1e300;
                    for (std::size_t j = 0; j < len; ++j) {
                        if (!batch.mask[b * len + j]) continue;
                        double dotv = 0;
                        for (std::size_t c = 0; c < dh; ++c) dotv += q[i * d + h * dh + c] * k[j * d + h * dh + c];
                        s[j] = dotv / std::sqrt(static_cast<double>(dh));
                        mx = std::max(mx, s[j]);
                    }
                    double z = 0;
                    for (std::size_t j = 0; j < len; ++j) {
                        s[j] = batch.mask[b * len + j] ? std::exp(s[j] - mx) : 0.0;
                        z += s[j];
                    }
                    for (std::size_t j = 0; j < len; ++j)
                        for (std::size_t c = 0; c < dh; ++c) attn[i * d + h * dh + c] += s[j] / z * v[j * d + h * dh + c];
                }
            auto o = matmul_rows(attn, len, d, lp.wo);
            for (std::size_t i = 0; i < o.size(); ++i) o[i] += xb[i];
            auto h1 = layer_norm_rows(o, d, lp.ln1_gain, lp.ln1_bias);
            auto z1 = matmul_rows(h1, len, d, lp.w1);
            for (std::size_t i = 0; i < z1.size(); ++i) z1[i] = std::max(0.0, z1[i] + lp.b1.data[i % cfg.d_ff]);
            auto f = matmul_rows(z1, len, cfg.d_ff, lp.w2);
            for (std::size_t i = 0; i < f.size(); ++i) f[i] += lp.b2.data[i % d] + h1[i];
            auto y = layer_norm_rows(f, d, lp.ln2_gain, lp.ln2_bias);
            std::copy(y.begin(), y.end(), out.begin() + static_cast<std::ptrdiff_t>(b * len * d));
        }
        x = out;
        states.push_back(x);
    }
    return states;
}

bool unmasked_equal(const Tensor<float>& a, const Tensor<float>& b, const TokenBatch& batch, std::size_t d) {
    for (std::size_t r = 0; r < batch.batch * batch.max_len; ++r) {
        if (!batch.mask[r]) continue;
        for (std::size_t c = 0; c < d; ++c)
            if (a.data[r * d + c] != b.data[r * d + c]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("hidden states have one tensor per layer plus embeddings") {
    const auto p = init_encoder<float>(small_config(), 1);
    const auto batch = make_batch({{2, 5, 6, 7}, {2, 8}}, 8);
    const auto hs = encode(p, batch);
    REQUIRE(hs.layers.size() == 5);
    for (const auto& t : hs.layers) CHECK(t.shape == std::vector<std::size_t>{2, 8, 64});
}

TEST_CASE("forward pass matches a plain-loop oracle") {
    const auto p = init_encoder<double>(small_config(2, 16), 3);
    const auto batch = make_batch({{2, 5, 6, 7, 9}, {2, 8, 3}}, 6);
    const auto hs = encode(p, batch);
    const auto ref = oracle_encode(p, batch);
    for (std::size_t l = 0; l < ref.size(); ++l)
        for (std::size_t r = 0; r < batch.batch * batch.max_len; ++r) {
            if (!batch.mask[r]) continue;
            for (std::size_t c = 0; c < 16; ++c) REQUIRE(std::abs(hs.layers[l].data[r * 16 + c] - ref[l][r * 16 + c]) < 1e-10);
        }
}

TEST_CASE("zero attention projection leaves only the FFN residual path") {
    auto p = init_encoder<double>(small_config(1, 16), 4);
    auto& lp = p.layers[0];
    lp.wo.zero();
    lp.ln1_gain.fill(1.0);
    lp.ln1_bias.zero();
    const auto batch = make_batch({{2, 5, 6}}, 3);
    const auto hs = encode(p, batch);
    // h = LN(x); y = LN2(h + FFN(h))
    const auto& x = hs.layers[0].data;
    const std::vector<double> xv(x.begin(), x.end());
    const auto h = layer_norm_rows(xv, 16, lp.ln1_gain, lp.ln1_bias);
    auto z = matmul_rows(h, 3, 16, lp.w1);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = std::max(0.0, z[i] + lp.b1.data[i % 32]);
    auto f = matmul_rows(z, 3, 32, lp.w2);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] += lp.b2.data[i % 16] + h[i];
    const auto y = layer_norm_rows(f, 16, lp.ln2_gain, lp.ln2_bias);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(std::abs(hs.layers[1].data[i] - y[i]) < 1e-12);
}

TEST_CASE("padding never influences unmasked positions") {
    auto p = init_encoder<float>(small_config(), 5);
    const auto batch = make_batch({{2, 5, 6, 7}, {2, 8}}, 8);
    const auto before = encode(p, batch);
    for (std::size_t c = 0; c < 64; ++c) p.token_embedding(Vocabulary::kPad, c) += 3.0f;
    const auto after = encode(p, batch);
    for (std::size_t l = 0; l < before.layers.size(); ++l) CHECK(unmasked_equal(before.layers[l], after.layers[l], batch, 64));
}

TEST_CASE("trimmed forward equals full-length forward on unmasked positions") {
    const auto p = init_encoder<float>(small_config(), 6);
    const auto batch = make_batch({{2, 5, 6}, {2, 8}}, 10);
    const auto full = encode(p, batch);
    const auto tape = encoder_forward(p, batch);
    REQUIRE(tape.len == 3);
    for (std::size_t l = 0; l < full.layers.size(); ++l)
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t t = 0; t < 3; ++t) {
                if (!batch.mask[b * 10 + t]) continue;
                for (std::size_t c = 0; c < 64; ++c)
                    REQUIRE(tape.states[l].data[(b * 3 + t) * 64 + c] == full.layers[l].data[(b * 10 + t) * 64 + c]);
            }
}

TEST_CASE("permuting the batch permutes the outputs") {
    const auto p = init_encoder<float>(small_config(), 7);
    const std::vector<std::vector<std::int32_t>> rows{{2, 5, 6, 7}, {2, 8}, {2, 9, 10, 11, 12}};
    const auto a = encode(p, make_batch(rows, 6));
    const auto b = encode(p, make_batch({rows[2], rows[0], rows[1]}, 6));
    const std::size_t stride = 6 * 64;
    const std::size_t perm[3] = {1, 2, 0};  // row i of a sits at perm[i] in b
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t t = 0; t < rows[i].size(); ++t)
                for (std::size_t c = 0; c < 64; ++c)
                    REQUIRE(a.layers[l].data[i * stride + t * 64 + c] == b.layers[l].data[perm[i] * stride + t * 64 + c]);
}

TEST_CASE("encode is deterministic and init is seeded") {
    const auto batch = make_batch({{2, 5, 6, 7}, {2, 8}}, 8);
    const auto p1 = init_encoder<float>(small_config(), 11), p2 = init_encoder<float>(small_config(), 11);
    CHECK(params_equal(p1, p2));
    CHECK_FALSE(params_equal(p1, init_encoder<float>(small_config(), 12)));
    CHECK(encode(p1, batch).layers.back().data == encode(p2, batch).layers.back().data);
}

TEST_CASE("encoder output agrees across kernel ISAs") {
    const auto p = init_encoder<float>(small_config(), 13);
    const auto batch = make_batch({{2, 5, 6, 7, 9, 10, 11}, {2, 8}}, 8);
    std::vector<float> ref;
    {
        kernels::ScopedIsa scope(kernels::Isa::scalar);
        ref = encode(p, batch).layers.back().data;
    }
    for (auto isa : {kernels::Isa::avx2, kernels::Isa::neon}) {
        if (!kernels::isa_supported(isa)) continue;
        kernels::ScopedIsa scope(isa);
        const auto got = encode(p, batch).layers.back().data;
        for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(got[i] - ref[i]) < 1e-4);
    }
}

TEST_CASE("layer norm standardises every row") {
    Rng rng(2);
    Tensor<double> x = matrix<double>(50, 32);
    for (auto& v : x.data) v = rng.normal() * 5.0 + 3.0;
    Tensor<double> g({32}, 1.0), b({32}, 0.0), y, xhat;
    std::vector<double> rstd;
    layer_norm_forward(x, g, b, y, xhat, rstd);
    for (std::size_t r = 0; r < 50; ++r) {
        double mean = 0, var = 0;
        for (double v : xhat.row(r)) mean += v;
        mean /= 32;
        for (double v : xhat.row(r)) var += (v - mean) * (v - mean);
        var /= 32;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-3);
    }
}

TEST_CASE("pooling strategies") {
    Tensor<float> states({1, 2, 2});
    states.data = {1, 3, 5, 7};
    const std::vector<std::uint8_t> both{1, 1}, first{1, 0};
    CHECK(pool(states, both, 1, 2, Pooling::mean).data == std::vector<float>{3, 5});
    CHECK(pool(states, first, 1, 2, Pooling::mean).data == std::vector<float>{1, 3});
    CHECK(pool(states, first, 1, 2, Pooling::first_token).data == std::vector<float>{1, 3});
    CHECK(pool(states, both, 1, 2, Pooling::first_token).data == std::vector<float>{1, 3});

    // pool_backward is the adjoint of pool.
    Tensor<float> d = matrix<float>(1, 2);
    d.data = {1, 2};
    const auto g = pool_backward(d, first, 1, 2, Pooling::mean);
    CHECK(g.data == std::vector<float>{1, 2, 0, 0});
}

TEST_CASE("full sharing copies the source bit for bit") {
    const auto src = init_encoder<float>(small_config(), 21);
    const auto init = init_target_from_source(src, ShareMode::full());
    CHECK(params_equal(src, init.params));
    CHECK(init.frozen.empty());
    auto other = small_config();
    other.d_model = 32;
    CHECK_THROWS_AS(init_target_from_source(src, ShareMode::full(), &other), ArtifactMismatch);
    CHECK_THROWS_AS(init_target_from_source(src, ShareMode::partial(5)), InputError);
}

TEST_CASE("partial sharing keeps frozen tensors equal to the source after updates") {
    const auto src = init_encoder<float>(small_config(), 22);
    for (std::size_t k : {std::size_t{2}, std::size_t{4}}) {
        auto init = init_target_from_source(src, ShareMode::partial(k));
        AdamConfig ac;
        ac.learning_rate = 1e-2;
        Adam<float, EncoderParams<float>> adam(init.params, ac, init.frozen);
        auto grads = zeros_like(init.params);
        grads.visit([](const std::string&, Tensor<float>& t) { t.fill(1.0f); });
        adam.step(init.params, grads);
        adam.step(init.params, grads);

        std::vector<std::pair<std::string, std::vector<float>>> before;
        src.visit([&](const std::string& n, const Tensor<float>& t) { before.emplace_back(n, t.data); });
        std::size_t i = 0;
        init.params.visit([&](const std::string& name, const Tensor<float>& t) {
            const bool frozen = init.frozen.count(name) > 0;
            const bool is_ln = name.find(".ln") != std::string::npos;
            if (frozen) CHECK(t.data == before[i].second);
            else CHECK(t.data != before[i].second);
            // Layer norm parameters are never frozen.
            if (is_ln) CHECK_FALSE(frozen);
            ++i;
        });
        CHECK(init.frozen.count("encoder.token_embedding"));
        CHECK(init.frozen.count("encoder.layers." + std::to_string(k - 1) + ".attn.wq"));
        if (k < 4) CHECK_FALSE(init.frozen.count("encoder.layers." + std::to_string(k) + ".attn.wq"));
    }
}

TEST_CASE("out-of-range ids are rejected") {
    const auto p = init_encoder<float>(small_config(), 1);
    CHECK_THROWS_AS(encode(p, make_batch({{2, 99}}, 4)), InputError);
    CHECK_THROWS_AS(encode(p, make_batch({{2, 5}}, 17)), InputError);
}
