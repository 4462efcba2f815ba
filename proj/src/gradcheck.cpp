#include "xpcb/gradcheck.hpp"

#include "xpcb/encoder.hpp"
#include "xpcb/heads.hpp"
#include "xpcb/losses.hpp"

namespace xpcb {

namespace {

constexpr std::size_t kHidden = 6;

EncoderConfig tiny_config(Pooling pooling) {
    EncoderConfig c;
    c.vocab_size = 11;
    c.d_model = 8;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 16;
    c.max_positions = 8;
    c.dropout_rate = 0.0;
    c.pooling = pooling;
    return c;
}

TokenBatch tiny_batch(Rng& rng, bool labeled) {
    TokenBatch b;
    b.batch = 2;
    b.max_len = 6;
    const std::size_t lengths[] = {6, 4};
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t j = 0; j < 6; ++j) {
            const bool real = j < lengths[r];
            b.ids.push_back(!real ? Vocabulary::kPad
                                  : j == 0 ? Vocabulary::kBos
                                           : static_cast<std::int32_t>(3 + rng.index(8)));
            b.mask.push_back(real ? 1 : 0);
        }
    if (labeled) b.labels = {1, 0};
    return b;
}

// Encoder and classifier trained jointly; the check covers both parameter sets.
struct EncoderClassifier {
    EncoderParams<double> enc;
    ClassifierParams<double> cls;
    template <class F>
    void visit(F&& f) {
        enc.visit(f);
        cls.visit(f);
    }
    template <class F>
    void visit(F&& f) const {
        enc.visit(f);
        cls.visit(f);
    }
};

}  // namespace

GradCheckResult check_encoder_cross_entropy(std::uint64_t seed, double step) {
    Rng rng(seed);
    EncoderClassifier m{init_encoder<double>(tiny_config(Pooling::mean), seed),
                        init_classifier<double>(8, kHidden, seed + 1)};
    const TokenBatch batch = tiny_batch(rng, true);
    const std::size_t top = m.enc.config.n_layers;

    auto loss = [&] {
        const auto tape = encoder_forward(m.enc, batch);
        const auto probs = classifier_forward(m.cls, tape.pooled(top, Pooling::mean), HeadMode::train);
        return cross_entropy(probs, batch.labels).value;
    };

    EncoderClassifier grads = zeros_like(m);
    {
        const auto tape = encoder_forward(m.enc, batch);
        ClassifierCache<double> cache;
        const auto probs = classifier_forward(m.cls, tape.pooled(top, Pooling::mean), HeadMode::train, &cache);
        const auto ce = cross_entropy(probs, batch.labels);
        const auto d_pooled = classifier_backward(m.cls, cache, ce.grad, grads.cls);
        std::vector<Tensor<double>> d_states(top + 1);
        d_states[top] = pool_backward(d_pooled, tape.mask, tape.batch, tape.len, Pooling::mean);
        encoder_backward(m.enc, tape, std::move(d_states), grads.enc);
    }
    return gradient_check(m, grads, loss, step);
}

GradCheckResult check_discriminator_loss(std::uint64_t seed, double step) {
    Rng rng(seed);
    DiscriminatorParams<double> disc = init_discriminator<double>(8, kHidden, seed);
    Tensor<double> fs = matrix<double>(2, 8), ft = matrix<double>(2, 8);
    for (double& v : fs.data) v = rng.normal();
    for (double& v : ft.data) v = rng.normal() + 0.5;

    auto loss = [&] { return discriminator_loss(discriminator_forward(disc, fs), discriminator_forward(disc, ft)).value; };

    DiscriminatorParams<double> grads = zeros_like(disc);
    DiscriminatorCache<double> cs, ct;
    const auto ps = discriminator_forward(disc, fs, &cs);
    const auto pt = discriminator_forward(disc, ft, &ct);
    const auto dl = discriminator_loss(ps, pt);
    discriminator_backward(disc, cs, dl.grad_source, grads);
    discriminator_backward(disc, ct, dl.grad_target, grads);
    return gradient_check(disc, grads, loss, step);
}

GradCheckResult check_target_encoder_adaptation(std::uint64_t seed, double step) {
    Rng rng(seed);
    const EncoderConfig cfg = tiny_config(Pooling::first_token);
    const EncoderParams<double> source = init_encoder<double>(cfg, seed);
    // Start the target away from the source so the KLD term is non-trivial.
    EncoderParams<double> target = init_target_from_source(source, ShareMode::full()).params;
    target.visit([&](const std::string&, Tensor<double>& t) {
        for (double& v : t.data) v += 0.05 * rng.normal();
    });
    ClassifierParams<double> cls = init_classifier<double>(8, kHidden, seed + 1);
    for (double& v : cls.running_mean.data) v = 0.1 * rng.normal();
    for (double& v : cls.running_var.data) v = 0.5 + rng.uniform();
    const DiscriminatorParams<double> disc = init_discriminator<double>(8, kHidden, seed + 2);
    const TokenBatch s = tiny_batch(rng, false), t = tiny_batch(rng, false);
    const std::size_t adv = 1, top = cfg.n_layers;
    const double lambda = 1.0;

    const auto p_src = classifier_eval(cls, encoder_forward(source, s).pooled(top, cfg.pooling));
    auto loss = [&] {
        const double a = adversarial_encoder_loss(
                             discriminator_forward(disc, encoder_forward(target, t).pooled(adv, cfg.pooling)))
                             .value;
        const auto p_tgt = classifier_eval(cls, encoder_forward(target, s).pooled(top, cfg.pooling));
        return a + lambda * kld_measurer_loss(p_src, p_tgt).value;
    };

    EncoderParams<double> grads = zeros_like(target);
    DiscriminatorParams<double> d_scratch = zeros_like(disc);
    ClassifierParams<double> c_scratch = zeros_like(cls);
    {
        const auto tape = encoder_forward(target, t);
        DiscriminatorCache<double> dc;
        const auto pt = discriminator_forward(disc, tape.pooled(adv, cfg.pooling), &dc);
        const auto al = adversarial_encoder_loss(pt);
        std::vector<Tensor<double>> d_states(top + 1);
        d_states[adv] = pool_backward(discriminator_backward(disc, dc, al.grad, d_scratch), tape.mask, tape.batch,
                                      tape.len, cfg.pooling);
        encoder_backward(target, tape, std::move(d_states), grads);
    }
    {
        const auto tape = encoder_forward(target, s);
        ClassifierCache<double> cc;
        const auto p_tgt = classifier_eval(cls, tape.pooled(top, cfg.pooling), &cc);
        auto kl = kld_measurer_loss(p_src, p_tgt);
        for (double& g : kl.grad.data) g *= lambda;
        std::vector<Tensor<double>> d_states(top + 1);
        d_states[top] = pool_backward(classifier_backward(cls, cc, kl.grad, c_scratch), tape.mask, tape.batch,
                                      tape.len, cfg.pooling);
        encoder_backward(target, tape, std::move(d_states), grads);
    }
    return gradient_check(target, grads, loss, step);
}

}  // namespace xpcb
