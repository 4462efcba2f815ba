#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "xpcb/errors.hpp"
#include "xpcb/gradcheck.hpp"
#include "xpcb/synthetic.hpp"
#include "xpcb/training.hpp"

using namespace xpcb;

TEST_CASE("gradient check: encoder + cross-entropy") {
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto r = check_encoder_cross_entropy(seed);
        INFO("seed " << seed << " worst " << r.worst_tensor << " err " << r.max_relative_error);
        CHECK(r.max_relative_error < 1e-3);
    }
}

TEST_CASE("gradient check: discriminator") {
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto r = check_discriminator_loss(seed);
        INFO("seed " << seed << " worst " << r.worst_tensor << " err " << r.max_relative_error);
        CHECK(r.max_relative_error < 1e-3);
    }
}

TEST_CASE("gradient check: target encoder adversarial + KLD") {
    for (std::uint64_t seed : {0, 1, 2}) {
        const auto r = check_target_encoder_adaptation(seed);
        INFO("seed " << seed << " worst " << r.worst_tensor << " err " << r.max_relative_error);
        CHECK(r.max_relative_error < 1e-3);
    }
}

// ---------------------------------------------------------------- training loops

namespace {

struct Fixture {
    Corpus source, target;
    Vocabulary vocab;
    EncodedCorpus source_enc, target_enc;
    EncoderConfig enc;

    explicit Fixture(std::size_t records = 600) {
        SyntheticConfig sc = SyntheticConfig::standard(2);
        sc.records_per_platform = records;
        sc.seed = 3;
        auto data = generate_synthetic(sc);
        source = Corpus(data[0]);
        target = Corpus(data[1]);
        std::vector<std::string> texts = source.texts();
        const UnlabeledView tv = target.unlabeled();
        texts.insert(texts.end(), tv.texts().begin(), tv.texts().end());
        vocab = build_vocab(std::span<const std::string>(texts), 1, 5000);
        source_enc = encode_corpus(source, vocab, 24);
        target_enc = encode_corpus(tv, vocab, 24);
        enc.vocab_size = vocab.size();
        enc.d_model = 16;
        enc.n_layers = 2;
        enc.n_heads = 2;
        enc.d_ff = 32;
        enc.max_positions = 24;
        enc.dropout_rate = 0.0;
    }

    SourceModel init(std::uint64_t seed = 1) const {
        return {init_encoder<float>(enc, seed), init_classifier<float>(16, 32, seed + 1), 2};
    }
};

TrainConfig fast_train() {
    TrainConfig t;
    t.adam.learning_rate = 1e-3;
    t.epochs = 4;
    t.seed = 5;
    return t;
}

EncodedCorpus unlabeled(const EncodedCorpus& c) {
    EncodedCorpus u = c;
    u.labels.clear();
    return u;
}

}  // namespace

// label 1 exactly when the post contains "bad"
Fixture keyword_fixture() {
    Fixture f(50);
    Rng rng(21);
    std::vector<PostRecord> recs;
    for (int i = 0; i < 600; ++i) {
        const bool pos = rng.bernoulli(0.3);
        const std::size_t len = 3 + rng.index(8), at = rng.index(len);
        std::string text;
        for (std::size_t t = 0; t < len; ++t)
            text += (t ? " " : "") + (pos && t == at ? std::string("bad") : "w" + std::to_string(rng.index(40)));
        recs.push_back({text, pos ? 1 : 0, "kw"});
    }
    f.source = Corpus(std::move(recs));
    f.vocab = build_vocab(f.source, 1, 5000);
    f.source_enc = encode_corpus(f.source, f.vocab, 24);
    f.enc.vocab_size = f.vocab.size();
    return f;
}

TEST_CASE("source training separates a keyword-labelled corpus and is deterministic") {
    const Fixture f = keyword_fixture();
    const auto a = train_source(f.init(), f.source_enc, f.source_enc, fast_train());
    const auto preds = predict(a.model.encoder, a.model.classifier, a.model.layer, f.source_enc);
    CHECK(compute_metrics(preds, f.source_enc.labels).macro_f1 >= 0.95);

    REQUIRE(a.history.size() == 4);
    const double first = a.history.front().train_loss, last = a.history.back().train_loss;
    CHECK(last < first);
    double mean_rest = 0;
    for (std::size_t i = 1; i < a.history.size(); ++i) mean_rest += a.history[i].train_loss;
    CHECK(mean_rest / 3.0 < first);

    const auto b = train_source(f.init(), f.source_enc, f.source_enc, fast_train());
    CHECK(params_equal(a.model.encoder, b.model.encoder));
    CHECK(params_equal(a.model.classifier, b.model.classifier));
    CHECK(a.model.classifier.running_var.data == b.model.classifier.running_var.data);
}

TEST_CASE("head refit touches only the classifier") {
    const Fixture f(300);
    const SourceModel m = f.init();
    const auto head = fit_classifier_head(m.encoder, m.classifier, 2, f.source_enc, fast_train());
    CHECK_FALSE(params_equal(head, m.classifier));
}

namespace {

struct AdaptFixture {
    Fixture f{400};
    SourceModel model;
    EncodedCorpus s_train, t_train, s_held, t_held;

    AdaptFixture() {
        model = train_source(f.init(), f.source_enc, f.source_enc, fast_train()).model;
        std::vector<std::size_t> idx(f.source_enc.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const std::size_t cut = idx.size() * 3 / 4;
        s_train = unlabeled(f.source_enc.subset(std::span(idx).first(cut)));
        s_held = unlabeled(f.source_enc.subset(std::span(idx).subspan(cut)));
        t_train = f.target_enc.subset(std::span(idx).first(cut));
        t_held = f.target_enc.subset(std::span(idx).subspan(cut));
    }

    AdaptResult run(const TrainConfig& cfg, ShareMode share = ShareMode::full()) const {
        AdaptInputs in{model.encoder, model.classifier, 1, 2, s_train, t_train, s_held, t_held};
        return adversarial_adapt(in, init_target_from_source(model.encoder, share),
                                 init_discriminator<float>(16, 32, 9), cfg);
    }
};

TrainConfig adapt_cfg() {
    TrainConfig t;
    t.adam.learning_rate = 2e-4;
    t.discriminator_learning_rate = 1e-3;
    t.epochs = 2;
    t.seed = 6;
    return t;
}

}  // namespace

TEST_CASE("adaptation contracts") {
    const AdaptFixture af;

    SUBCASE("zero epochs keep the encoder") {
        auto cfg = adapt_cfg();
        cfg.epochs = 0;
        const auto r = af.run(cfg);
        CHECK(params_equal(r.target, af.model.encoder));
        CHECK(r.report.steps.empty());
    }

    SUBCASE("KLD starts at zero under full sharing") {
        const auto r = af.run(adapt_cfg());
        REQUIRE(!r.report.steps.empty());
        CHECK(std::abs(r.report.steps.front().kld_loss) < 1e-10);
        CHECK(r.report.epoch_accuracy.size() == 2);
        CHECK(!params_equal(r.target, af.model.encoder));
    }

    SUBCASE("adaptation is deterministic") {
        const auto a = af.run(adapt_cfg()), b = af.run(adapt_cfg());
        CHECK(params_equal(a.target, b.target));
        CHECK(params_equal(a.discriminator, b.discriminator));
        CHECK(a.report.csv() == b.report.csv());
    }

    SUBCASE("lambda zero removes the KLD term") {
        auto cfg = adapt_cfg();
        cfg.lambda_kld = 0.0;
        const auto a = af.run(cfg);
        cfg.kld_direction = KldDirection::target_to_source;
        const auto b = af.run(cfg);
        CHECK(params_equal(a.target, b.target));

        cfg.lambda_kld = 1.0;
        const auto c = af.run(cfg);
        cfg.kld_direction = KldDirection::source_to_target;
        const auto d = af.run(cfg);
        CHECK_FALSE(params_equal(c.target, d.target));
    }

    SUBCASE("frozen layers stay equal to the source") {
        const auto r = af.run(adapt_cfg(), ShareMode::partial(1));
        const auto frozen = init_target_from_source(af.model.encoder, ShareMode::partial(1)).frozen;
        std::vector<std::pair<std::string, std::vector<float>>> src;
        af.model.encoder.visit([&](const std::string& n, const Tensor<float>& t) { src.emplace_back(n, t.data); });
        std::size_t i = 0, changed = 0;
        r.target.visit([&](const std::string& n, const Tensor<float>& t) {
            if (frozen.count(n)) CHECK(t.data == src[i].second);
            else changed += t.data != src[i].second;
            ++i;
        });
        CHECK(changed > 0);
    }

    SUBCASE("discriminator steps lower its loss while the encoder is still") {
        auto cfg = adapt_cfg();
        cfg.adam.learning_rate = 1e-12;
        cfg.discriminator_warmup_epochs = 0;
        cfg.epochs = 3;
        const auto r = af.run(cfg);
        const std::size_t per_epoch = r.report.steps.size() / 3;
        double first = 0, last = 0;
        for (std::size_t i = 0; i < per_epoch; ++i) {
            first += r.report.steps[i].d_loss;
            last += r.report.steps[r.report.steps.size() - 1 - i].d_loss;
        }
        CHECK(last < first);
        CHECK(r.report.final_accuracy() > 0.5);
    }

    SUBCASE("labelled corpora are rejected") {
        AdaptInputs in{af.model.encoder, af.model.classifier, 1, 2, af.f.source_enc, af.t_train, af.s_held, af.t_held};
        CHECK_THROWS_AS(adversarial_adapt(in, init_target_from_source(af.model.encoder, ShareMode::full()),
                                          init_discriminator<float>(16, 32, 9), adapt_cfg()),
                        InputError);
    }

    SUBCASE("report has one row per step") {
        const auto r = af.run(adapt_cfg());
        const std::string csv = r.report.csv();
        CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == r.report.steps.size() + 1);
    }
}
