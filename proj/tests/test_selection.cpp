#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "xpcb/errors.hpp"
#include "xpcb/selection.hpp"
#include "xpcb/synthetic.hpp"

using namespace xpcb;

namespace {

struct Data {
    Corpus corpus;
    Vocabulary vocab;
    EncodedCorpus encoded;
};

Data platform_data(std::size_t index, std::size_t records = 300) {
    SyntheticConfig sc = SyntheticConfig::standard(2);
    sc.records_per_platform = records;
    sc.seed = 4;
    Data d;
    d.corpus = Corpus(generate_synthetic(sc)[index]);
    d.vocab = build_vocab(d.corpus, 1, 5000);
    d.encoded = encode_corpus(d.corpus, d.vocab, 32);
    return d;
}

EncoderConfig enc_config(std::size_t vocab, std::size_t layers) {
    EncoderConfig c;
    c.vocab_size = vocab;
    c.d_model = 16;
    c.n_layers = layers;
    c.n_heads = 2;
    c.d_ff = 32;
    c.max_positions = 64;
    c.dropout_rate = 0.0;
    return c;
}

ProbeConfig quick_probe() {
    ProbeConfig p;
    p.iterations = 100;
    return p;
}

}  // namespace

TEST_CASE("transferability penalises only above-chance domain accuracy") {
    CHECK(transferability(0.8, 0.5) == 0.8);
    CHECK(transferability(0.8, 0.3) == 0.8);
    CHECK(transferability(0.8, 0.9) == doctest::Approx(0.4));
}

TEST_CASE("identically distributed corpora leave nothing for the domain probe") {
    // Two disjoint halves of one platform. Feeding the same posts to both sides
    // would bias the probe below chance: a held-out post whose twin was trained
    // with the other domain label is predicted wrong.
    const Data d = platform_data(0, 600);
    const auto [first, second] = split_corpus(d.corpus, 0.5, 9);
    const EncodedCorpus source = encode_corpus(first, d.vocab, 32);
    const EncodedCorpus unlabeled = encode_corpus(second.unlabeled(), d.vocab, 32);
    const auto enc = init_encoder<float>(enc_config(d.vocab.size(), 3), 1);
    const auto sel = select_hidden_layer(enc, source, unlabeled, quick_probe());
    REQUIRE(sel.scores.size() == 4);
    double best = -1;
    std::size_t best_layer = 0;
    for (std::size_t l = 1; l < sel.scores.size(); ++l) {
        const auto& s = sel.scores[l];
        CHECK(std::abs(s.domain_accuracy - 0.5) < 0.1);
        if (s.transfer_pre >= best) {
            best = s.transfer_pre;
            best_layer = l;
        }
    }
    CHECK(sel.pre_adversarial_layer == best_layer);
    CHECK(sel.post_adversarial_layer == best_layer);
}

TEST_CASE("a one-layer encoder selects its only layer") {
    const Data d = platform_data(0, 200);
    const Data t = platform_data(1, 200);
    const auto enc = init_encoder<float>(enc_config(std::max(d.vocab.size(), t.vocab.size()), 1), 2);
    EncodedCorpus target = encode_corpus(t.corpus.unlabeled(), d.vocab, 32);
    const auto sel = select_hidden_layer(enc, d.encoded, target, quick_probe());
    CHECK(sel.pre_adversarial_layer == 1);
    const auto post = select_post_adversarial(sel, enc, enc, d.encoded, target, quick_probe());
    CHECK(post.post_adversarial_layer == 1);
}

TEST_CASE("probe inputs are validated") {
    Tensor<double> x = matrix<double>(4, 2, 1.0);
    const std::vector<int> one_class{1, 1, 1, 1};
    CHECK_THROWS_AS(LogisticProbe::fit(x, one_class, quick_probe()), InputError);
    const Data d = platform_data(0, 100);
    const auto enc = init_encoder<float>(enc_config(d.vocab.size(), 2), 1);
    CHECK_THROWS_AS(select_hidden_layer(enc, d.encoded, EncodedCorpus{}, quick_probe()), InputError);
}

TEST_CASE("logistic probe learns a separable rule") {
    Rng rng(3);
    Tensor<double> x = matrix<double>(200, 3);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
        for (std::size_t c = 0; c < 3; ++c) x(i, c) = rng.normal();
        y[i] = x(i, 0) + 0.5 * x(i, 2) > 0;
    }
    const auto probe = LogisticProbe::fit(x, y, ProbeConfig{});
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 200; ++i) correct += probe.predict(x.row(i)) == y[i];
    CHECK(correct >= 190);
}

TEST_CASE("length search contracts") {
    const Data d = platform_data(0, 300);
    const auto [train, valid] = split_corpus(d.corpus, 0.3, 1);
    LengthSearchConfig cfg;
    cfg.train.adam.learning_rate = 1e-3;
    cfg.head_width = 32;
    const auto enc = enc_config(d.vocab.size(), 2);

    SUBCASE("single candidate") {
        cfg.candidates = {12};
        const auto r = optimize_input_length(train, valid, d.vocab, enc, cfg);
        CHECK(r.chosen == 12);
        CHECK(r.scores.size() == 1);
    }
    SUBCASE("invalid candidates") {
        cfg.candidates = {1};
        CHECK_THROWS_AS(optimize_input_length(train, valid, d.vocab, enc, cfg), InputError);
        cfg.candidates = {65};
        CHECK_THROWS_AS(optimize_input_length(train, valid, d.vocab, enc, cfg), InputError);
        cfg.candidates = {};
        auto tiny = enc;
        tiny.max_positions = 2;
        cfg.candidates = {4};
        CHECK_THROWS_AS(optimize_input_length(train, valid, d.vocab, tiny, cfg), InputError);
    }
    SUBCASE("default grid on short posts picks a short length, deterministically") {
        const auto texts = d.corpus.texts();
        const auto grid = default_length_candidates(texts, 64);
        const auto counts = token_counts(texts);
        for (double pct : {90.0, 95.0, 99.0})
            CHECK(std::find(grid.begin(), grid.end(), percentile_length(counts, pct)) != grid.end());
        CHECK(std::find(grid.begin(), grid.end(), 32) != grid.end());
        CHECK(std::find(grid.begin(), grid.end(), 64) != grid.end());
        CHECK(std::is_sorted(grid.begin(), grid.end()));
        CHECK(*std::max_element(counts.begin(), counts.end()) <= 38);

        const auto a = optimize_input_length(train, valid, d.vocab, enc, cfg);
        CHECK(a.chosen <= 64);
        CHECK(std::find(a.candidates.begin(), a.candidates.end(), a.chosen) != a.candidates.end());
        const auto best = *std::max_element(a.scores.begin(), a.scores.end());
        for (std::size_t i = 0; i < a.candidates.size(); ++i)
            if (a.scores[i] == best) {
                CHECK(a.chosen == a.candidates[i]);  // first maximum is the shortest
                break;
            }
        const auto b = optimize_input_length(train, valid, d.vocab, enc, cfg);
        CHECK(a.scores == b.scores);
        CHECK(a.chosen == b.chosen);
    }
}
