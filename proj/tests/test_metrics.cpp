#include <doctest.h>

#include <vector>

#include "xpcb/errors.hpp"
#include "xpcb/metrics.hpp"
#include "xpcb/random.hpp"

using namespace xpcb;

namespace {

// Recount everything from raw pairs, per label, with no shared code.
struct Oracle {
    double f1[2] = {0, 0};
    double macro = 0, accuracy = 0;
};

Oracle oracle(const std::vector<int>& pred, const std::vector<int>& gold) {
    Oracle o;
    for (int label = 0; label < 2; ++label) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (pred[i] == label && gold[i] == label) ++tp;
            if (pred[i] == label && gold[i] != label) ++fp;
            if (pred[i] != label && gold[i] == label) ++fn;
        }
        // 2PR/(P+R) rewritten over counts, so equal values compare exactly.
        o.f1[label] = tp > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    }
    o.macro = (o.f1[0] + o.f1[1]) / 2;
    double correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == gold[i];
    o.accuracy = correct / static_cast<double>(pred.size());
    return o;
}

}  // namespace

TEST_CASE("metrics match a counting oracle on 1000 random sets") {
    Rng rng(0);
    for (int set = 0; set < 1000; ++set) {
        const std::size_t n = 1 + rng.index(60);
        const double rate = rng.uniform();
        std::vector<int> pred(n), gold(n);
        for (std::size_t i = 0; i < n; ++i) {
            pred[i] = rng.bernoulli(rate);
            gold[i] = rng.bernoulli(0.3);
        }
        const Metrics m = compute_metrics(pred, gold);
        const Oracle o = oracle(pred, gold);
        REQUIRE(m.negative.f1 == o.f1[0]);
        REQUIRE(m.positive.f1 == o.f1[1]);
        REQUIRE(m.macro_f1 == o.macro);
        REQUIRE(m.accuracy == o.accuracy);
        REQUIRE(m.total() == n);
    }
}

TEST_CASE("worked confusion matrix") {
    const Metrics m = metrics_from_counts(1, 1, 1, 1);
    CHECK(m.positive.f1 == 0.5);
    CHECK(m.negative.f1 == 0.5);
    CHECK(m.macro_f1 == 0.5);
    const std::vector<int> pred{1, 1, 0, 0}, gold{1, 0, 1, 0};
    CHECK(compute_metrics(pred, gold) == m);
}

TEST_CASE("degenerate predictors") {
    const std::vector<int> gold{1, 0, 0, 1, 0};
    CHECK(compute_metrics(gold, gold).macro_f1 == 1.0);
    const std::vector<int> none{0, 0, 0, 0, 0};
    const Metrics m = compute_metrics(none, gold);
    CHECK(m.positive.f1 == 0.0);
    CHECK(m.macro_f1 == m.negative.f1 / 2);
}

TEST_CASE("macro F1 is invariant under swapping label names") {
    Rng rng(1);
    for (int t = 0; t < 200; ++t) {
        const std::size_t tp = rng.index(20), fp = rng.index(20), fn = rng.index(20), tn = rng.index(20);
        if (tp + fp + fn + tn == 0) continue;
        // Swapping names maps tp<->tn and fp<->fn.
        CHECK(metrics_from_counts(tp, fp, fn, tn).macro_f1 == doctest::Approx(metrics_from_counts(tn, fn, fp, tp).macro_f1).epsilon(1e-15));
    }
}

TEST_CASE("invalid inputs") {
    const std::vector<int> a{0, 1}, b{0}, bad{0, 2}, empty;
    CHECK_THROWS_AS(compute_metrics(a, b), InputError);
    CHECK_THROWS_AS(compute_metrics(bad, a), InputError);
    CHECK_THROWS_AS(compute_metrics(empty, empty), InputError);
}

TEST_CASE("argmax ties resolve to label 0") {
    const float tie[2] = {0.5f, 0.5f}, pos[2] = {0.4f, 0.6f};
    CHECK(predict_label<float>(tie) == 0);
    CHECK(predict_label<float>(pos) == 1);
}

TEST_CASE("metrics serialise to json") {
    const auto j = metrics_to_json(metrics_from_counts(3, 1, 2, 4));
    CHECK(j.contains("macro_f1"));
    CHECK(j["confusion"]["tp"] == 3);
}
