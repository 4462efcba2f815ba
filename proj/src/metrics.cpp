#include "xpcb/metrics.hpp"

#include "xpcb/errors.hpp"

namespace xpcb {

namespace {

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

LabelScores scores(std::size_t tp, std::size_t fp, std::size_t fn) {
    LabelScores s;
    s.precision = ratio(tp, tp + fp);
    s.recall = ratio(tp, tp + fn);
    s.f1 = ratio(2 * tp, 2 * tp + fp + fn);
    return s;
}

}  // namespace

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
    Metrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.tn = tn;
    m.positive = scores(tp, fp, fn);
    // For label 0 the roles swap: true negatives are its hits.
    m.negative = scores(tn, fn, fp);
    m.macro_f1 = 0.5 * (m.positive.f1 + m.negative.f1);
    m.accuracy = ratio(tp + tn, m.total());
    return m;
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> gold) {
    if (predictions.empty()) throw InputError("cannot evaluate an empty corpus");
    if (predictions.size() != gold.size()) throw InputError("prediction/gold length mismatch");
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const int p = predictions[i], g = gold[i];
        if ((p != 0 && p != 1) || (g != 0 && g != 1)) throw InputError("labels must be 0 or 1");
        if (p == 1 && g == 1) ++tp;
        else if (p == 1) ++fp;
        else if (g == 1) ++fn;
        else ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn);
}

nlohmann::ordered_json metrics_to_json(const Metrics& m) {
    auto label = [](const LabelScores& s) {
        return nlohmann::ordered_json{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    };
    return {{"macro_f1", m.macro_f1},
            {"accuracy", m.accuracy},
            {"label_0", label(m.negative)},
            {"label_1", label(m.positive)},
            {"confusion", {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}}}};
}

}  // namespace xpcb
