#pragma once

// Binary classification metrics. Label 1 is the positive (bullying) class.

#include <cstddef>
#include <span>
#include <string>

#include <json.hpp>

#include "xpcb/tensor.hpp"

namespace xpcb {

struct LabelScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;

    bool operator==(const LabelScores&) const = default;
};

struct Metrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;  // with respect to label 1
    LabelScores negative;                         // label 0
    LabelScores positive;                         // label 1
    double macro_f1 = 0.0;
    double accuracy = 0.0;

    std::size_t total() const { return tp + fp + fn + tn; }
    bool operator==(const Metrics&) const = default;
};

// Per-label scores with 0/0 := 0; macro_f1 is the unweighted mean over both labels.
Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);
// Throws InputError on empty input, length mismatch, or a value outside {0,1}.
Metrics compute_metrics(std::span<const int> predictions, std::span<const int> gold);

// argmax over a probability row; an exact tie resolves to label 0.
template <class T>
int predict_label(std::span<const T> probs) {
    return probs[1] > probs[0] ? 1 : 0;
}

nlohmann::ordered_json metrics_to_json(const Metrics& m);

}  // namespace xpcb
