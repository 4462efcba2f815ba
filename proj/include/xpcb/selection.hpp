#pragma once

// Hidden-state selection and input-length search.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xpcb/corpus.hpp"
#include "xpcb/encoder.hpp"
#include "xpcb/training.hpp"

namespace xpcb {

// ---------------------------------------------------------------- probes

struct ProbeConfig {
    std::size_t iterations = 200;  // full-batch Adam steps
    double learning_rate = 0.05;
    double l2 = 1e-4;
    double held_out_fraction = 0.3;
    std::size_t max_samples = 1000;  // per side (domain probe) or in total (task probe)
    std::uint64_t seed = 0;

    bool operator==(const ProbeConfig&) const = default;
};

// Logistic regression on standardised features.
class LogisticProbe {
public:
    // Throws InputError when y has a single class.
    static LogisticProbe fit(const Tensor<double>& x, std::span<const int> y, const ProbeConfig& cfg);
    double probability(std::span<const double> row) const;
    int predict(std::span<const double> row) const { return probability(row) > 0.5 ? 1 : 0; }

private:
    std::vector<double> mean_, inv_std_, weights_;
    double bias_ = 0.0;
};

// Held-out macro-F1 of a probe predicting labels from features.
double task_probe_score(const Tensor<float>& features, std::span<const int> labels, const ProbeConfig& cfg);
// Held-out accuracy of a probe separating source rows (0) from target rows (1),
// on a balanced subsample.
double domain_probe_accuracy(const Tensor<float>& source, const Tensor<float>& target, const ProbeConfig& cfg);

// ---------------------------------------------------------------- layers

struct LayerScore {
    double task_score = 0.0;
    double domain_accuracy = 0.0;       // before adaptation
    double domain_accuracy_post = 0.0;  // after adaptation, once measured
    double transfer_pre = 0.0;
    double transfer_post = 0.0;
};

struct LayerSelection {
    std::size_t pre_adversarial_layer = 0;
    std::size_t post_adversarial_layer = 0;
    std::vector<LayerScore> scores;  // n_layers + 1 entries
};

// transferability = task_score - max(0, domain_accuracy - 0.5)
double transferability(double task_score, double domain_accuracy);

// Scores every hidden state of the source encoder. Pre- and post-adversarial
// layers are both the argmax over layers 1..n_layers (ties toward the deeper
// layer) until select_post_adversarial runs; the embedding output is scored
// but never selected.
LayerSelection select_hidden_layer(const EncoderParams<float>& source, const EncodedCorpus& source_labeled,
                                   const EncodedCorpus& target_unlabeled, const ProbeConfig& cfg);

// Re-runs the domain probe with the adapted target encoder.
LayerSelection select_post_adversarial(LayerSelection selection, const EncoderParams<float>& source,
                                       const EncoderParams<float>& target, const EncodedCorpus& source_corpus,
                                       const EncodedCorpus& target_unlabeled, const ProbeConfig& cfg);

// ---------------------------------------------------------------- lengths

struct LengthSearchResult {
    std::vector<std::size_t> candidates;
    std::vector<double> scores;  // validation macro-F1 per candidate
    std::size_t chosen = 0;
};

struct LengthSearchConfig {
    std::vector<std::size_t> candidates;  // empty: default grid
    std::size_t budget_epochs = 1;
    std::size_t quick_layers = 1;
    std::size_t max_train_records = 2000;
    std::size_t head_width = 512;
    TrainConfig train;  // batch size, optimiser and seed; epochs are replaced by the budget

    bool operator==(const LengthSearchConfig&) const = default;
};

// 90th/95th/99th token-count percentiles plus {32,64,128,256,512}, restricted
// to [2, max_positions], sorted and deduplicated.
std::vector<std::size_t> default_length_candidates(std::span<const std::string> texts, std::size_t max_positions);

// Quick-trains a fresh small model per candidate (same seed each time) and
// keeps the best validation macro-F1, ties toward the shorter length.
// Throws InputError for an empty grid, a candidate below 2, or one beyond the
// encoder's positional capacity.
LengthSearchResult optimize_input_length(const Corpus& train, const Corpus& valid, const Vocabulary& vocab,
                                         const EncoderConfig& encoder, const LengthSearchConfig& cfg);

}  // namespace xpcb
