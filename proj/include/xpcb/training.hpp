#pragma once

// Source training, adversarial adaptation and the feature helpers both use.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xpcb/corpus.hpp"
#include "xpcb/encoder.hpp"
#include "xpcb/heads.hpp"
#include "xpcb/losses.hpp"
#include "xpcb/metrics.hpp"
#include "xpcb/optim.hpp"

namespace xpcb {

struct TrainConfig {
    std::size_t batch_size = 16;
    AdamConfig adam;  // learning rate 2e-5, betas 0.9/0.999, eps 1e-8
    std::size_t epochs = 4;
    double lambda_kld = 1.0;
    std::uint64_t seed = 0;
    double clamp_eps = kClampEps;
    KldDirection kld_direction = KldDirection::source_to_target;

    // Adaptation only.
    std::optional<double> discriminator_learning_rate;  // defaults to adam.learning_rate
    std::size_t discriminator_warmup_epochs = 1;        // discriminator-only epochs before the game
    double clip_threshold = 1e3;
    double clip_norm = 1.0;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// Encoder plus classifier reading pooled states of `layer`.
struct SourceModel {
    EncoderParams<float> encoder;
    ClassifierParams<float> classifier;
    std::size_t layer = 0;
};

// Pooled features of every requested layer, rows in corpus order. Dropout off.
std::vector<Tensor<float>> pooled_features(const EncoderParams<float>& encoder, const EncodedCorpus& corpus,
                                           std::span<const std::size_t> layers, std::size_t batch_size = 64);
Tensor<float> pooled_features(const EncoderParams<float>& encoder, const EncodedCorpus& corpus, std::size_t layer,
                              std::size_t batch_size = 64);

// Eval-mode classifier probabilities [n x 2] and argmax labels.
Tensor<float> predict_probs(const EncoderParams<float>& encoder, const ClassifierParams<float>& classifier,
                            std::size_t layer, const EncodedCorpus& corpus);
std::vector<int> predict(const EncoderParams<float>& encoder, const ClassifierParams<float>& classifier,
                         std::size_t layer, const EncodedCorpus& corpus);

// ---------------------------------------------------------------- source stage

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean batch cross-entropy
    double valid_macro_f1 = 0.0;
};

struct SourceTrainResult {
    SourceModel model;  // parameters of the best validation epoch
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
    std::size_t steps = 0;
};

// Cross-entropy training of encoder and classifier. Batches of one record are
// skipped (batch-norm needs two). Keeps the epoch with the best validation
// macro-F1 (earliest on ties). Throws NumericalError naming the step on
// divergence.
SourceTrainResult train_source(SourceModel init, const EncodedCorpus& train, const EncodedCorpus& valid,
                               const TrainConfig& cfg);

// Refit only the classifier head on frozen encoder features of `layer`.
ClassifierParams<float> fit_classifier_head(const EncoderParams<float>& encoder, ClassifierParams<float> init,
                                            std::size_t layer, const EncodedCorpus& train, const TrainConfig& cfg);

// ---------------------------------------------------------------- adaptation

struct AdaptStep {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double d_loss = 0.0;
    double adv_loss = 0.0;
    double kld_loss = 0.0;
    double grad_norm = 0.0;  // target-encoder gradient norm before clipping
    bool clipped = false;
    std::optional<double> heldout_accuracy;  // set on the last step of each epoch
};

struct AdaptReport {
    double heldout_accuracy_before = 0.0;  // after discriminator warm-up, before any encoder update
    std::vector<AdaptStep> steps;
    std::vector<double> epoch_accuracy;

    double final_accuracy() const {
        return epoch_accuracy.empty() ? heldout_accuracy_before : epoch_accuracy.back();
    }
    std::string csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

// Everything adaptation reads. All corpora must be unlabeled encodings;
// labeled ones are rejected so that no label can reach this stage.
struct AdaptInputs {
    const EncoderParams<float>& source;
    const ClassifierParams<float>& classifier;
    std::size_t adversarial_layer = 0;
    std::size_t classifier_layer = 0;
    const EncodedCorpus& source_train;
    const EncodedCorpus& target_train;
    const EncodedCorpus& source_heldout;
    const EncodedCorpus& target_heldout;
    // Called after every epoch with the current target encoder (diagnostics).
    std::function<void(std::size_t epoch, const EncoderParams<float>& target)> on_epoch = {};
};

struct AdaptResult {
    EncoderParams<float> target;
    DiscriminatorParams<float> discriminator;
    AdaptReport report;
};

// Alternating updates per paired batch:
//   A: discriminator step on discriminator_loss (encoders fixed);
//   B: target-encoder step on adversarial_encoder_loss + lambda_kld * KLD,
//      the KLD comparing the frozen classifier's output on the same source
//      batch through both encoders (discriminator fixed).
// Frozen tensors in `target.frozen` are never updated. Gradient norms above
// cfg.clip_threshold are rescaled to cfg.clip_norm.
AdaptResult adversarial_adapt(const AdaptInputs& inputs, TargetInit<float> target,
                              DiscriminatorParams<float> discriminator, const TrainConfig& cfg);

// Held-out accuracy of a discriminator on balanced source/target features.
double discriminator_accuracy(const DiscriminatorParams<float>& discriminator, const Tensor<float>& source_features,
                              const Tensor<float>& target_features);

}  // namespace xpcb
