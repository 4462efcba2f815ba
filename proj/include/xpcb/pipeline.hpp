#pragma once

// End-to-end cross-platform run: length search, source training, layer
// selection, target initialisation, adversarial adaptation, AdaBN and
// evaluation against a source-only baseline.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xpcb/corpus.hpp"
#include "xpcb/encoder.hpp"
#include "xpcb/heads.hpp"
#include "xpcb/metrics.hpp"
#include "xpcb/selection.hpp"
#include "xpcb/training.hpp"

namespace xpcb {

struct PipelineConfig {
    std::uint64_t seed = 0;

    // Tokenizer.
    std::size_t min_freq = 1;
    std::size_t vocab_cap = 30000;

    // Data handling.
    std::size_t oversample_factor = 3;
    double valid_fraction = 0.1;        // of the source corpus
    double target_test_fraction = 0.2;  // of the target corpus, evaluation only
    double heldout_fraction = 0.1;      // discriminator held-out slice of the adaptation pools

    // Input length.
    bool length_search = true;
    std::size_t fixed_length = 64;  // used when the search is off
    LengthSearchConfig length;

    EncoderConfig encoder;  // vocab_size is taken from the vocabulary
    std::size_t head_width = kReductionWidth;
    ShareMode share = ShareMode::full();

    TrainConfig source_train;
    TrainConfig adapt;
    ProbeConfig probe;

    void validate() const;
    bool operator==(const PipelineConfig&) const = default;
};

struct PipelineResult {
    Vocabulary vocab;
    std::size_t max_len = 0;
    LengthSearchResult length;
    SourceTrainResult source;
    LayerSelection selection;
    EncoderParams<float> target_encoder;
    DiscriminatorParams<float> discriminator;
    ClassifierParams<float> target_classifier;  // AdaBN statistics, reads post_adversarial_layer
    AdaptReport report;
    Metrics baseline;  // source encoder + source classifier, no adaptation, no AdaBN
    Metrics xpcb;
    std::size_t target_label_reads_before_evaluation = 0;
    std::size_t target_test_size = 0;
};

// Seeded splits: source into train/valid, target into pool/test, and the
// pool into adaptation/held-out slices. Validates the configuration.
struct Splits {
    Corpus source_train, source_valid;
    Corpus target_pool, target_test;
    Corpus target_adapt, target_heldout;
};
Splits split_inputs(const Corpus& source, const Corpus& target, const PipelineConfig& cfg);

// Encoder config with the vocabulary size filled in.
EncoderConfig encoder_config_for(const PipelineConfig& cfg, const Vocabulary& vocab);

// Vocabulary (source train plus unlabeled target pool), input length and
// source training.
struct SourceStage {
    Vocabulary vocab;
    std::size_t max_len = 0;
    LengthSearchResult length;  // empty when the search is off
    SourceTrainResult source;
};
SourceStage run_source_stage(const Splits& splits, const PipelineConfig& cfg);

// Layer selection, adversarial adaptation, post-adversarial selection and
// AdaBN. Reads no target label.
struct AdaptStage {
    LayerSelection selection;
    EncoderParams<float> target_encoder;
    DiscriminatorParams<float> discriminator;
    ClassifierParams<float> target_classifier;
    AdaptReport report;
};
AdaptStage run_adapt_stage(const Splits& splits, const Vocabulary& vocab, std::size_t max_len,
                           const SourceModel& source, const PipelineConfig& cfg);

// Target labels are read only by the final evaluation; the returned result
// records how many were read before it (always zero unless a stage leaks).
// Errors are rethrown with the failing stage's name, keeping their type.
PipelineResult run_configuration(const Corpus& source, const Corpus& target, const PipelineConfig& cfg);

// Argmax predictions of (encoder, classifier at layer) on a labeled corpus.
Metrics evaluate(const EncoderParams<float>& encoder, const ClassifierParams<float>& classifier, std::size_t layer,
                 const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len);

// ---------------------------------------------------------------- embeddings

enum class PlatformTag { source = 0, target = 1 };

struct EmbeddingDump {
    std::size_t dim = 0;
    std::vector<float> values;  // rows x dim
    std::vector<PlatformTag> platform;
    std::vector<int> label;

    std::size_t rows() const { return platform.size(); }
    std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

    // Columns x0..x{dim-1} (x,y when dim is 2), platform, label.
    std::string csv() const;
    void write_csv(const std::filesystem::path& path) const;
};

// Source records through the source encoder, target records through the
// target encoder, pooled at `layer` and tagged with platform and gold label.
EmbeddingDump export_embeddings(const EncoderParams<float>& source_encoder, const EncoderParams<float>& target_encoder,
                                const Corpus& source, const Corpus& target, const Vocabulary& vocab,
                                std::size_t max_len, std::size_t layer);

// Euclidean distance between the source and target centroids.
double centroid_distance(const EmbeddingDump& dump);

}  // namespace xpcb
