#include "xpcb/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include <spdlog/spdlog.h>

#include "xpcb/errors.hpp"

namespace xpcb {

namespace {

// Rethrows with the stage name, keeping the error category.
template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    const std::string prefix = std::string("stage '") + name + "': ";
    try {
        spdlog::debug("stage {}", name);
        return f();
    } catch (const InputError& e) {
        throw InputError(prefix + e.what());
    } catch (const ArtifactMismatch& e) {
        throw ArtifactMismatch(prefix + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(prefix + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(prefix + e.what());
    }
}

std::uint64_t stage_seed(std::uint64_t seed, std::uint64_t stage) { return seed * 1000003ULL + stage * 7919ULL; }

std::vector<Tensor<float>> feature_stream(const Tensor<float>& features, std::size_t chunk) {
    std::vector<Tensor<float>> out;
    for (std::size_t start = 0; start < features.rows(); start += chunk) {
        const std::size_t n = std::min(chunk, features.rows() - start);
        Tensor<float> t = matrix<float>(n, features.cols());
        std::copy_n(features.row(start).begin(), n * features.cols(), t.data.begin());
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

void PipelineConfig::validate() const {
    if (oversample_factor == 0) throw InputError("oversample factor must be at least 1");
    for (double f : {valid_fraction, target_test_fraction, heldout_fraction})
        if (!(f > 0.0 && f < 1.0)) throw InputError("split fractions must lie in (0, 1)");
    if (vocab_cap < Vocabulary::kReserved + 1) throw InputError("vocabulary cap too small");
    if (min_freq == 0) throw InputError("min_freq must be positive");
    if (!length_search && (fixed_length < 2 || fixed_length > encoder.max_positions))
        throw InputError("fixed input length must lie in [2, max_positions]");
    if (share.kind == ShareMode::Kind::partial && share.frozen_layers > encoder.n_layers)
        throw InputError("partial sharing freezes more layers than the encoder has");
    source_train.validate();
    adapt.validate();
}

Metrics evaluate(const EncoderParams<float>& encoder, const ClassifierParams<float>& classifier, std::size_t layer,
                 const Corpus& corpus, const Vocabulary& vocab, std::size_t max_len) {
    if (corpus.empty()) throw InputError("cannot evaluate an empty corpus");
    if (!corpus.fully_labeled()) throw InputError("evaluation corpus must be fully labeled");
    const EncodedCorpus enc = encode_corpus(corpus, vocab, max_len);
    return compute_metrics(predict(encoder, classifier, layer, enc), enc.labels);
}

Splits split_inputs(const Corpus& source, const Corpus& target, const PipelineConfig& cfg) {
    stage("validate", [&] {
        cfg.validate();
        if (source.empty() || target.empty()) throw InputError("both corpora must be non-empty");
        if (!source.fully_labeled()) throw InputError("source corpus must be fully labeled");
    });
    return stage("split", [&] {
        Splits s;
        std::tie(s.source_train, s.source_valid) = split_corpus(source, cfg.valid_fraction, stage_seed(cfg.seed, 1));
        std::tie(s.target_pool, s.target_test) =
            split_corpus(target, cfg.target_test_fraction, stage_seed(cfg.seed, 2));
        std::tie(s.target_adapt, s.target_heldout) =
            split_corpus(s.target_pool, cfg.heldout_fraction, stage_seed(cfg.seed, 3));
        return s;
    });
}

EncoderConfig encoder_config_for(const PipelineConfig& cfg, const Vocabulary& vocab) {
    EncoderConfig ecfg = cfg.encoder;
    ecfg.vocab_size = vocab.size();
    stage("validate", [&] { ecfg.validate(); });
    return ecfg;
}

SourceStage run_source_stage(const Splits& splits, const PipelineConfig& cfg) {
    SourceStage r;
    r.vocab = stage("vocabulary", [&] {
        std::vector<std::string> texts = splits.source_train.texts();
        const UnlabeledView pool = splits.target_pool.unlabeled();
        texts.insert(texts.end(), pool.texts().begin(), pool.texts().end());
        return build_vocab(texts, cfg.min_freq, cfg.vocab_cap);
    });
    const EncoderConfig ecfg = encoder_config_for(cfg, r.vocab);

    r.max_len = stage("length search", [&] {
        if (!cfg.length_search) return cfg.fixed_length;
        LengthSearchConfig lc = cfg.length;
        lc.head_width = cfg.head_width;
        lc.train = cfg.source_train;
        lc.train.seed = stage_seed(cfg.seed, 4);
        r.length = optimize_input_length(splits.source_train, splits.source_valid, r.vocab, ecfg, lc);
        return r.length.chosen;
    });
    spdlog::info("input length {}", r.max_len);

    r.source = stage("source training", [&] {
        const EncodedCorpus oversampled =
            encode_corpus(oversample_positive(splits.source_train, cfg.oversample_factor), r.vocab, r.max_len);
        const EncodedCorpus valid = encode_corpus(splits.source_valid, r.vocab, r.max_len);
        SourceModel init;
        init.encoder = init_encoder<float>(ecfg, stage_seed(cfg.seed, 5));
        init.classifier = init_classifier<float>(ecfg.d_model, cfg.head_width, stage_seed(cfg.seed, 6));
        init.layer = ecfg.n_layers;
        TrainConfig tc = cfg.source_train;
        tc.seed = stage_seed(cfg.seed, 7);
        return train_source(std::move(init), oversampled, valid, tc);
    });
    spdlog::info("source training: best epoch {} valid macro-F1 {:.4f}", r.source.best_epoch,
                 r.source.history.empty() ? 0.0 : r.source.history[r.source.best_epoch - 1].valid_macro_f1);
    return r;
}

AdaptStage run_adapt_stage(const Splits& splits, const Vocabulary& vocab, std::size_t max_len, const SourceModel& src,
                           const PipelineConfig& cfg) {
    const EncoderConfig ecfg = encoder_config_for(cfg, vocab);
    if (!(src.encoder.config == ecfg)) throw ArtifactMismatch("source encoder does not match the configuration");
    AdaptStage r;
    const EncodedCorpus src_train_enc = encode_corpus(splits.source_train, vocab, max_len);
    const EncodedCorpus tgt_adapt_enc = encode_corpus(splits.target_adapt.unlabeled(), vocab, max_len);
    const EncodedCorpus tgt_held_enc = encode_corpus(splits.target_heldout.unlabeled(), vocab, max_len);
    const EncodedCorpus tgt_pool_enc = encode_corpus(splits.target_pool.unlabeled(), vocab, max_len);
    ProbeConfig probe = cfg.probe;
    probe.seed = stage_seed(cfg.seed, 8);

    r.selection = stage("layer selection",
                        [&] { return select_hidden_layer(src.encoder, src_train_enc, tgt_pool_enc, probe); });
    spdlog::info("pre-adversarial layer {}", r.selection.pre_adversarial_layer);

    AdaptResult adapted = stage("adaptation", [&] {
        TargetInit<float> init = init_target_from_source(src.encoder, cfg.share, &ecfg);
        DiscriminatorParams<float> disc =
            init_discriminator<float>(ecfg.d_model, cfg.head_width, stage_seed(cfg.seed, 9));
        const EncodedCorpus src_unl = encode_corpus(splits.source_train.unlabeled(), vocab, max_len);
        const EncodedCorpus src_held = encode_corpus(splits.source_valid.unlabeled(), vocab, max_len);
        const AdaptInputs inputs{src.encoder, src.classifier, r.selection.pre_adversarial_layer, src.layer,
                                 src_unl, tgt_adapt_enc, src_held, tgt_held_enc};
        TrainConfig tc = cfg.adapt;
        tc.seed = stage_seed(cfg.seed, 10);
        return adversarial_adapt(inputs, std::move(init), std::move(disc), tc);
    });
    r.target_encoder = std::move(adapted.target);
    r.discriminator = std::move(adapted.discriminator);
    r.report = std::move(adapted.report);
    spdlog::info("discriminator held-out accuracy {:.3f} -> {:.3f}", r.report.heldout_accuracy_before,
                 r.report.final_accuracy());

    r.selection = stage("layer selection", [&] {
        return select_post_adversarial(r.selection, src.encoder, r.target_encoder, src_train_enc, tgt_pool_enc, probe);
    });
    const std::size_t post = r.selection.post_adversarial_layer;
    spdlog::info("post-adversarial layer {}", post);

    r.target_classifier = stage("adabn", [&] {
        ClassifierParams<float> cls = src.classifier;
        if (post != src.layer) {
            TrainConfig tc = cfg.source_train;
            tc.seed = stage_seed(cfg.seed, 11);
            const EncodedCorpus oversampled =
                encode_corpus(oversample_positive(splits.source_train, cfg.oversample_factor), vocab, max_len);
            cls = fit_classifier_head(src.encoder,
                                      init_classifier<float>(ecfg.d_model, cfg.head_width, stage_seed(cfg.seed, 12)),
                                      post, oversampled, tc);
        }
        const Tensor<float> features = pooled_features(r.target_encoder, tgt_pool_enc, post);
        const auto stream = feature_stream(features, cfg.adapt.batch_size);
        adapt_bn_statistics(cls, std::span<const Tensor<float>>(stream));
        return cls;
    });
    return r;
}

PipelineResult run_configuration(const Corpus& source, const Corpus& target, const PipelineConfig& cfg) {
    const std::size_t reads_at_start = target.label_reads();
    const Splits splits = split_inputs(source, target, cfg);
    PipelineResult r;
    r.target_test_size = splits.target_test.size();

    SourceStage s = run_source_stage(splits, cfg);
    r.vocab = std::move(s.vocab);
    r.max_len = s.max_len;
    r.length = std::move(s.length);
    r.source = std::move(s.source);
    const SourceModel& src = r.source.model;

    AdaptStage a = run_adapt_stage(splits, r.vocab, r.max_len, src, cfg);
    r.selection = std::move(a.selection);
    r.target_encoder = std::move(a.target_encoder);
    r.discriminator = std::move(a.discriminator);
    r.target_classifier = std::move(a.target_classifier);
    r.report = std::move(a.report);

    r.target_label_reads_before_evaluation = target.label_reads() - reads_at_start;
    stage("evaluation", [&] {
        r.baseline = evaluate(src.encoder, src.classifier, src.layer, splits.target_test, r.vocab, r.max_len);
        r.xpcb = evaluate(r.target_encoder, r.target_classifier, r.selection.post_adversarial_layer,
                          splits.target_test, r.vocab, r.max_len);
    });
    spdlog::info("macro-F1 baseline {:.4f} xp-cb {:.4f}", r.baseline.macro_f1, r.xpcb.macro_f1);
    return r;
}

// ---------------------------------------------------------------- embeddings

std::string EmbeddingDump::csv() const {
    std::string out;
    if (dim == 2) {
        out = "x,y";
    } else {
        for (std::size_t c = 0; c < dim; ++c) out += (c ? ",x" : "x") + std::to_string(c);
    }
    out += ",platform,label\n";
    char buf[32];
    for (std::size_t i = 0; i < rows(); ++i) {
        for (float v : row(i)) {
            std::snprintf(buf, sizeof buf, "%.9g,", static_cast<double>(v));
            out += buf;
        }
        out += platform[i] == PlatformTag::source ? "source," : "target,";
        out += std::to_string(label[i]) + "\n";
    }
    return out;
}

void EmbeddingDump::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << csv();
}

EmbeddingDump export_embeddings(const EncoderParams<float>& source_encoder, const EncoderParams<float>& target_encoder,
                                const Corpus& source, const Corpus& target, const Vocabulary& vocab,
                                std::size_t max_len, std::size_t layer) {
    if (source_encoder.config.d_model != target_encoder.config.d_model)
        throw ArtifactMismatch("source and target encoders differ in width");
    EmbeddingDump dump;
    dump.dim = source_encoder.config.d_model;
    auto add = [&](const EncoderParams<float>& enc, const Corpus& corpus, PlatformTag tag) {
        if (!corpus.fully_labeled()) throw InputError("embedding export needs gold labels for tagging");
        const EncodedCorpus e = encode_corpus(corpus, vocab, max_len);
        const Tensor<float> f = pooled_features(enc, e, layer);
        dump.values.insert(dump.values.end(), f.data.begin(), f.data.end());
        for (std::size_t i = 0; i < e.size(); ++i) {
            dump.platform.push_back(tag);
            dump.label.push_back(e.labels[i]);
        }
    };
    add(source_encoder, source, PlatformTag::source);
    add(target_encoder, target, PlatformTag::target);
    return dump;
}

double centroid_distance(const EmbeddingDump& dump) {
    std::vector<double> cs(dump.dim, 0.0), ct(dump.dim, 0.0);
    double ns = 0.0, nt = 0.0;
    for (std::size_t i = 0; i < dump.rows(); ++i) {
        auto& c = dump.platform[i] == PlatformTag::source ? cs : ct;
        (dump.platform[i] == PlatformTag::source ? ns : nt) += 1.0;
        for (std::size_t k = 0; k < dump.dim; ++k) c[k] += dump.row(i)[k];
    }
    if (ns == 0.0 || nt == 0.0) throw InputError("centroid distance needs both platforms");
    double sq = 0.0;
    for (std::size_t k = 0; k < dump.dim; ++k) {
        const double d = cs[k] / ns - ct[k] / nt;
        sq += d * d;
    }
    return std::sqrt(sq);
}

}  // namespace xpcb
