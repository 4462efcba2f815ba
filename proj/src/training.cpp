#include "xpcb/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "xpcb/errors.hpp"

namespace xpcb {

namespace {

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

template <class Params>
void zero_all(Params& p) {
    p.visit([](const std::string&, Tensor<float>& t) { t.zero(); });
}

Tensor<float> gather_rows(const Tensor<float>& x, std::span<const std::size_t> rows) {
    Tensor<float> out = matrix<float>(rows.size(), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(x.row(rows[i]).begin(), x.cols(), out.row(i).begin());
    return out;
}

void require_unlabeled(const EncodedCorpus& corpus, const char* what) {
    if (corpus.labeled()) throw InputError(std::string("adaptation input '") + what + "' carries labels");
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size == 0) throw InputError("batch_size must be positive");
    if (!(adam.learning_rate > 0.0)) throw InputError("learning_rate must be positive");
    if (discriminator_learning_rate && !(*discriminator_learning_rate > 0.0))
        throw InputError("discriminator learning_rate must be positive");
    if (!(lambda_kld >= 0.0)) throw InputError("lambda_kld must be non-negative");
    if (!(clamp_eps > 0.0)) throw InputError("clamp_eps must be positive");
    if (!(clip_threshold > 0.0) || !(clip_norm > 0.0)) throw InputError("clip settings must be positive");
}

std::vector<Tensor<float>> pooled_features(const EncoderParams<float>& encoder, const EncodedCorpus& corpus,
                                           std::span<const std::size_t> layers, std::size_t batch_size) {
    if (layers.empty()) return {};
    const std::size_t top = *std::max_element(layers.begin(), layers.end());
    if (top > encoder.config.n_layers) throw InputError("layer index " + std::to_string(top) + " out of range");
    const std::size_t d = encoder.config.d_model;
    std::vector<Tensor<float>> out(layers.size(), matrix<float>(corpus.size(), d));
    ForwardOptions options;
    options.top_layer = top;
    std::size_t row = 0;
    for (const TokenBatch& b : sequential_batches(corpus, batch_size)) {
        const EncoderTape<float> tape = encoder_forward(encoder, b, options);
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const Tensor<float> p = tape.pooled(layers[k], encoder.config.pooling);
            std::copy(p.data.begin(), p.data.end(), out[k].data.begin() + static_cast<std::ptrdiff_t>(row * d));
        }
        row += b.batch;
    }
    return out;
}

Tensor<float> pooled_features(const EncoderParams<float>& encoder, const EncodedCorpus& corpus, std::size_t layer,
                              std::size_t batch_size) {
    const std::size_t layers[] = {layer};
    return std::move(pooled_features(encoder, corpus, layers, batch_size).front());
}

Tensor<float> predict_probs(const EncoderParams<float>& encoder, const ClassifierParams<float>& classifier,
                            std::size_t layer, const EncodedCorpus& corpus) {
    return classifier_eval(classifier, pooled_features(encoder, corpus, layer));
}

std::vector<int> predict(const EncoderParams<float>& encoder, const ClassifierParams<float>& classifier,
                         std::size_t layer, const EncodedCorpus& corpus) {
    const Tensor<float> probs = predict_probs(encoder, classifier, layer, corpus);
    std::vector<int> out(probs.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = predict_label(probs.row(i));
    return out;
}

// ---------------------------------------------------------------- source stage

SourceTrainResult train_source(SourceModel init, const EncodedCorpus& train, const EncodedCorpus& valid,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (!train.labeled() || train.size() == 0) throw InputError("source training needs a labeled, non-empty corpus");
    if (!valid.labeled() || valid.size() == 0) throw InputError("source training needs a labeled validation corpus");
    if (init.layer > init.encoder.config.n_layers) throw InputError("classifier layer out of range");

    SourceTrainResult result;
    result.model = std::move(init);
    EncoderParams<float>& enc = result.model.encoder;
    ClassifierParams<float>& cls = result.model.classifier;
    const std::size_t layer = result.model.layer;
    const Pooling pooling = enc.config.pooling;

    Adam<float, EncoderParams<float>> enc_opt(enc, cfg.adam);
    Adam<float, ClassifierParams<float>> cls_opt(cls, cfg.adam);
    EncoderParams<float> enc_grads = zeros_like(enc);
    ClassifierParams<float> cls_grads = zeros_like(cls);

    Rng rng(cfg.seed);
    Rng dropout_rng = rng.fork(0x64726f70);
    ForwardOptions options;
    options.top_layer = layer;
    options.dropout_rng = enc.config.dropout_rate > 0.0 ? &dropout_rng : nullptr;

    SourceModel best = result.model;
    double best_f1 = -1.0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        for (const TokenBatch& b : make_batches(train, cfg.batch_size, rng.next())) {
            if (b.batch < 2) continue;
            ++result.steps;
            try {
                const EncoderTape<float> tape = encoder_forward(enc, b, options);
                ClassifierCache<float> cache;
                const Tensor<float> probs =
                    classifier_forward(cls, tape.pooled(layer, pooling), HeadMode::train, &cache);
                const LossResult<float> loss = cross_entropy(probs, b.labels, cfg.clamp_eps);
                if (!std::isfinite(loss.value)) throw NumericalError("non-finite loss");
                zero_all(enc_grads);
                zero_all(cls_grads);
                const Tensor<float> d_pooled = classifier_backward(cls, cache, loss.grad, cls_grads);
                std::vector<Tensor<float>> d_states(layer + 1);
                d_states[layer] = pool_backward(d_pooled, tape.mask, tape.batch, tape.len, pooling);
                encoder_backward(enc, tape, std::move(d_states), enc_grads);
                if (!std::isfinite(gradient_norm<float>(enc_grads)) || !std::isfinite(gradient_norm<float>(cls_grads)))
                    throw NumericalError("non-finite gradient");
                enc_opt.step(enc, enc_grads);
                cls_opt.step(cls, cls_grads);
                loss_sum += loss.value;
                ++loss_count;
            } catch (const NumericalError& e) {
                throw NumericalError("source training diverged at step " + std::to_string(result.steps) + ": " +
                                     e.what());
            }
        }
        EpochStats stats;
        stats.epoch = epoch + 1;
        stats.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        stats.valid_macro_f1 = compute_metrics(predict(enc, cls, layer, valid), valid.labels).macro_f1;
        result.history.push_back(stats);
        if (stats.valid_macro_f1 > best_f1) {
            best_f1 = stats.valid_macro_f1;
            best = result.model;
            result.best_epoch = stats.epoch;
        }
    }
    if (cfg.epochs > 0) result.model = std::move(best);
    return result;
}

ClassifierParams<float> fit_classifier_head(const EncoderParams<float>& encoder, ClassifierParams<float> cls,
                                            std::size_t layer, const EncodedCorpus& train, const TrainConfig& cfg) {
    cfg.validate();
    if (!train.labeled() || train.size() < 2) throw InputError("head refit needs at least two labeled records");
    const Tensor<float> features = pooled_features(encoder, train, layer);
    Adam<float, ClassifierParams<float>> opt(cls, cfg.adam);
    ClassifierParams<float> grads = zeros_like(cls);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, order.size() - start);
            if (n < 2) continue;
            const std::span<const std::size_t> idx(order.data() + start, n);
            std::vector<int> labels(n);
            for (std::size_t i = 0; i < n; ++i) labels[i] = train.labels[idx[i]];
            ClassifierCache<float> cache;
            const Tensor<float> probs = classifier_forward(cls, gather_rows(features, idx), HeadMode::train, &cache);
            const LossResult<float> loss = cross_entropy(probs, labels, cfg.clamp_eps);
            if (!std::isfinite(loss.value)) throw NumericalError("classifier refit diverged");
            zero_all(grads);
            classifier_backward(cls, cache, loss.grad, grads);
            opt.step(cls, grads);
        }
    }
    return cls;
}

// ---------------------------------------------------------------- adaptation

std::string AdaptReport::csv() const {
    std::string out = "step,epoch,d_loss,adv_loss,kld_loss,grad_norm,clipped,disc_heldout_acc\n";
    for (const AdaptStep& s : steps) {
        out += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + fmt_double(s.d_loss) + "," +
               fmt_double(s.adv_loss) + "," + fmt_double(s.kld_loss) + "," + fmt_double(s.grad_norm) + "," +
               (s.clipped ? "1" : "0") + "," + (s.heldout_accuracy ? fmt_double(*s.heldout_accuracy) : "") + "\n";
    }
    return out;
}

void AdaptReport::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << csv();
}

double discriminator_accuracy(const DiscriminatorParams<float>& discriminator, const Tensor<float>& source_features,
                              const Tensor<float>& target_features) {
    const std::size_t n = source_features.rows() + target_features.rows();
    if (n == 0) throw InputError("discriminator accuracy needs held-out features");
    std::size_t correct = 0;
    if (source_features.rows()) {
        const Tensor<float> p = discriminator_forward(discriminator, source_features);
        for (std::size_t i = 0; i < p.rows(); ++i) correct += predict_label(p.row(i)) == 0;
    }
    if (target_features.rows()) {
        const Tensor<float> p = discriminator_forward(discriminator, target_features);
        for (std::size_t i = 0; i < p.rows(); ++i) correct += predict_label(p.row(i)) == 1;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

AdaptResult adversarial_adapt(const AdaptInputs& in, TargetInit<float> target, DiscriminatorParams<float> disc,
                              const TrainConfig& cfg) {
    cfg.validate();
    require_unlabeled(in.source_train, "source_train");
    require_unlabeled(in.target_train, "target_train");
    require_unlabeled(in.source_heldout, "source_heldout");
    require_unlabeled(in.target_heldout, "target_heldout");
    if (in.source_train.size() == 0 || in.target_train.size() == 0)
        throw InputError("adaptation needs non-empty source and target corpora");
    if (!(target.params.config == in.source.config))
        throw ArtifactMismatch("target encoder config differs from the source encoder");
    const std::size_t adv = in.adversarial_layer, cls = in.classifier_layer;
    if (std::max(adv, cls) > in.source.config.n_layers) throw InputError("adaptation layer out of range");
    if (disc.input_dim() != in.source.config.d_model || in.classifier.input_dim() != in.source.config.d_model)
        throw ArtifactMismatch("head input width differs from the encoder width");

    const Pooling pooling = in.source.config.pooling;
    AdamConfig d_cfg = cfg.adam;
    if (cfg.discriminator_learning_rate) d_cfg.learning_rate = *cfg.discriminator_learning_rate;
    Adam<float, DiscriminatorParams<float>> d_opt(disc, d_cfg);
    Adam<float, EncoderParams<float>> e_opt(target.params, cfg.adam, target.frozen);
    DiscriminatorParams<float> d_grads = zeros_like(disc);
    DiscriminatorParams<float> d_scratch = zeros_like(disc);
    ClassifierParams<float> c_scratch = zeros_like(in.classifier);
    EncoderParams<float> e_grads = zeros_like(target.params);

    AdaptResult result;
    AdaptReport& report = result.report;
    Rng rng(cfg.seed);
    const Tensor<float> source_held = pooled_features(in.source, in.source_heldout, adv);
    auto heldout_accuracy = [&] {
        return discriminator_accuracy(disc, source_held, pooled_features(target.params, in.target_heldout, adv));
    };

    auto discriminator_step = [&](const Tensor<float>& fs, const Tensor<float>& ft) {
        DiscriminatorCache<float> cs, ct;
        const Tensor<float> ps = discriminator_forward(disc, fs, &cs);
        const Tensor<float> pt = discriminator_forward(disc, ft, &ct);
        const DiscriminatorLoss<float> loss = discriminator_loss(ps, pt, cfg.clamp_eps);
        zero_all(d_grads);
        discriminator_backward(disc, cs, loss.grad_source, d_grads);
        discriminator_backward(disc, ct, loss.grad_target, d_grads);
        d_opt.step(disc, d_grads);
        return loss.value;
    };

    ForwardOptions source_opts;
    source_opts.top_layer = std::max(adv, cls);
    ForwardOptions adv_opts;
    adv_opts.top_layer = adv;
    ForwardOptions cls_opts;
    cls_opts.top_layer = cls;

    // Warm-up touches only the discriminator, so the pooled features are fixed
    // and computed once.
    if (cfg.discriminator_warmup_epochs > 0) {
        const Tensor<float> all_s = pooled_features(in.source, in.source_train, adv);
        const Tensor<float> all_t = pooled_features(target.params, in.target_train, adv);
        std::vector<std::size_t> si(all_s.rows()), ti(all_t.rows());
        for (std::size_t w = 0; w < cfg.discriminator_warmup_epochs; ++w) {
            std::iota(si.begin(), si.end(), std::size_t{0});
            std::iota(ti.begin(), ti.end(), std::size_t{0});
            rng.shuffle(std::span<std::size_t>(si));
            rng.shuffle(std::span<std::size_t>(ti));
            for (std::size_t start = 0, k = 0; start < ti.size(); start += cfg.batch_size, ++k) {
                const std::size_t n = std::min(cfg.batch_size, ti.size() - start);
                const std::size_t s0 = (k * cfg.batch_size) % si.size();
                const std::size_t m = std::min(cfg.batch_size, si.size() - s0);
                const Tensor<float> fs = gather_rows(all_s, std::span<const std::size_t>(si).subspan(s0, m));
                const Tensor<float> ft = gather_rows(all_t, std::span<const std::size_t>(ti).subspan(start, n));
                if (!std::isfinite(discriminator_step(fs, ft)))
                    throw NumericalError("discriminator warm-up diverged");
            }
        }
    }
    report.heldout_accuracy_before = heldout_accuracy();

    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto sb = make_batches(in.source_train, cfg.batch_size, rng.next());
        const auto tb = make_batches(in.target_train, cfg.batch_size, rng.next());
        for (std::size_t i = 0; i < tb.size(); ++i) {
            const TokenBatch& s = sb[i % sb.size()];
            const TokenBatch& t = tb[i];
            AdaptStep rec;
            rec.step = ++step;
            rec.epoch = epoch + 1;

            const EncoderTape<float> s_tape = encoder_forward(in.source, s, source_opts);
            const EncoderTape<float> t_tape = encoder_forward(target.params, t, adv_opts);
            const Tensor<float> ft = t_tape.pooled(adv, pooling);

            // A: discriminator update, encoders fixed.
            rec.d_loss = discriminator_step(s_tape.pooled(adv, pooling), ft);

            // B: target-encoder update, discriminator fixed.
            zero_all(e_grads);
            DiscriminatorCache<float> dc;
            const Tensor<float> pt = discriminator_forward(disc, ft, &dc);
            const LossResult<float> adv_loss = adversarial_encoder_loss(pt, cfg.clamp_eps);
            rec.adv_loss = adv_loss.value;
            {
                const Tensor<float> d_ft = discriminator_backward(disc, dc, adv_loss.grad, d_scratch);
                std::vector<Tensor<float>> d_states(adv + 1);
                d_states[adv] = pool_backward(d_ft, t_tape.mask, t_tape.batch, t_tape.len, pooling);
                encoder_backward(target.params, t_tape, std::move(d_states), e_grads);
            }

            const Tensor<float> p_src = classifier_eval(in.classifier, s_tape.pooled(cls, pooling));
            const EncoderTape<float> k_tape = encoder_forward(target.params, s, cls_opts);
            ClassifierCache<float> cc;
            const Tensor<float> p_tgt = classifier_eval(in.classifier, k_tape.pooled(cls, pooling), &cc);
            LossResult<float> kld = kld_measurer_loss(p_src, p_tgt, cfg.kld_direction, cfg.clamp_eps);
            rec.kld_loss = kld.value;
            if (cfg.lambda_kld > 0.0) {
                for (float& g : kld.grad.data) g = static_cast<float>(g * cfg.lambda_kld);
                const Tensor<float> d_pk = classifier_backward(in.classifier, cc, kld.grad, c_scratch);
                std::vector<Tensor<float>> d_states(cls + 1);
                d_states[cls] = pool_backward(d_pk, k_tape.mask, k_tape.batch, k_tape.len, pooling);
                encoder_backward(target.params, k_tape, std::move(d_states), e_grads);
            }

            rec.grad_norm = gradient_norm<float>(e_grads, target.frozen);
            if (!std::isfinite(rec.d_loss) || !std::isfinite(rec.adv_loss) || !std::isfinite(rec.kld_loss) ||
                !std::isfinite(rec.grad_norm)) {
                report.steps.push_back(rec);
                throw NumericalError("adaptation diverged at step " + std::to_string(step));
            }
            if (rec.grad_norm > cfg.clip_threshold) {
                scale_gradients<float>(e_grads, cfg.clip_norm / rec.grad_norm);
                rec.clipped = true;
            }
            e_opt.step(target.params, e_grads);
            report.steps.push_back(rec);
        }
        const double acc = heldout_accuracy();
        report.epoch_accuracy.push_back(acc);
        if (!report.steps.empty() && report.steps.back().epoch == epoch + 1) report.steps.back().heldout_accuracy = acc;
        if (in.on_epoch) in.on_epoch(epoch + 1, target.params);
    }

    result.target = std::move(target.params);
    result.discriminator = std::move(disc);
    return result;
}

}  // namespace xpcb
