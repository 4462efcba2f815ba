#include "xpcb/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "xpcb/errors.hpp"
#include "xpcb/metrics.hpp"

namespace xpcb {

namespace {

struct Split {
    std::vector<std::size_t> train, held_out;
};

// Seeded permutation of [0, n), optionally truncated, then cut into train and held-out parts.
Split split_indices(std::size_t n, std::size_t keep, double held_out_fraction, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(std::min(n, keep));
    const auto n_held = static_cast<std::size_t>(std::llround(held_out_fraction * static_cast<double>(idx.size())));
    Split s;
    s.held_out.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_held));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_held), idx.end());
    return s;
}

Tensor<double> rows_of(const Tensor<float>& x, std::span<const std::size_t> idx) {
    Tensor<double> out = matrix<double>(idx.size(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(idx[i], c);
    return out;
}

void require_two_classes(std::span<const int> y, const char* what) {
    if (std::set<int>(y.begin(), y.end()).size() < 2)
        throw InputError(std::string("degenerate single-class probe split (") + what + ")");
}

// Candidates are the transformer layers; index 0 (embeddings) is scored for
// reporting only.
std::size_t argmax_deeper(const std::vector<LayerScore>& scores, double LayerScore::*field) {
    std::size_t best = scores.size() > 1 ? 1 : 0;
    for (std::size_t l = best + 1; l < scores.size(); ++l)
        if (scores[l].*field >= scores[best].*field) best = l;
    return best;
}

}  // namespace

LogisticProbe LogisticProbe::fit(const Tensor<double>& x, std::span<const int> y, const ProbeConfig& cfg) {
    if (x.rows() != y.size() || y.empty()) throw InputError("probe: feature/label count mismatch");
    require_two_classes(y, "training");
    const std::size_t n = x.rows(), d = x.cols();
    LogisticProbe p;
    p.mean_.assign(d, 0.0);
    p.inv_std_.assign(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) p.mean_[c] += x(i, c);
    for (double& m : p.mean_) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) p.inv_std_[c] += (x(i, c) - p.mean_[c]) * (x(i, c) - p.mean_[c]);
    for (double& s : p.inv_std_) {
        const double sd = std::sqrt(s / static_cast<double>(n));
        s = sd > 1e-8 ? 1.0 / sd : 0.0;
    }
    Tensor<double> z = matrix<double>(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) z(i, c) = (x(i, c) - p.mean_[c]) * p.inv_std_[c];

    // Full-batch Adam on the mean logistic loss plus an L2 penalty.
    p.weights_.assign(d, 0.0);
    std::vector<double> m(d + 1, 0.0), v(d + 1, 0.0), g(d + 1);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double s = p.bias_;
            for (std::size_t c = 0; c < d; ++c) s += p.weights_[c] * z(i, c);
            const double err = 1.0 / (1.0 + std::exp(-s)) - static_cast<double>(y[i]);
            for (std::size_t c = 0; c < d; ++c) g[c] += err * z(i, c);
            g[d] += err;
        }
        for (std::size_t c = 0; c <= d; ++c) g[c] /= static_cast<double>(n);
        for (std::size_t c = 0; c < d; ++c) g[c] += cfg.l2 * p.weights_[c];
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(it));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(it));
        for (std::size_t c = 0; c <= d; ++c) {
            m[c] = b1 * m[c] + (1.0 - b1) * g[c];
            v[c] = b2 * v[c] + (1.0 - b2) * g[c] * g[c];
            const double step = cfg.learning_rate * (m[c] / c1) / (std::sqrt(v[c] / c2) + eps);
            if (c < d) p.weights_[c] -= step;
            else p.bias_ -= step;
        }
    }
    return p;
}

double LogisticProbe::probability(std::span<const double> row) const {
    double s = bias_;
    for (std::size_t c = 0; c < weights_.size(); ++c) s += weights_[c] * (row[c] - mean_[c]) * inv_std_[c];
    return 1.0 / (1.0 + std::exp(-s));
}

double task_probe_score(const Tensor<float>& features, std::span<const int> labels, const ProbeConfig& cfg) {
    if (features.rows() != labels.size()) throw InputError("task probe: feature/label count mismatch");
    Rng rng(cfg.seed);
    const Split split = split_indices(features.rows(), cfg.max_samples, cfg.held_out_fraction, rng);
    if (split.held_out.empty() || split.train.empty()) throw InputError("task probe: too few samples to split");
    std::vector<int> y_train, y_held;
    for (std::size_t i : split.train) y_train.push_back(labels[i]);
    for (std::size_t i : split.held_out) y_held.push_back(labels[i]);
    require_two_classes(y_held, "task held-out");
    const LogisticProbe probe = LogisticProbe::fit(rows_of(features, split.train), y_train, cfg);
    const Tensor<double> held = rows_of(features, split.held_out);
    std::vector<int> pred(held.rows());
    for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = probe.predict(held.row(i));
    return compute_metrics(pred, y_held).macro_f1;
}

double domain_probe_accuracy(const Tensor<float>& source, const Tensor<float>& target, const ProbeConfig& cfg) {
    if (source.rows() == 0 || target.rows() == 0) throw InputError("domain probe needs source and target features");
    if (source.cols() != target.cols()) throw InputError("domain probe: feature widths differ");
    Rng rng(cfg.seed ^ 0x646f6d61696eULL);
    const std::size_t per_side = std::min({source.rows(), target.rows(), cfg.max_samples});
    auto pick = [&](std::size_t n) {
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(idx));
        idx.resize(per_side);
        return idx;
    };
    const std::vector<std::size_t> si = pick(source.rows()), ti = pick(target.rows());
    Tensor<float> pooled = matrix<float>(2 * per_side, source.cols());
    std::vector<int> side(2 * per_side);
    for (std::size_t i = 0; i < per_side; ++i) {
        std::copy_n(source.row(si[i]).begin(), source.cols(), pooled.row(i).begin());
        std::copy_n(target.row(ti[i]).begin(), target.cols(), pooled.row(per_side + i).begin());
        side[per_side + i] = 1;
    }
    const Split split = split_indices(pooled.rows(), pooled.rows(), cfg.held_out_fraction, rng);
    std::vector<int> y_train, y_held;
    for (std::size_t i : split.train) y_train.push_back(side[i]);
    for (std::size_t i : split.held_out) y_held.push_back(side[i]);
    if (y_held.empty()) throw InputError("domain probe: too few samples to split");
    require_two_classes(y_held, "domain held-out");
    const LogisticProbe probe = LogisticProbe::fit(rows_of(pooled, split.train), y_train, cfg);
    const Tensor<double> held = rows_of(pooled, split.held_out);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < held.rows(); ++i) correct += probe.predict(held.row(i)) == y_held[i];
    return static_cast<double>(correct) / static_cast<double>(held.rows());
}

double transferability(double task_score, double domain_accuracy) {
    return task_score - std::max(0.0, domain_accuracy - 0.5);
}

LayerSelection select_hidden_layer(const EncoderParams<float>& source, const EncodedCorpus& source_labeled,
                                   const EncodedCorpus& target_unlabeled, const ProbeConfig& cfg) {
    if (target_unlabeled.size() == 0) throw InputError("layer selection needs target texts");
    if (!source_labeled.labeled()) throw InputError("layer selection needs labeled source records");
    std::vector<std::size_t> layers(source.config.n_layers + 1);
    std::iota(layers.begin(), layers.end(), std::size_t{0});
    const auto src = pooled_features(source, source_labeled, layers);
    const auto tgt = pooled_features(source, target_unlabeled, layers);
    LayerSelection sel;
    sel.scores.resize(layers.size());
    for (std::size_t l : layers) {
        LayerScore& s = sel.scores[l];
        s.task_score = task_probe_score(src[l], source_labeled.labels, cfg);
        s.domain_accuracy = domain_probe_accuracy(src[l], tgt[l], cfg);
        s.transfer_pre = transferability(s.task_score, s.domain_accuracy);
        s.domain_accuracy_post = s.domain_accuracy;
        s.transfer_post = s.transfer_pre;
    }
    sel.pre_adversarial_layer = argmax_deeper(sel.scores, &LayerScore::transfer_pre);
    sel.post_adversarial_layer = sel.pre_adversarial_layer;
    return sel;
}

LayerSelection select_post_adversarial(LayerSelection sel, const EncoderParams<float>& source,
                                       const EncoderParams<float>& target, const EncodedCorpus& source_corpus,
                                       const EncodedCorpus& target_unlabeled, const ProbeConfig& cfg) {
    if (!(source.config == target.config)) throw ArtifactMismatch("source and target encoder configs differ");
    if (sel.scores.size() != source.config.n_layers + 1) throw ArtifactMismatch("layer scores do not match encoder");
    std::vector<std::size_t> layers(source.config.n_layers + 1);
    std::iota(layers.begin(), layers.end(), std::size_t{0});
    const auto src = pooled_features(source, source_corpus, layers);
    const auto tgt = pooled_features(target, target_unlabeled, layers);
    for (std::size_t l : layers) {
        LayerScore& s = sel.scores[l];
        s.domain_accuracy_post = domain_probe_accuracy(src[l], tgt[l], cfg);
        s.transfer_post = transferability(s.task_score, s.domain_accuracy_post);
    }
    sel.post_adversarial_layer = argmax_deeper(sel.scores, &LayerScore::transfer_post);
    return sel;
}

// ---------------------------------------------------------------- lengths

std::vector<std::size_t> default_length_candidates(std::span<const std::string> texts, std::size_t max_positions) {
    std::set<std::size_t> grid = {32, 64, 128, 256, 512};
    if (!texts.empty()) {
        const std::vector<std::size_t> counts = token_counts(texts);
        for (double q : {90.0, 95.0, 99.0}) grid.insert(percentile_length(counts, q));
    }
    std::vector<std::size_t> out;
    for (std::size_t c : grid)
        if (c >= 2 && c <= max_positions) out.push_back(c);
    return out;
}

LengthSearchResult optimize_input_length(const Corpus& train, const Corpus& valid, const Vocabulary& vocab,
                                         const EncoderConfig& encoder, const LengthSearchConfig& cfg) {
    LengthSearchResult result;
    result.candidates = cfg.candidates.empty() ? default_length_candidates(train.texts(), encoder.max_positions)
                                               : cfg.candidates;
    if (result.candidates.empty()) throw InputError("length search: no candidates");
    for (std::size_t c : result.candidates) {
        if (c < 2) throw InputError("length search: candidate " + std::to_string(c) + " is below 2");
        if (c > encoder.max_positions)
            throw InputError("length search: candidate " + std::to_string(c) + " exceeds positional capacity " +
                             std::to_string(encoder.max_positions));
    }
    if (!valid.fully_labeled() || valid.empty()) throw InputError("length search: validation corpus must be labeled");

    Corpus quick_train = train;
    if (train.size() > cfg.max_train_records) {
        Rng rng(cfg.train.seed ^ 0x6c656e677468ULL);
        std::vector<std::size_t> idx(train.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(idx));
        idx.resize(cfg.max_train_records);
        std::sort(idx.begin(), idx.end());
        quick_train = train.subset(idx);
    }

    EncoderConfig small = encoder;
    small.n_layers = std::min(cfg.quick_layers, encoder.n_layers);
    small.dropout_rate = 0.0;
    TrainConfig tc = cfg.train;
    tc.epochs = cfg.budget_epochs;

    double best = -1.0;
    for (std::size_t c : result.candidates) {
        const EncodedCorpus tr = encode_corpus(quick_train, vocab, c);
        const EncodedCorpus va = encode_corpus(valid, vocab, c);
        SourceModel model;
        model.encoder = init_encoder<float>(small, tc.seed);
        model.classifier = init_classifier<float>(small.d_model, cfg.head_width, tc.seed + 1);
        model.layer = small.n_layers;
        const SourceTrainResult r = train_source(std::move(model), tr, va, tc);
        const double score = r.history.empty() ? 0.0 : r.history[r.best_epoch - 1].valid_macro_f1;
        result.scores.push_back(score);
        if (score > best || (score == best && c < result.chosen)) {
            best = score;
            result.chosen = c;
        }
    }
    return result;
}

}  // namespace xpcb
