#pragma once

// Two-layer feed-forward heads over pooled encoder features.
//
//   classifier:    Linear(d -> h) -> BatchNorm(h) -> ReLU -> Linear(h -> 2) -> Softmax
//   discriminator: Linear(d -> h) -> ReLU -> Linear(h -> 2) -> Softmax
//
// h is 512 ("reduction") or 3072 ("expansion"). Discriminator output index 0
// is the source platform, index 1 the target platform.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xpcb/tensor.hpp"

namespace xpcb {

inline constexpr std::size_t kReductionWidth = 512;
inline constexpr std::size_t kExpansionWidth = 3072;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

std::size_t parse_head_width(std::string_view mode);  // "reduction" | "expansion"
std::string_view head_width_name(std::size_t width);

enum class HeadMode { train, eval };

template <class T>
struct ClassifierParams {
    Tensor<T> w1, b1;            // [d x h], [h]
    Tensor<T> bn_gain, bn_bias;  // [h]
    Tensor<T> w2, b2;            // [h x 2], [2]
    Tensor<T> running_mean, running_var;  // [h], not trained
    double momentum = kBatchNormMomentum;
    std::string prefix = "classifier.";

    std::size_t input_dim() const { return w1.shape.at(0); }
    std::size_t hidden() const { return w1.shape.at(1); }

    // Trainable tensors.
    template <class F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <class F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }
    // Trainable tensors followed by the batch-norm running statistics.
    template <class F>
    void visit_state(F&& f) {
        visit_impl(*this, f);
        f(prefix + "bn.running_mean", running_mean);
        f(prefix + "bn.running_var", running_var);
    }
    template <class F>
    void visit_state(F&& f) const {
        visit_impl(*this, f);
        f(prefix + "bn.running_mean", running_mean);
        f(prefix + "bn.running_var", running_var);
    }

private:
    template <class Self, class F>
    static void visit_impl(Self& s, F& f) {
        f(s.prefix + "fc1.weight", s.w1);
        f(s.prefix + "fc1.bias", s.b1);
        f(s.prefix + "bn.gain", s.bn_gain);
        f(s.prefix + "bn.bias", s.bn_bias);
        f(s.prefix + "fc2.weight", s.w2);
        f(s.prefix + "fc2.bias", s.b2);
    }
};

template <class T>
struct DiscriminatorParams {
    Tensor<T> w1, b1;  // [d x h], [h]
    Tensor<T> w2, b2;  // [h x 2], [2]
    std::string prefix = "discriminator.";

    std::size_t input_dim() const { return w1.shape.at(0); }
    std::size_t hidden() const { return w1.shape.at(1); }

    template <class F>
    void visit(F&& f) {
        visit_impl(*this, f);
    }
    template <class F>
    void visit(F&& f) const {
        visit_impl(*this, f);
    }
    template <class F>
    void visit_state(F&& f) {
        visit_impl(*this, f);
    }
    template <class F>
    void visit_state(F&& f) const {
        visit_impl(*this, f);
    }

private:
    template <class Self, class F>
    static void visit_impl(Self& s, F& f) {
        f(s.prefix + "fc1.weight", s.w1);
        f(s.prefix + "fc1.bias", s.b1);
        f(s.prefix + "fc2.weight", s.w2);
        f(s.prefix + "fc2.bias", s.b2);
    }
};

template <class T>
ClassifierParams<T> init_classifier(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);
template <class T>
DiscriminatorParams<T> init_discriminator(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

template <class T>
struct ClassifierCache {
    HeadMode mode = HeadMode::eval;
    Tensor<T> input;   // [n x d]
    Tensor<T> xhat;    // normalised BN input, [n x h]
    std::vector<T> rstd;  // per feature
    Tensor<T> z2;      // BN output before ReLU
    Tensor<T> r;       // ReLU output
    Tensor<T> probs;   // [n x 2]
};

template <class T>
struct DiscriminatorCache {
    Tensor<T> input, z1, r, probs;
};

// Train mode normalises with batch statistics (batch >= 2, InputError
// otherwise) and moves the running statistics by the momentum. Eval mode uses
// the running statistics and is a pure per-row function.
template <class T>
Tensor<T> classifier_forward(ClassifierParams<T>& params, const Tensor<T>& pooled, HeadMode mode,
                             ClassifierCache<T>* cache = nullptr);
template <class T>
Tensor<T> classifier_eval(const ClassifierParams<T>& params, const Tensor<T>& pooled,
                          ClassifierCache<T>* cache = nullptr);
// Accumulates into grads (trainable tensors only); returns d(pooled).
template <class T>
Tensor<T> classifier_backward(const ClassifierParams<T>& params, const ClassifierCache<T>& cache,
                              const Tensor<T>& d_probs, ClassifierParams<T>& grads);

template <class T>
Tensor<T> discriminator_forward(const DiscriminatorParams<T>& params, const Tensor<T>& pooled,
                                DiscriminatorCache<T>* cache = nullptr);
template <class T>
Tensor<T> discriminator_backward(const DiscriminatorParams<T>& params, const DiscriminatorCache<T>& cache,
                                 const Tensor<T>& d_probs, DiscriminatorParams<T>& grads);

// First linear layer output (the batch-norm input) for a pooled batch.
template <class T>
Tensor<T> classifier_bn_input(const ClassifierParams<T>& params, const Tensor<T>& pooled);

// AdaBN: replace the running statistics with the population mean and
// variance of the batch-norm input over the whole stream. Variances are
// floored at kBatchNormEps. Weights are untouched.
template <class T>
void adapt_bn_statistics(ClassifierParams<T>& params, std::span<const Tensor<T>> pooled_stream);

// Row-wise softmax of [n x 2] logits.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits);
// d(logits) from d(probs) for a softmax output.
template <class T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& d_probs);

}  // namespace xpcb
