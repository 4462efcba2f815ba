#pragma once

// Probability-space losses with analytic gradients.
//
// Inputs are [n x 2] probability rows. Every logarithm and ratio argument is
// clamped below at eps (default 1e-8); the gradient through a clamped entry
// is zero.

#include <span>

#include "xpcb/tensor.hpp"

namespace xpcb {

inline constexpr double kClampEps = 1e-8;

template <class T>
struct LossResult {
    double value = 0.0;
    Tensor<T> grad;  // d(value)/d(probs), same shape as the input
};

enum class KldDirection { source_to_target, target_to_source };

// Throws InputError unless every row lies in [0,1] and sums to 1 within tol.
template <class T>
void check_probability_rows(const Tensor<T>& probs, double tol = 1e-4);

// mean_i -log(clamp(p_i[label_i]))
template <class T>
LossResult<T> cross_entropy(const Tensor<T>& probs, std::span<const int> labels, double eps = kClampEps);

// Discriminator objective: source rows should say 0, target rows should say 1.
template <class T>
struct DiscriminatorLoss {
    double value = 0.0;
    Tensor<T> grad_source, grad_target;
};
template <class T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& source_probs, const Tensor<T>& target_probs,
                                        double eps = kClampEps);

// Inverted-label mapping loss: mean over target rows of -log(clamp(P(source))).
template <class T>
LossResult<T> adversarial_encoder_loss(const Tensor<T>& target_probs, double eps = kClampEps);

// Encoder-measurer loss: mean over rows of KL(source || target) (default) or
// KL(target || source). The gradient is with respect to target_hypothesis;
// source_hypothesis comes from the frozen source path. 0 * ln 0 := 0.
template <class T>
LossResult<T> kld_measurer_loss(const Tensor<T>& source_hypothesis, const Tensor<T>& target_hypothesis,
                                KldDirection direction = KldDirection::source_to_target, double eps = kClampEps);

}  // namespace xpcb
