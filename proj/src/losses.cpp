#include "xpcb/losses.hpp"

#include <cmath>
#include <string>

#include "xpcb/errors.hpp"

namespace xpcb {

namespace {

inline double clamp_below(double p, double eps) { return p < eps ? eps : p; }

// d/dp of -log(clamp(p)): zero where the clamp is active.
inline double neg_log_grad(double p, double eps) { return p < eps ? 0.0 : -1.0 / p; }

}  // namespace

template <class T>
void check_probability_rows(const Tensor<T>& probs, double tol) {
    if (probs.shape.size() != 2 || probs.cols() != 2) throw InputError("expected [n x 2] probability rows");
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 2; ++c) {
            const double p = static_cast<double>(probs(r, c));
            if (!(p >= 0.0 && p <= 1.0)) throw InputError("row " + std::to_string(r) + " is not a probability row");
            sum += p;
        }
        if (std::abs(sum - 1.0) > tol) throw InputError("row " + std::to_string(r) + " does not sum to 1");
    }
}

template <class T>
LossResult<T> cross_entropy(const Tensor<T>& probs, std::span<const int> labels, double eps) {
    check_probability_rows(probs);
    if (labels.size() != probs.rows()) throw InputError("cross_entropy: label count mismatch");
    if (labels.empty()) throw InputError("cross_entropy: empty batch");
    LossResult<T> out{0.0, matrix<T>(probs.rows(), 2)};
    const double inv_n = 1.0 / static_cast<double>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw InputError("cross_entropy: label outside {0,1}");
        const double p = static_cast<double>(probs(i, static_cast<std::size_t>(labels[i])));
        out.value -= std::log(clamp_below(p, eps)) * inv_n;
        out.grad(i, static_cast<std::size_t>(labels[i])) = static_cast<T>(neg_log_grad(p, eps) * inv_n);
    }
    return out;
}

template <class T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& source_probs, const Tensor<T>& target_probs, double eps) {
    if (source_probs.rows() == 0 || target_probs.rows() == 0)
        throw InputError("discriminator_loss: both platforms need at least one row");
    check_probability_rows(source_probs);
    check_probability_rows(target_probs);
    DiscriminatorLoss<T> out{0.0, matrix<T>(source_probs.rows(), 2), matrix<T>(target_probs.rows(), 2)};
    const double inv_s = 1.0 / static_cast<double>(source_probs.rows());
    const double inv_t = 1.0 / static_cast<double>(target_probs.rows());
    for (std::size_t i = 0; i < source_probs.rows(); ++i) {
        const double p = static_cast<double>(source_probs(i, 0));
        out.value -= std::log(clamp_below(p, eps)) * inv_s;
        out.grad_source(i, 0) = static_cast<T>(neg_log_grad(p, eps) * inv_s);
    }
    for (std::size_t i = 0; i < target_probs.rows(); ++i) {
        const double p = static_cast<double>(target_probs(i, 1));
        out.value -= std::log(clamp_below(p, eps)) * inv_t;
        out.grad_target(i, 1) = static_cast<T>(neg_log_grad(p, eps) * inv_t);
    }
    return out;
}

template <class T>
LossResult<T> adversarial_encoder_loss(const Tensor<T>& target_probs, double eps) {
    check_probability_rows(target_probs);
    if (target_probs.rows() == 0) throw InputError("adversarial_encoder_loss: empty batch");
    LossResult<T> out{0.0, matrix<T>(target_probs.rows(), 2)};
    const double inv_n = 1.0 / static_cast<double>(target_probs.rows());
    for (std::size_t i = 0; i < target_probs.rows(); ++i) {
        const double p = static_cast<double>(target_probs(i, 0));
        out.value -= std::log(clamp_below(p, eps)) * inv_n;
        out.grad(i, 0) = static_cast<T>(neg_log_grad(p, eps) * inv_n);
    }
    return out;
}

template <class T>
LossResult<T> kld_measurer_loss(const Tensor<T>& source_hypothesis, const Tensor<T>& target_hypothesis,
                                KldDirection direction, double eps) {
    if (!source_hypothesis.same_shape(target_hypothesis))
        throw InputError("kld_measurer_loss: shape mismatch " + shape_string(source_hypothesis.shape) + " vs " +
                         shape_string(target_hypothesis.shape));
    check_probability_rows(source_hypothesis);
    check_probability_rows(target_hypothesis);
    const std::size_t n = source_hypothesis.rows();
    if (n == 0) throw InputError("kld_measurer_loss: empty batch");
    LossResult<T> out{0.0, matrix<T>(n, 2)};
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 2; ++c) {
            const double ps = static_cast<double>(source_hypothesis(i, c));
            const double pt = static_cast<double>(target_hypothesis(i, c));
            if (direction == KldDirection::source_to_target) {
                if (ps > 0.0) {
                    out.value += ps * std::log(clamp_below(ps, eps) / clamp_below(pt, eps)) * inv_n;
                    if (pt >= eps) out.grad(i, c) = static_cast<T>(-ps / pt * inv_n);
                }
            } else {
                if (pt > 0.0) {
                    out.value += pt * std::log(clamp_below(pt, eps) / clamp_below(ps, eps)) * inv_n;
                    const double log_term = std::log(clamp_below(pt, eps) / clamp_below(ps, eps));
                    out.grad(i, c) = static_cast<T>((log_term + (pt >= eps ? 1.0 : 0.0)) * inv_n);
                }
            }
        }
    }
    return out;
}

#define XPCB_INSTANTIATE(T)                                                                                    \
    template void check_probability_rows<T>(const Tensor<T>&, double);                                        \
    template LossResult<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>, double);                   \
    template DiscriminatorLoss<T> discriminator_loss<T>(const Tensor<T>&, const Tensor<T>&, double);          \
    template LossResult<T> adversarial_encoder_loss<T>(const Tensor<T>&, double);                             \
    template LossResult<T> kld_measurer_loss<T>(const Tensor<T>&, const Tensor<T>&, KldDirection, double);

XPCB_INSTANTIATE(float)
XPCB_INSTANTIATE(double)

#undef XPCB_INSTANTIATE

}  // namespace xpcb
