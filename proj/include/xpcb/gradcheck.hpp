#pragma once

// Central finite-difference verification of analytic gradients, run in double.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "xpcb/tensor.hpp"

namespace xpcb {

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::string worst_tensor;
    std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient
// is zero from dividing rounding noise by zero.
inline constexpr double kGradCheckFloor = 1e-6;

inline double relative_error(double analytic, double numeric, double floor = kGradCheckFloor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Perturbs every element of every tensor of params by +-step, evaluates
// loss(), and compares the central difference against analytic (same
// visiting order as params).
template <class Params, class LossFn>
GradCheckResult gradient_check(Params& params, const Params& analytic, LossFn&& loss, double step = 1e-4) {
    GradCheckResult result;
    std::vector<const Tensor<double>*> grads;
    analytic.visit([&](const std::string&, const Tensor<double>& t) { grads.push_back(&t); });
    std::size_t k = 0;
    params.visit([&](const std::string& name, Tensor<double>& t) {
        const Tensor<double>& g = *grads.at(k++);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t.data[i];
            t.data[i] = saved + step;
            const double up = loss();
            t.data[i] = saved - step;
            const double down = loss();
            t.data[i] = saved;
            const double err = relative_error(g.data[i], (up - down) / (2.0 * step));
            ++result.checked;
            if (err > result.max_relative_error) {
                result.max_relative_error = err;
                result.worst_tensor = name;
            }
        }
    });
    return result;
}

// Ready-made checks on tiny models (d_model 8, batch 2, one padded row).
// Each returns the worst relative error over all parameter tensors involved.
GradCheckResult check_encoder_cross_entropy(std::uint64_t seed = 0, double step = 1e-4);
GradCheckResult check_discriminator_loss(std::uint64_t seed = 0, double step = 1e-4);
GradCheckResult check_target_encoder_adaptation(std::uint64_t seed = 0, double step = 1e-4);

}  // namespace xpcb
