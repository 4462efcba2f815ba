#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "xpcb/tensor.hpp"

namespace xpcb {

struct AdamConfig {
    double learning_rate = 2e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    bool operator==(const AdamConfig&) const = default;
};

namespace detail {

template <class T, class Params>
std::vector<std::pair<std::string, Tensor<T>*>> collect(Params& p) {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    p.visit([&](const std::string& name, Tensor<T>& t) { out.emplace_back(name, &t); });
    return out;
}

template <class T, class Params>
std::vector<std::pair<std::string, const Tensor<T>*>> collect(const Params& p) {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    p.visit([&](const std::string& name, const Tensor<T>& t) { out.emplace_back(name, &t); });
    return out;
}

}  // namespace detail

// L2 norm over all gradient tensors not listed in frozen.
template <class T, class Params>
double gradient_norm(const Params& grads, const std::set<std::string>& frozen = {}) {
    double sq = 0.0;
    grads.visit([&](const std::string& name, const Tensor<T>& t) {
        if (frozen.count(name)) return;
        for (T v : t.data) sq += static_cast<double>(v) * static_cast<double>(v);
    });
    return std::sqrt(sq);
}

template <class T, class Params>
void scale_gradients(Params& grads, double factor) {
    grads.visit([&](const std::string&, Tensor<T>& t) {
        for (T& v : t.data) v = static_cast<T>(v * factor);
    });
}

// Adam with bias correction. Tensors named in the frozen set are never updated.
template <class T, class Params>
class Adam {
public:
    Adam(const Params& like, AdamConfig config, std::set<std::string> frozen = {})
        : config_(config), frozen_(std::move(frozen)), m_(zeros_like(like)), v_(zeros_like(like)) {}

    void step(Params& params, const Params& grads) {
        ++steps_;
        const double b1t = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
        const double b2t = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
        auto p = detail::collect<T>(params);
        auto g = detail::collect<T>(grads);
        auto m = detail::collect<T>(m_);
        auto v = detail::collect<T>(v_);
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (frozen_.count(p[i].first)) continue;
            auto& pd = p[i].second->data;
            const auto& gd = g[i].second->data;
            auto& md = m[i].second->data;
            auto& vd = v[i].second->data;
            for (std::size_t k = 0; k < pd.size(); ++k) {
                const double gk = static_cast<double>(gd[k]);
                const double mk = config_.beta1 * static_cast<double>(md[k]) + (1.0 - config_.beta1) * gk;
                const double vk = config_.beta2 * static_cast<double>(vd[k]) + (1.0 - config_.beta2) * gk * gk;
                md[k] = static_cast<T>(mk);
                vd[k] = static_cast<T>(vk);
                const double update = config_.learning_rate * (mk / b1t) / (std::sqrt(vk / b2t) + config_.eps);
                pd[k] = static_cast<T>(static_cast<double>(pd[k]) - update);
            }
        }
    }

    std::size_t steps() const { return steps_; }
    const std::set<std::string>& frozen() const { return frozen_; }

private:
    AdamConfig config_;
    std::set<std::string> frozen_;
    Params m_, v_;
    std::size_t steps_ = 0;
};

}  // namespace xpcb
