#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "xpcb/errors.hpp"
#include "xpcb/losses.hpp"
#include "xpcb/random.hpp"

using namespace xpcb;

namespace {

const double kLn2 = std::numbers::ln2;

Tensor<double> rows(std::initializer_list<std::pair<double, double>> r) {
    Tensor<double> t = matrix<double>(r.size(), 2);
    std::size_t i = 0;
    for (auto [a, b] : r) {
        t(i, 0) = a;
        t(i, 1) = b;
        ++i;
    }
    return t;
}

Tensor<double> random_probs(std::size_t n, Rng& rng) {
    Tensor<double> t = matrix<double>(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, 0) = rng.uniform(0.05, 0.95);
        t(i, 1) = 1.0 - t(i, 0);
    }
    return t;
}

template <class F>
void check_gradient(const Tensor<double>& x, const Tensor<double>& analytic, F&& f) {
    const double h = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor<double> up = x, down = x;
        up.data[i] += h;
        down.data[i] -= h;
        const double numeric = (f(up) - f(down)) / (2 * h);
        CHECK(std::abs(numeric - analytic.data[i]) <= 1e-6 * (1 + std::abs(numeric)));
    }
}

}  // namespace

TEST_CASE("cross entropy closed forms") {
    const std::vector<int> one{1}, zero{0};
    CHECK(cross_entropy(rows({{0.0, 1.0}}), one).value <= 1e-7);
    CHECK(std::abs(cross_entropy(rows({{0.5, 0.5}}), one).value - kLn2) < 1e-6);
    CHECK(std::abs(cross_entropy(rows({{0.5, 0.5}}), zero).value - kLn2) < 1e-6);
    const std::vector<int> both{1, 0};
    const double mean = cross_entropy(rows({{0.0, 1.0}, {0.5, 0.5}}), both).value;
    CHECK(std::abs(mean - kLn2 / 2) < 1e-6);
    CHECK(std::abs(mean - 0.3466) < 1e-4);
}

TEST_CASE("cross entropy clamps and rejects bad input") {
    const std::vector<int> one{1};
    const auto r = cross_entropy(rows({{1.0, 0.0}}), one);
    CHECK(std::isfinite(r.value));
    CHECK(std::abs(r.value + std::log(kClampEps)) < 1e-9);
    CHECK(r.grad(0, 1) == 0.0);
    const std::vector<int> bad{2};
    CHECK_THROWS_AS(cross_entropy(rows({{0.5, 0.5}}), bad), InputError);
    CHECK_THROWS_AS(check_probability_rows(rows({{0.7, 0.7}})), InputError);
    CHECK_THROWS_AS(check_probability_rows(rows({{1.2, -0.2}})), InputError);
}

TEST_CASE("discriminator loss closed forms") {
    CHECK(discriminator_loss(rows({{1.0, 0.0}}), rows({{0.0, 1.0}})).value <= 2e-7);
    CHECK(std::abs(discriminator_loss(rows({{0.5, 0.5}}), rows({{0.5, 0.5}})).value - 2 * kLn2) < 1e-6);
    const double fooled = discriminator_loss(rows({{0.0, 1.0}}), rows({{1.0, 0.0}})).value;
    CHECK(std::isfinite(fooled));
    CHECK(std::abs(fooled - 2 * -std::log(kClampEps)) < 1e-9);
}

TEST_CASE("adversarial encoder loss closed forms") {
    CHECK(adversarial_encoder_loss(rows({{1.0, 0.0}})).value <= 1e-7);
    CHECK(std::abs(adversarial_encoder_loss(rows({{0.5, 0.5}, {0.5, 0.5}})).value - kLn2) < 1e-6);
    CHECK(std::abs(adversarial_encoder_loss(rows({{0.25, 0.75}, {0.25, 0.75}})).value - std::log(4.0)) < 1e-6);
}

TEST_CASE("kld closed forms and asymmetry") {
    const auto p = rows({{0.3, 0.7}, {0.9, 0.1}});
    CHECK(std::abs(kld_measurer_loss(p, p).value) < 1e-10);
    CHECK(std::abs(kld_measurer_loss(p, p, KldDirection::target_to_source).value) < 1e-10);

    CHECK(std::abs(kld_measurer_loss(rows({{1.0, 0.0}}), rows({{0.5, 0.5}})).value - kLn2) < 1e-6);

    const auto a = rows({{0.9, 0.1}}), b = rows({{0.5, 0.5}});
    const double ab = kld_measurer_loss(a, b).value;
    const double ba = kld_measurer_loss(a, b, KldDirection::target_to_source).value;
    CHECK(std::abs(ab - 0.3681) < 1e-4);
    CHECK(std::abs(ba - 0.5108) < 1e-4);
}

TEST_CASE("kld is non-negative and zero only on identical rows") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = random_probs(3, rng), q = random_probs(3, rng);
        CHECK(kld_measurer_loss(p, q).value >= 0.0);
        CHECK(kld_measurer_loss(p, q, KldDirection::target_to_source).value >= 0.0);
    }
}

TEST_CASE("analytic loss gradients match central differences") {
    Rng rng(8);
    const auto s = random_probs(4, rng), t = random_probs(4, rng);
    const std::vector<int> labels{0, 1, 1, 0};

    check_gradient(s, cross_entropy(s, labels).grad, [&](const Tensor<double>& x) { return cross_entropy(x, labels).value; });
    check_gradient(t, adversarial_encoder_loss(t).grad, [](const Tensor<double>& x) { return adversarial_encoder_loss(x).value; });

    const auto d = discriminator_loss(s, t);
    check_gradient(s, d.grad_source, [&](const Tensor<double>& x) { return discriminator_loss(x, t).value; });
    check_gradient(t, d.grad_target, [&](const Tensor<double>& x) { return discriminator_loss(s, x).value; });

    for (auto dir : {KldDirection::source_to_target, KldDirection::target_to_source})
        check_gradient(t, kld_measurer_loss(s, t, dir).grad,
                       [&](const Tensor<double>& x) { return kld_measurer_loss(s, x, dir).value; });
}

TEST_CASE("float and double losses agree") {
    Rng rng(9);
    const auto s = random_probs(6, rng), t = random_probs(6, rng);
    const auto sf = s.cast<float>(), tf = t.cast<float>();
    CHECK(std::abs(kld_measurer_loss(sf, tf).value - kld_measurer_loss(s, t).value) < 1e-5);
    CHECK(std::abs(discriminator_loss(sf, tf).value - discriminator_loss(s, t).value) < 1e-5);
}
