#include <doctest.h>

#include <cmath>
#include <vector>

#include "xpcb/errors.hpp"
#include "xpcb/heads.hpp"
#include "xpcb/losses.hpp"
#include "xpcb/optim.hpp"
#include "xpcb/random.hpp"

using namespace xpcb;

namespace {

Tensor<float> gaussian(std::size_t n, std::size_t d, double mean, double sd, Rng& rng) {
    Tensor<float> t = matrix<float>(n, d);
    for (auto& v : t.data) v = static_cast<float>(mean + sd * rng.normal());
    return t;
}

void check_rows_are_probabilities(const Tensor<float>& p) {
    for (std::size_t i = 0; i < p.rows(); ++i) {
        CHECK(p(i, 0) > 0.0f);
        CHECK(p(i, 1) > 0.0f);
        CHECK(p(i, 0) < 1.0f);
        CHECK(std::abs(p(i, 0) + p(i, 1) - 1.0f) < 1e-6f);
    }
}

}  // namespace

TEST_CASE("head widths") {
    CHECK(parse_head_width("reduction") == 512);
    CHECK(parse_head_width("expansion") == 3072);
    CHECK_THROWS_AS(parse_head_width("wide"), InputError);
}

TEST_CASE("classifier and discriminator rows are probabilities") {
    Rng rng(1);
    const auto x = gaussian(9, 16, 0.0, 3.0, rng);
    auto c = init_classifier<float>(16, 32, 2);
    check_rows_are_probabilities(classifier_forward(c, x, HeadMode::train));
    check_rows_are_probabilities(classifier_eval(c, x));
    check_rows_are_probabilities(discriminator_forward(init_discriminator<float>(16, 32, 3), x));
}

TEST_CASE("zero weights give uniform output") {
    Rng rng(2);
    const auto x = gaussian(4, 8, 0.0, 1.0, rng);
    auto c = init_classifier<float>(8, 16, 2);
    c.w1.zero();
    c.b1.zero();
    c.w2.zero();
    c.b2.zero();
    const auto p = classifier_eval(c, x);
    for (float v : p.data) CHECK(v == doctest::Approx(0.5f));
    auto d = init_discriminator<float>(8, 16, 3);
    d.visit([](const std::string&, Tensor<float>& t) { t.zero(); });
    for (float v : discriminator_forward(d, x).data) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("eval mode is a per-row function") {
    Rng rng(3);
    const auto x = gaussian(6, 8, 0.5, 2.0, rng);
    auto c = init_classifier<float>(8, 16, 4);
    (void)classifier_forward(c, x, HeadMode::train);  // move running statistics off the defaults
    const auto all = classifier_eval(c, x);
    for (std::size_t i = 0; i < 6; ++i) {
        Tensor<float> one = matrix<float>(1, 8);
        std::copy(x.row(i).begin(), x.row(i).end(), one.data.begin());
        const auto p = classifier_eval(c, one);
        CHECK(p(0, 0) == all(i, 0));
        CHECK(p(0, 1) == all(i, 1));
    }
}

TEST_CASE("train mode needs two rows") {
    Rng rng(3);
    auto c = init_classifier<float>(8, 16, 4);
    CHECK_THROWS_AS(classifier_forward(c, gaussian(1, 8, 0, 1, rng), HeadMode::train), InputError);
}

TEST_CASE("AdaBN stores population moments of the stream") {
    Rng rng(5);
    auto c = init_classifier<double>(6, 10, 7);
    const auto before_w = c.w1.data;
    std::vector<Tensor<double>> stream;
    for (int b = 0; b < 7; ++b) {
        Tensor<double> t = matrix<double>(13 + b, 6);
        for (auto& v : t.data) v = 2.0 + 3.0 * rng.normal();
        stream.push_back(t);
    }
    adapt_bn_statistics(c, std::span<const Tensor<double>>(stream));
    CHECK(c.w1.data == before_w);

    // Oracle: concatenate the bn inputs and take moments directly.
    const std::size_t h = 10;
    std::vector<double> sum(h, 0.0), sq(h, 0.0);
    std::size_t n = 0;
    std::vector<Tensor<double>> inputs;
    for (const auto& t : stream) inputs.push_back(classifier_bn_input(c, t));
    for (const auto& z : inputs)
        for (std::size_t r = 0; r < z.rows(); ++r, ++n)
            for (std::size_t j = 0; j < h; ++j) sum[j] += z(r, j);
    for (std::size_t j = 0; j < h; ++j) sum[j] /= static_cast<double>(n);
    for (const auto& z : inputs)
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t j = 0; j < h; ++j) sq[j] += (z(r, j) - sum[j]) * (z(r, j) - sum[j]);
    for (std::size_t j = 0; j < h; ++j) {
        CHECK(std::abs(c.running_mean.data[j] - sum[j]) < 1e-5);
        CHECK(std::abs(c.running_var.data[j] - sq[j] / static_cast<double>(n)) < 1e-5);
    }

    // Standardising the stream with the stored statistics.
    for (std::size_t j = 0; j < h; ++j) {
        double m = 0, v = 0;
        for (const auto& z : inputs)
            for (std::size_t r = 0; r < z.rows(); ++r) m += (z(r, j) - c.running_mean.data[j]) / std::sqrt(c.running_var.data[j] + kBatchNormEps);
        m /= static_cast<double>(n);
        for (const auto& z : inputs)
            for (std::size_t r = 0; r < z.rows(); ++r) {
                const double s = (z(r, j) - c.running_mean.data[j]) / std::sqrt(c.running_var.data[j] + kBatchNormEps);
                v += (s - m) * (s - m);
            }
        v /= static_cast<double>(n);
        CHECK(std::abs(m) < 1e-3);
        CHECK(std::abs(v - 1.0) < 1e-2);
    }
}

TEST_CASE("AdaBN on a constant batch floors the variance") {
    auto c = init_classifier<float>(4, 8, 1);
    std::vector<Tensor<float>> stream{Tensor<float>({5, 4}, 1.5f)};
    adapt_bn_statistics(c, std::span<const Tensor<float>>(stream));
    for (float v : c.running_var.data) CHECK(v == doctest::Approx(kBatchNormEps).epsilon(1e-3));
    const auto p = classifier_eval(c, stream[0]);
    CHECK(all_finite<float>(p.span()));
}

TEST_CASE("AdaBN on identically distributed target barely moves predictions") {
    Rng rng(11);
    auto c = init_classifier<float>(8, 16, 3);
    std::vector<Tensor<float>> source, target;
    for (int b = 0; b < 40; ++b) source.push_back(gaussian(32, 8, 0.3, 1.0, rng));
    for (int b = 0; b < 40; ++b) target.push_back(gaussian(32, 8, 0.3, 1.0, rng));
    adapt_bn_statistics(c, std::span<const Tensor<float>>(source));
    const auto probe = gaussian(50, 8, 0.3, 1.0, rng);
    const auto before = classifier_eval(c, probe);
    adapt_bn_statistics(c, std::span<const Tensor<float>>(target));
    const auto after = classifier_eval(c, probe);
    double shift = 0;
    for (std::size_t i = 0; i < before.size(); ++i) shift = std::max(shift, double(std::abs(before.data[i] - after.data[i])));
    CHECK(shift < 0.05);
}

TEST_CASE("discriminator separates two Gaussian clusters") {
    Rng rng(12);
    const std::size_t d = 8;
    auto disc = init_discriminator<float>(d, 32, 5);
    AdamConfig ac;
    ac.learning_rate = 1e-2;
    Adam<float, DiscriminatorParams<float>> adam(disc, ac);
    for (int step = 0; step < 200; ++step) {
        const auto s = gaussian(32, d, -0.7, 1.0, rng), t = gaussian(32, d, 0.7, 1.0, rng);
        DiscriminatorCache<float> cs, ct;
        const auto ps = discriminator_forward(disc, s, &cs), pt = discriminator_forward(disc, t, &ct);
        const auto loss = discriminator_loss(ps, pt);
        auto grads = zeros_like(disc);
        discriminator_backward(disc, cs, loss.grad_source, grads);
        discriminator_backward(disc, ct, loss.grad_target, grads);
        adam.step(disc, grads);
    }
    const auto s = gaussian(500, d, -0.7, 1.0, rng), t = gaussian(500, d, 0.7, 1.0, rng);
    const auto ps = discriminator_forward(disc, s), pt = discriminator_forward(disc, t);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 500; ++i) correct += (ps(i, 0) > ps(i, 1)) + (pt(i, 1) > pt(i, 0));
    CHECK(static_cast<double>(correct) / 1000.0 > 0.95);
}

TEST_CASE("softmax backward matches central differences") {
    Tensor<double> logits = matrix<double>(3, 2);
    logits.data = {0.2, -1.0, 3.0, 2.5, -0.4, 0.0};
    Tensor<double> dp = matrix<double>(3, 2);
    dp.data = {1.0, -2.0, 0.5, 0.3, -1.0, 0.7};
    const auto g = softmax_backward(softmax_rows(logits), dp);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        auto up = logits, down = logits;
        up.data[i] += 1e-6;
        down.data[i] -= 1e-6;
        const auto pu = softmax_rows(up), pd = softmax_rows(down);
        double num = 0;
        for (std::size_t k = 0; k < pu.size(); ++k) num += dp.data[k] * (pu.data[k] - pd.data[k]) / 2e-6;
        CHECK(std::abs(num - g.data[i]) < 1e-8);
    }
}
