#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>
#include <string>

#include "xpcb/errors.hpp"
#include "xpcb/random.hpp"
#include "xpcb/tsne.hpp"

using namespace xpcb;

namespace {

// Three well-separated Gaussian blobs in 10-D.
Tensor<double> mixture(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> x = matrix<double>(n, 10);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 10; ++c) x(i, c) = (c == i % 3 ? 6.0 : 0.0) + rng.normal();
    return x;
}

}  // namespace

TEST_CASE("conditional rows hit the target perplexity") {
    const auto x = mixture(50, 0);
    const double perp = effective_perplexity(30.0, 50);
    CHECK(perp < 50.0 / 3.0);
    const auto cond = conditional_affinities(x, perp);
    for (std::size_t i = 0; i < 50; ++i) {
        double sum = 0, h = 0;
        for (std::size_t j = 0; j < 50; ++j) {
            const double p = cond.p(i, j);
            sum += p;
            if (p > 0) h -= p * std::log(p);
        }
        CHECK(cond.p(i, i) == 0.0);
        CHECK(std::abs(sum - 1.0) < 1e-12);
        CHECK(std::abs(h - std::log(perp)) < 1e-3);
        CHECK(std::abs(cond.entropy[i] - h) < 1e-9);
    }
}

TEST_CASE("symmetrised affinities sum to one") {
    const auto p = symmetrize(conditional_affinities(mixture(50, 1), 10.0).p);
    double sum = 0;
    for (std::size_t i = 0; i < 50; ++i)
        for (std::size_t j = 0; j < 50; ++j) {
            CHECK(p(i, j) >= 0.0);
            CHECK(p(i, j) == p(j, i));
            sum += p(i, j);
        }
    CHECK(std::abs(sum - 1.0) < 1e-8);
}

TEST_CASE("duplicate points get a uniform row") {
    Tensor<double> x = matrix<double>(6, 3, 1.0);
    const auto cond = conditional_affinities(x, 1.5);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(cond.uniform_row[i]);
        for (std::size_t j = 0; j < 6; ++j) CHECK(cond.p(i, j) == doctest::Approx(i == j ? 0.0 : 0.2));
    }
}

TEST_CASE("optimisation lowers the KL divergence") {
    TsneConfig cfg;
    cfg.perplexity = 10.0;
    cfg.seed = 0;
    const auto r = tsne(mixture(50, 0), cfg);
    CHECK(r.y.rows() == 50);
    CHECK(r.y.cols() == 2);
    CHECK(all_finite<double>(r.y.span()));
    CHECK(r.final_kl < r.initial_kl);
    CHECK(r.final_kl >= 0.0);
}

TEST_CASE("tsne is deterministic per seed") {
    TsneConfig cfg;
    cfg.perplexity = 5.0;
    cfg.iterations = 300;
    const auto x = mixture(30, 2);
    CHECK(tsne(x, cfg).y.data == tsne(x, cfg).y.data);
}

TEST_CASE("too few points are rejected") {
    CHECK_THROWS_AS(tsne(mixture(3, 0), TsneConfig{}), InputError);
}

TEST_CASE("projection keeps exactly the four legend tags") {
    const auto x = mixture(60, 3);
    EmbeddingDump dump;
    dump.dim = 10;
    for (std::size_t i = 0; i < 60; ++i) {
        for (std::size_t c = 0; c < 10; ++c) dump.values.push_back(static_cast<float>(x(i, c)));
        dump.platform.push_back(i % 2 ? PlatformTag::target : PlatformTag::source);
        dump.label.push_back(static_cast<int>((i / 2) % 2));
    }
    TsneConfig cfg;
    cfg.perplexity = 10.0;
    cfg.iterations = 300;
    cfg.max_points = 40;
    const auto proj = tsne_project(dump, cfg);
    CHECK(proj.dump.rows() == 40);
    CHECK(proj.dump.dim == 2);

    std::istringstream csv(proj.dump.csv());
    std::string line;
    std::getline(csv, line);
    CHECK(line == "x,y,platform,label");
    std::set<std::string> tags;
    while (std::getline(csv, line)) {
        const auto a = line.rfind(',');
        const auto b = line.rfind(',', a - 1);
        tags.insert(line.substr(b + 1));
    }
    CHECK(tags == std::set<std::string>{"source,0", "source,1", "target,0", "target,1"});

    const std::string svg = scatter_svg(proj.dump);
    for (const char* name : {"source negative", "source positive", "target negative", "target positive"})
        CHECK(svg.find(name) != std::string::npos);
}
