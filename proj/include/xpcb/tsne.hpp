#pragma once

// Exact t-SNE for embedding diagnostics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "xpcb/pipeline.hpp"
#include "xpcb/tensor.hpp"

namespace xpcb {

struct TsneConfig {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    std::size_t momentum_switch = 250;
    double exaggeration = 12.0;
    std::size_t exaggeration_iterations = 250;
    std::size_t max_points = 2000;  // larger dumps are subsampled
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const TsneConfig&) const = default;
};

inline constexpr double kEntropyTolerance = 1e-5;
inline constexpr std::size_t kBetaSearchIterations = 50;

// Row-conditional Gaussian affinities p(j|i) matched to the perplexity by
// bisection on the precision. Rows whose points all coincide get a uniform
// distribution over the other points.
struct ConditionalAffinities {
    Tensor<double> p;              // [n x n], zero diagonal, rows sum to 1
    std::vector<double> entropy;   // natural-log row entropies
    std::vector<bool> uniform_row;
};
ConditionalAffinities conditional_affinities(const Tensor<double>& x, double perplexity);

// (P + P^T) / 2n: symmetric, non-negative, sums to 1.
Tensor<double> symmetrize(const Tensor<double>& conditional);

// Perplexity actually used for n points: values >= n/3 become (n-1)/3.
double effective_perplexity(double perplexity, std::size_t n);

struct TsneResult {
    Tensor<double> y;  // [n x 2]
    double initial_kl = 0.0;
    double final_kl = 0.0;
    double perplexity = 0.0;
};

// Throws InputError for fewer than 4 points, NumericalError on a non-finite gradient.
TsneResult tsne(const Tensor<double>& x, const TsneConfig& cfg);

// KL(P || Q) for a layout y.
double tsne_kl(const Tensor<double>& p, const Tensor<double>& y);

// Subsamples (seeded) to cfg.max_points, projects, and keeps the tags.
struct Projection {
    EmbeddingDump dump;  // dim 2
    double initial_kl = 0.0;
    double final_kl = 0.0;
};
Projection tsne_project(const EmbeddingDump& dump, const TsneConfig& cfg);

// Scatter plot: red source/0, green source/1, blue target/0, yellow target/1.
std::string scatter_svg(const EmbeddingDump& dump2d);
void write_scatter_svg(const EmbeddingDump& dump2d, const std::filesystem::path& path);

}  // namespace xpcb
