#include "xpcb/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "xpcb/errors.hpp"
#include "xpcb/random.hpp"

namespace xpcb {

namespace {

Tensor<double> squared_distances(const Tensor<double>& x) {
    const std::size_t n = x.rows(), d = x.cols();
    Tensor<double> out = matrix<double>(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x(i, k) - x(j, k);
                s += diff * diff;
            }
            out(i, j) = out(j, i) = s;
        }
    return out;
}

// Fills row i of p for precision beta; returns the row entropy in nats.
double row_for_beta(const Tensor<double>& dist, std::size_t i, double beta, double shift, Tensor<double>& p) {
    const std::size_t n = dist.rows();
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
            p(i, j) = 0.0;
            continue;
        }
        const double e = std::exp(-beta * (dist(i, j) - shift));
        p(i, j) = e;
        sum += e;
        weighted += e * (dist(i, j) - shift);
    }
    for (std::size_t j = 0; j < n; ++j) p(i, j) /= sum;
    return std::log(sum) + beta * weighted / sum;
}

}  // namespace

void TsneConfig::validate() const {
    if (!(perplexity >= 2.0)) throw InputError("t-SNE perplexity must be at least 2");
    if (iterations == 0) throw InputError("t-SNE needs at least one iteration");
    if (!(learning_rate > 0.0)) throw InputError("t-SNE learning rate must be positive");
    if (max_points < 4) throw InputError("t-SNE max_points must be at least 4");
}

double effective_perplexity(double perplexity, std::size_t n) {
    const double limit = static_cast<double>(n) / 3.0;
    return perplexity >= limit ? static_cast<double>(n - 1) / 3.0 : perplexity;
}

ConditionalAffinities conditional_affinities(const Tensor<double>& x, double perplexity) {
    const std::size_t n = x.rows();
    if (n < 2) throw InputError("affinities need at least two points");
    const Tensor<double> dist = squared_distances(x);
    const double target = std::log(perplexity);
    ConditionalAffinities out{matrix<double>(n, n), std::vector<double>(n), std::vector<bool>(n, false)};
    for (std::size_t i = 0; i < n; ++i) {
        double shift = std::numeric_limits<double>::infinity(), far = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) {
                shift = std::min(shift, dist(i, j));
                far = std::max(far, dist(i, j));
            }
        if (far - shift <= 0.0) {
            // Every other point is equidistant (duplicates): no precision can
            // shape the row, so it stays uniform.
            for (std::size_t j = 0; j < n; ++j) out.p(i, j) = j == i ? 0.0 : 1.0 / static_cast<double>(n - 1);
            out.entropy[i] = std::log(static_cast<double>(n - 1));
            out.uniform_row[i] = true;
            continue;
        }
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double h = row_for_beta(dist, i, beta, shift, out.p);
        for (std::size_t it = 0; it < kBetaSearchIterations && std::abs(h - target) > kEntropyTolerance; ++it) {
            if (h > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
            h = row_for_beta(dist, i, beta, shift, out.p);
        }
        out.entropy[i] = h;
    }
    return out;
}

Tensor<double> symmetrize(const Tensor<double>& c) {
    const std::size_t n = c.rows();
    Tensor<double> p = matrix<double>(n, n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            p(i, j) = (c(i, j) + c(j, i)) / (2.0 * static_cast<double>(n));
            total += p(i, j);
        }
    // Rows of c sum to one, so total is 1 up to rounding; renormalise exactly.
    for (double& v : p.data) v /= total;
    return p;
}

double tsne_kl(const Tensor<double>& p, const Tensor<double>& y) {
    const std::size_t n = y.rows();
    Tensor<double> num = matrix<double>(n, n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
            num(i, j) = 1.0 / (1.0 + dx * dx + dy * dy);
            z += num(i, j);
        }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || p(i, j) <= 0.0) continue;
            const double q = std::max(num(i, j) / z, 1e-300);
            kl += p(i, j) * std::log(p(i, j) / q);
        }
    return kl;
}

TsneResult tsne(const Tensor<double>& x, const TsneConfig& cfg) {
    cfg.validate();
    const std::size_t n = x.rows();
    if (n < 4) throw InputError("t-SNE needs at least 4 points");
    TsneResult result;
    result.perplexity = effective_perplexity(cfg.perplexity, n);
    const Tensor<double> p = symmetrize(conditional_affinities(x, result.perplexity).p);

    Rng rng(cfg.seed);
    Tensor<double> y = matrix<double>(n, 2);
    for (double& v : y.data) v = 1e-4 * rng.normal();
    result.initial_kl = tsne_kl(p, y);

    Tensor<double> update = matrix<double>(n, 2), gains = matrix<double>(n, 2, 1.0), grad = matrix<double>(n, 2);
    Tensor<double> num = matrix<double>(n, n);
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const double exaggeration = it < cfg.exaggeration_iterations ? cfg.exaggeration : 1.0;
        const double momentum = it < cfg.momentum_switch ? cfg.momentum_initial : cfg.momentum_final;
        double z = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
                num(i, j) = num(j, i) = 1.0 / (1.0 + dx * dx + dy * dy);
                z += 2.0 * num(i, j);
            }
        grad.zero();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double m = 4.0 * (exaggeration * p(i, j) - num(i, j) / z) * num(i, j);
                grad(i, 0) += m * (y(i, 0) - y(j, 0));
                grad(i, 1) += m * (y(i, 1) - y(j, 1));
            }
        if (!all_finite<double>(grad.span()))
            throw NumericalError("t-SNE gradient became non-finite at iteration " + std::to_string(it));
        for (std::size_t k = 0; k < y.size(); ++k) {
            const bool same_sign = (grad.data[k] > 0.0) == (update.data[k] > 0.0);
            gains.data[k] = std::max(same_sign ? gains.data[k] * 0.8 : gains.data[k] + 0.2, 0.01);
            update.data[k] = momentum * update.data[k] - cfg.learning_rate * gains.data[k] * grad.data[k];
            y.data[k] += update.data[k];
        }
        for (std::size_t c = 0; c < 2; ++c) {
            double mean = 0.0;
            for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
            mean /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
        }
    }
    result.final_kl = tsne_kl(p, y);
    result.y = std::move(y);
    return result;
}

Projection tsne_project(const EmbeddingDump& dump, const TsneConfig& cfg) {
    cfg.validate();
    std::vector<std::size_t> keep(dump.rows());
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    if (keep.size() > cfg.max_points) {
        Rng rng(cfg.seed ^ 0x7473);
        rng.shuffle(std::span<std::size_t>(keep));
        keep.resize(cfg.max_points);
        std::sort(keep.begin(), keep.end());
    }
    Tensor<double> x = matrix<double>(keep.size(), dump.dim);
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t c = 0; c < dump.dim; ++c) x(i, c) = dump.row(keep[i])[c];
    const TsneResult r = tsne(x, cfg);
    Projection out;
    out.initial_kl = r.initial_kl;
    out.final_kl = r.final_kl;
    out.dump.dim = 2;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.dump.values.push_back(static_cast<float>(r.y(i, 0)));
        out.dump.values.push_back(static_cast<float>(r.y(i, 1)));
        out.dump.platform.push_back(dump.platform[keep[i]]);
        out.dump.label.push_back(dump.label[keep[i]]);
    }
    return out;
}

std::string scatter_svg(const EmbeddingDump& d) {
    if (d.dim != 2) throw InputError("scatter plot needs a 2-D dump");
    constexpr double size = 640.0, margin = 20.0;
    float lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
    if (d.rows()) {
        lo_x = hi_x = d.row(0)[0];
        lo_y = hi_y = d.row(0)[1];
    }
    for (std::size_t i = 0; i < d.rows(); ++i) {
        lo_x = std::min(lo_x, d.row(i)[0]);
        hi_x = std::max(hi_x, d.row(i)[0]);
        lo_y = std::min(lo_y, d.row(i)[1]);
        hi_y = std::max(hi_y, d.row(i)[1]);
    }
    const double sx = (size - 2 * margin) / std::max(1e-12, static_cast<double>(hi_x - lo_x));
    const double sy = (size - 2 * margin) / std::max(1e-12, static_cast<double>(hi_y - lo_y));
    static const char* colours[2][2] = {{"#d62728", "#2ca02c"}, {"#1f77b4", "#e6c200"}};
    static const char* names[2][2] = {{"source negative", "source positive"}, {"target negative", "target positive"}};
    std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"720\" viewBox=\"0 0 640 720\">\n";
    out += "<rect width=\"640\" height=\"720\" fill=\"white\"/>\n";
    char buf[160];
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const int pl = d.platform[i] == PlatformTag::source ? 0 : 1;
        std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2.5\" fill=\"%s\" fill-opacity=\"0.7\"/>\n",
                      margin + (d.row(i)[0] - lo_x) * sx, margin + (hi_y - d.row(i)[1]) * sy, colours[pl][d.label[i]]);
        out += buf;
    }
    for (int k = 0; k < 4; ++k) {
        const int pl = k / 2, lb = k % 2;
        std::snprintf(buf, sizeof buf,
                      "<circle cx=\"%d\" cy=\"676\" r=\"5\" fill=\"%s\"/><text x=\"%d\" y=\"681\" font-size=\"13\" "
                      "font-family=\"sans-serif\">%s</text>\n",
                      30 + k * 150, colours[pl][lb], 40 + k * 150, names[pl][lb]);
        out += buf;
    }
    return out + "</svg>\n";
}

void write_scatter_svg(const EmbeddingDump& d, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out << scatter_svg(d);
}

}  // namespace xpcb
