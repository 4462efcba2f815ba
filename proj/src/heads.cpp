#include "xpcb/heads.hpp"

#include <algorithm>
#include <cmath>

#include "xpcb/errors.hpp"
#include "xpcb/kernels.hpp"
#include "xpcb/random.hpp"

namespace xpcb {

std::size_t parse_head_width(std::string_view mode) {
    if (mode == "reduction") return kReductionWidth;
    if (mode == "expansion") return kExpansionWidth;
    throw InputError("unknown head mode: " + std::string(mode) + " (expected reduction|expansion)");
}

std::string_view head_width_name(std::size_t width) {
    if (width == kReductionWidth) return "reduction";
    if (width == kExpansionWidth) return "expansion";
    return "custom";
}

namespace {

template <class T>
void xavier(Tensor<T>& t, Rng& rng) {
    const double s = std::sqrt(2.0 / static_cast<double>(t.shape[0] + t.shape[1]));
    for (auto& v : t.data) v = static_cast<T>(rng.normal() * s);
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    Tensor<T> y = matrix<T>(x.rows(), w.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) std::copy(b.data.begin(), b.data.end(), y.row(r).begin());
    kernels::gemm_nn(x.rows(), w.cols(), x.cols(), x.span(), w.span(), y.span());
    return y;
}

template <class T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>& db) {
    const std::size_t n = x.rows(), in = w.rows(), out = w.cols();
    kernels::gemm_tn(in, out, n, x.span(), dy.span(), dw.span());
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out; ++c) db.data[c] += dy(r, c);
    Tensor<T> dx = matrix<T>(n, in);
    kernels::gemm_nt(n, in, out, dy.span(), w.span(), dx.span());
    return dx;
}

template <class T>
void check_input(const Tensor<T>& pooled, std::size_t dim, const char* who) {
    if (pooled.cols() != dim)
        throw InputError(std::string(who) + ": expected feature width " + std::to_string(dim) + ", got " +
                         std::to_string(pooled.cols()));
    if (!all_finite(pooled.span())) throw NumericalError(std::string(who) + ": non-finite input features");
}

}  // namespace

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
    Tensor<T> p = logits;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        auto row = p.row(r);
        const T m = *std::max_element(row.begin(), row.end());
        T sum = 0;
        for (auto& v : row) {
            v = std::exp(v - m);
            sum += v;
        }
        for (auto& v : row) v /= sum;
    }
    return p;
}

template <class T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& d_probs) {
    Tensor<T> dl = matrix<T>(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        T inner = 0;
        for (std::size_t c = 0; c < probs.cols(); ++c) inner += probs(r, c) * d_probs(r, c);
        for (std::size_t c = 0; c < probs.cols(); ++c) dl(r, c) = probs(r, c) * (d_probs(r, c) - inner);
    }
    return dl;
}

template <class T>
ClassifierParams<T> init_classifier(std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
    if (input_dim == 0 || hidden == 0) throw InputError("classifier dimensions must be positive");
    Rng rng(seed);
    ClassifierParams<T> p;
    p.w1 = matrix<T>(input_dim, hidden);
    xavier(p.w1, rng);
    p.b1 = Tensor<T>({hidden});
    p.bn_gain = Tensor<T>({hidden}, T(1));
    p.bn_bias = Tensor<T>({hidden});
    p.w2 = matrix<T>(hidden, 2);
    xavier(p.w2, rng);
    p.b2 = Tensor<T>({2});
    p.running_mean = Tensor<T>({hidden});
    p.running_var = Tensor<T>({hidden}, T(1));
    return p;
}

template <class T>
DiscriminatorParams<T> init_discriminator(std::size_t input_dim, std::size_t hidden, std::uint64_t seed) {
    if (input_dim == 0 || hidden == 0) throw InputError("discriminator dimensions must be positive");
    Rng rng(seed);
    DiscriminatorParams<T> p;
    p.w1 = matrix<T>(input_dim, hidden);
    xavier(p.w1, rng);
    p.b1 = Tensor<T>({hidden});
    p.w2 = matrix<T>(hidden, 2);
    xavier(p.w2, rng);
    p.b2 = Tensor<T>({2});
    return p;
}

template <class T>
Tensor<T> classifier_bn_input(const ClassifierParams<T>& params, const Tensor<T>& pooled) {
    check_input(pooled, params.input_dim(), "classifier");
    return linear(pooled, params.w1, params.b1);
}

namespace {

template <class T>
Tensor<T> classifier_tail(const ClassifierParams<T>& params, ClassifierCache<T>& c) {
    const std::size_t n = c.xhat.rows(), h = c.xhat.cols();
    c.z2 = matrix<T>(n, h);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < h; ++j) c.z2(r, j) = params.bn_gain.data[j] * c.xhat(r, j) + params.bn_bias.data[j];
    c.r = c.z2;
    for (auto& v : c.r.data) v = v > T(0) ? v : T(0);
    c.probs = softmax_rows(linear(c.r, params.w2, params.b2));
    return c.probs;
}

}  // namespace

template <class T>
Tensor<T> classifier_eval(const ClassifierParams<T>& params, const Tensor<T>& pooled, ClassifierCache<T>* cache) {
    ClassifierCache<T> local;
    ClassifierCache<T>& c = cache ? *cache : local;
    c.mode = HeadMode::eval;
    c.input = pooled;
    Tensor<T> z = classifier_bn_input(params, pooled);
    const std::size_t n = z.rows(), h = z.cols();
    c.rstd.resize(h);
    for (std::size_t j = 0; j < h; ++j)
        c.rstd[j] = T(1) / std::sqrt(params.running_var.data[j] + static_cast<T>(kBatchNormEps));
    c.xhat = matrix<T>(n, h);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < h; ++j) c.xhat(r, j) = (z(r, j) - params.running_mean.data[j]) * c.rstd[j];
    return classifier_tail(params, c);
}

template <class T>
Tensor<T> classifier_forward(ClassifierParams<T>& params, const Tensor<T>& pooled, HeadMode mode,
                             ClassifierCache<T>* cache) {
    if (mode == HeadMode::eval) return classifier_eval(params, pooled, cache);
    if (pooled.rows() < 2) throw InputError("classifier train mode needs a batch of at least 2 rows");
    ClassifierCache<T> local;
    ClassifierCache<T>& c = cache ? *cache : local;
    c.mode = HeadMode::train;
    c.input = pooled;
    Tensor<T> z = classifier_bn_input(params, pooled);
    const std::size_t n = z.rows(), h = z.cols();
    c.rstd.resize(h);
    c.xhat = matrix<T>(n, h);
    const T momentum = static_cast<T>(params.momentum);
    for (std::size_t j = 0; j < h; ++j) {
        T mean = 0;
        for (std::size_t r = 0; r < n; ++r) mean += z(r, j);
        mean /= static_cast<T>(n);
        T var = 0;
        for (std::size_t r = 0; r < n; ++r) var += (z(r, j) - mean) * (z(r, j) - mean);
        var /= static_cast<T>(n);
        c.rstd[j] = T(1) / std::sqrt(var + static_cast<T>(kBatchNormEps));
        for (std::size_t r = 0; r < n; ++r) c.xhat(r, j) = (z(r, j) - mean) * c.rstd[j];
        params.running_mean.data[j] = (T(1) - momentum) * params.running_mean.data[j] + momentum * mean;
        params.running_var.data[j] = std::max<T>((T(1) - momentum) * params.running_var.data[j] + momentum * var,
                                                 static_cast<T>(kBatchNormEps));
    }
    return classifier_tail(params, c);
}

template <class T>
Tensor<T> classifier_backward(const ClassifierParams<T>& params, const ClassifierCache<T>& c, const Tensor<T>& d_probs,
                              ClassifierParams<T>& g) {
    Tensor<T> dlogits = softmax_backward(c.probs, d_probs);
    Tensor<T> dr = linear_backward(c.r, params.w2, dlogits, g.w2, g.b2);
    const std::size_t n = dr.rows(), h = dr.cols();
    Tensor<T> dxhat = matrix<T>(n, h);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < h; ++j) {
            const T dz2 = c.z2(r, j) > T(0) ? dr(r, j) : T(0);
            g.bn_gain.data[j] += dz2 * c.xhat(r, j);
            g.bn_bias.data[j] += dz2;
            dxhat(r, j) = dz2 * params.bn_gain.data[j];
        }
    Tensor<T> dz = matrix<T>(n, h);
    if (c.mode == HeadMode::eval) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t j = 0; j < h; ++j) dz(r, j) = dxhat(r, j) * c.rstd[j];
    } else {
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t j = 0; j < h; ++j) {
            T sum = 0, sum_x = 0;
            for (std::size_t r = 0; r < n; ++r) {
                sum += dxhat(r, j);
                sum_x += dxhat(r, j) * c.xhat(r, j);
            }
            for (std::size_t r = 0; r < n; ++r)
                dz(r, j) = c.rstd[j] * (dxhat(r, j) - sum * inv_n - c.xhat(r, j) * sum_x * inv_n);
        }
    }
    return linear_backward(c.input, params.w1, dz, g.w1, g.b1);
}

template <class T>
Tensor<T> discriminator_forward(const DiscriminatorParams<T>& params, const Tensor<T>& pooled,
                                DiscriminatorCache<T>* cache) {
    check_input(pooled, params.input_dim(), "discriminator");
    DiscriminatorCache<T> local;
    DiscriminatorCache<T>& c = cache ? *cache : local;
    c.input = pooled;
    c.z1 = linear(pooled, params.w1, params.b1);
    c.r = c.z1;
    for (auto& v : c.r.data) v = v > T(0) ? v : T(0);
    c.probs = softmax_rows(linear(c.r, params.w2, params.b2));
    return c.probs;
}

template <class T>
Tensor<T> discriminator_backward(const DiscriminatorParams<T>& params, const DiscriminatorCache<T>& c,
                                 const Tensor<T>& d_probs, DiscriminatorParams<T>& g) {
    Tensor<T> dlogits = softmax_backward(c.probs, d_probs);
    Tensor<T> dr = linear_backward(c.r, params.w2, dlogits, g.w2, g.b2);
    for (std::size_t i = 0; i < dr.size(); ++i)
        if (c.z1.data[i] <= T(0)) dr.data[i] = 0;
    return linear_backward(c.input, params.w1, dr, g.w1, g.b1);
}

template <class T>
void adapt_bn_statistics(ClassifierParams<T>& params, std::span<const Tensor<T>> pooled_stream) {
    const std::size_t h = params.hidden();
    // Chan et al. pairwise merge of per-batch moments, in double.
    std::vector<double> mean(h, 0.0), m2(h, 0.0);
    double count = 0.0;
    for (const auto& batch : pooled_stream) {
        if (batch.rows() == 0) continue;
        Tensor<T> z = classifier_bn_input(params, batch);
        const double nb = static_cast<double>(z.rows());
        for (std::size_t j = 0; j < h; ++j) {
            double bm = 0.0;
            for (std::size_t r = 0; r < z.rows(); ++r) bm += static_cast<double>(z(r, j));
            bm /= nb;
            double bm2 = 0.0;
            for (std::size_t r = 0; r < z.rows(); ++r) {
                const double dv = static_cast<double>(z(r, j)) - bm;
                bm2 += dv * dv;
            }
            const double total = count + nb;
            const double delta = bm - mean[j];
            mean[j] += delta * nb / total;
            m2[j] += bm2 + delta * delta * count * nb / total;
        }
        count += nb;
    }
    if (count == 0.0) throw InputError("adapt_bn_statistics: empty target stream");
    for (std::size_t j = 0; j < h; ++j) {
        params.running_mean.data[j] = static_cast<T>(mean[j]);
        params.running_var.data[j] = static_cast<T>(std::max(m2[j] / count, kBatchNormEps));
    }
}

#define XPCB_INSTANTIATE(T)                                                                                         \
    template ClassifierParams<T> init_classifier<T>(std::size_t, std::size_t, std::uint64_t);                      \
    template DiscriminatorParams<T> init_discriminator<T>(std::size_t, std::size_t, std::uint64_t);                \
    template Tensor<T> classifier_forward<T>(ClassifierParams<T>&, const Tensor<T>&, HeadMode, ClassifierCache<T>*); \
    template Tensor<T> classifier_eval<T>(const ClassifierParams<T>&, const Tensor<T>&, ClassifierCache<T>*);      \
    template Tensor<T> classifier_backward<T>(const ClassifierParams<T>&, const ClassifierCache<T>&,               \
                                              const Tensor<T>&, ClassifierParams<T>&);                             \
    template Tensor<T> discriminator_forward<T>(const DiscriminatorParams<T>&, const Tensor<T>&,                  \
                                                DiscriminatorCache<T>*);                                           \
    template Tensor<T> discriminator_backward<T>(const DiscriminatorParams<T>&, const DiscriminatorCache<T>&,      \
                                                 const Tensor<T>&, DiscriminatorParams<T>&);                       \
    template Tensor<T> classifier_bn_input<T>(const ClassifierParams<T>&, const Tensor<T>&);                       \
    template void adapt_bn_statistics<T>(ClassifierParams<T>&, std::span<const Tensor<T>>);                       \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                           \
    template Tensor<T> softmax_backward<T>(const Tensor<T>&, const Tensor<T>&);

XPCB_INSTANTIATE(float)
XPCB_INSTANTIATE(double)

#undef XPCB_INSTANTIATE

}  // namespace xpcb
