#include "tsvpr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "tsvpr/gemm.hpp"

namespace tsvpr {

std::size_t ConvTransposeSpec::output_size(std::size_t in) const {
    if (in == 0 || stride == 0 || kernel == 0) {
        throw std::invalid_argument("transposed conv: input size, stride and kernel must be positive");
    }
    const long long out = (static_cast<long long>(in) - 1) * static_cast<long long>(stride) -
                          2 * static_cast<long long>(padding) + static_cast<long long>(kernel);
    if (out < 1) {
        throw std::invalid_argument("transposed conv: non-positive output size " + std::to_string(out));
    }
    return static_cast<std::size_t>(out);
}

namespace ops {

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) throw std::invalid_argument(std::string(what) + ": expected a matrix, got " + t.shape_string());
}

Tensor head_slice(const Tensor& m, std::size_t head, std::size_t head_dim) {
    const std::size_t rows = m.dim(0);
    Tensor out({rows, head_dim});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = m.data() + r * m.dim(1) + head * head_dim;
        std::copy(src, src + head_dim, out.data() + r * head_dim);
    }
    return out;
}

void add_head_slice(Tensor& m, const Tensor& slice, std::size_t head, std::size_t head_dim) {
    const std::size_t rows = m.dim(0);
    for (std::size_t r = 0; r < rows; ++r) {
        double* dst = m.data() + r * m.dim(1) + head * head_dim;
        const double* src = slice.data() + r * head_dim;
        for (std::size_t j = 0; j < head_dim; ++j) dst[j] += src[j];
    }
}

void add_inplace(Tensor& into, const Tensor& other) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += other[i];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: inner dimensions differ " + a.shape_string() + " * " + b.shape_string());
    }
    Tensor c({a.dim(0), b.dim(1)});
    gemm::nn(a.data(), b.data(), c.data(), a.dim(0), a.dim(1), b.dim(1));
    return c;
}

Tensor linear(const Tensor& x, const Linear& layer) {
    const std::size_t in = layer.in_features();
    const std::size_t out = layer.out_features();
    if (x.cols() != in) {
        throw std::invalid_argument("linear: input width " + std::to_string(x.cols()) + " != " + std::to_string(in));
    }
    const std::size_t rows = x.rows();
    Tensor y({rows, out});
    for (std::size_t r = 0; r < rows; ++r) std::copy(layer.bias.data(), layer.bias.data() + out, y.data() + r * out);
    gemm::nn(x.data(), layer.weight.data(), y.data(), rows, in, out);
    return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& dy, const Linear& layer, Linear* grad, bool want_dx) {
    const std::size_t in = layer.in_features();
    const std::size_t out = layer.out_features();
    const std::size_t rows = x.rows();
    if (grad) {
        gemm::tn(x.data(), dy.data(), grad->weight.data(), rows, in, out);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* g = dy.data() + r * out;
            for (std::size_t j = 0; j < out; ++j) grad->bias[j] += g[j];
        }
    }
    if (!want_dx) return {};
    Tensor dx({rows, in});
    gemm::nt(dy.data(), layer.weight.data(), dx.data(), rows, out, in);
    return dx;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, LayerNormCache* cache) {
    const std::size_t d = x.cols();
    if (d == 0) throw std::invalid_argument("layer_norm: empty last axis");
    if (gamma.size() != d || beta.size() != d) {
        throw std::invalid_argument("layer_norm: gamma/beta size does not match last axis " + std::to_string(d));
    }
    if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
    const std::size_t rows = x.rows();
    Tensor y(x.shape());
    if (cache) {
        cache->normalized = Tensor(x.shape());
        cache->inv_std.assign(rows, 0.0);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double* yr = y.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            const double n = (xr[j] - mean) * inv_std;
            if (cache) cache->normalized[r * d + j] = n;
            yr[j] = gamma[j] * n + beta[j];
        }
        if (cache) cache->inv_std[r] = inv_std;
    }
    return y;
}

Tensor layer_norm_backward(const Tensor& dy, const LayerNormParams& params, const LayerNormCache& cache,
                           LayerNormParams* grad) {
    const std::size_t d = dy.cols();
    const std::size_t rows = dy.rows();
    Tensor dx(dy.shape());
    std::vector<double> dn(d);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* g = dy.data() + r * d;
        const double* n = cache.normalized.data() + r * d;
        double mean_dn = 0.0;
        double mean_dn_n = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dn[j] = g[j] * params.gamma[j];
            mean_dn += dn[j];
            mean_dn_n += dn[j] * n[j];
            if (grad) {
                grad->gamma[j] += g[j] * n[j];
                grad->beta[j] += g[j];
            }
        }
        mean_dn /= static_cast<double>(d);
        mean_dn_n /= static_cast<double>(d);
        double* out = dx.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) out[j] = cache.inv_std[r] * (dn[j] - mean_dn - n[j] * mean_dn_n);
    }
    return dx;
}

Tensor gelu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
    return y;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.shape());
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        dx[i] = dy[i] * (cdf + v * pdf);
    }
    return dx;
}

Tensor relu(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
    return dx;
}

void softmax_rows(std::span<double> values, std::size_t cols) {
    for (std::size_t start = 0; start < values.size(); start += cols) {
        double* r = values.data() + start;
        const double peak = *std::max_element(r, r + cols);
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            r[j] = std::exp(r[j] - peak);
            sum += r[j];
        }
        for (std::size_t j = 0; j < cols; ++j) r[j] /= sum;
    }
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& params, std::size_t heads,
                            AttentionCache* cache) {
    require_matrix(x, "multi_head_attention");
    const std::size_t tokens = x.dim(0);
    const std::size_t d = x.dim(1);
    if (heads == 0 || d % heads != 0) {
        throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                                    std::to_string(heads) + " heads");
    }
    const std::size_t head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    Tensor q = linear(x, params.query);
    Tensor k = linear(x, params.key);
    Tensor v = linear(x, params.value);
    Tensor context({tokens, d});
    if (cache) cache->probs.clear();

    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor qh = head_slice(q, h, head_dim);
        const Tensor kh = head_slice(k, h, head_dim);
        const Tensor vh = head_slice(v, h, head_dim);
        Tensor scores({tokens, tokens});
        gemm::nt(qh.data(), kh.data(), scores.data(), tokens, head_dim, tokens);
        for (double& s : scores.values()) s *= scale;
        softmax_rows(scores.values(), tokens);
        Tensor ctx({tokens, head_dim});
        gemm::nn(scores.data(), vh.data(), ctx.data(), tokens, tokens, head_dim);
        add_head_slice(context, ctx, h, head_dim);
        if (cache) cache->probs.push_back(std::move(scores));
    }

    Tensor out = linear(context, params.output);
    if (cache) {
        cache->input = x;
        cache->query = std::move(q);
        cache->key = std::move(k);
        cache->value = std::move(v);
        cache->context = std::move(context);
    }
    return out;
}

Tensor multi_head_attention_backward(const Tensor& dy, const AttentionParams& params, std::size_t heads,
                                     const AttentionCache& cache, AttentionParams* grad) {
    const std::size_t tokens = dy.dim(0);
    const std::size_t d = dy.dim(1);
    const std::size_t head_dim = d / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    const Tensor dcontext = linear_backward(cache.context, dy, params.output, grad ? &grad->output : nullptr);
    Tensor dq({tokens, d});
    Tensor dk({tokens, d});
    Tensor dv({tokens, d});

    for (std::size_t h = 0; h < heads; ++h) {
        const Tensor& probs = cache.probs[h];
        const Tensor qh = head_slice(cache.query, h, head_dim);
        const Tensor kh = head_slice(cache.key, h, head_dim);
        const Tensor vh = head_slice(cache.value, h, head_dim);
        const Tensor dctx = head_slice(dcontext, h, head_dim);

        Tensor dprobs({tokens, tokens});
        gemm::nt(dctx.data(), vh.data(), dprobs.data(), tokens, head_dim, tokens);
        Tensor dvh({tokens, head_dim});
        gemm::tn(probs.data(), dctx.data(), dvh.data(), tokens, tokens, head_dim);

        Tensor dscores({tokens, tokens});
        for (std::size_t i = 0; i < tokens; ++i) {
            const double* p = probs.data() + i * tokens;
            const double* g = dprobs.data() + i * tokens;
            double dot = 0.0;
            for (std::size_t j = 0; j < tokens; ++j) dot += p[j] * g[j];
            double* s = dscores.data() + i * tokens;
            for (std::size_t j = 0; j < tokens; ++j) s[j] = p[j] * (g[j] - dot) * scale;
        }
        Tensor dqh({tokens, head_dim});
        gemm::nn(dscores.data(), kh.data(), dqh.data(), tokens, tokens, head_dim);
        Tensor dkh({tokens, head_dim});
        gemm::tn(dscores.data(), qh.data(), dkh.data(), tokens, tokens, head_dim);

        add_head_slice(dq, dqh, h, head_dim);
        add_head_slice(dk, dkh, h, head_dim);
        add_head_slice(dv, dvh, h, head_dim);
    }

    Tensor dx = linear_backward(cache.input, dq, params.query, grad ? &grad->query : nullptr);
    add_inplace(dx, linear_backward(cache.input, dk, params.key, grad ? &grad->key : nullptr));
    add_inplace(dx, linear_backward(cache.input, dv, params.value, grad ? &grad->value : nullptr));
    return dx;
}

namespace {

void check_conv(const Tensor& fm, const ConvTranspose& conv) {
    const auto& s = conv.spec;
    if (fm.rank() != 3) throw std::invalid_argument("transposed_conv2d: expected H x W x C input, got " + fm.shape_string());
    if (fm.dim(2) != s.in_channels) {
        throw std::invalid_argument("transposed_conv2d: input has " + std::to_string(fm.dim(2)) + " channels, spec expects " +
                                    std::to_string(s.in_channels));
    }
    const std::vector<std::size_t> wshape{s.kernel, s.kernel, s.in_channels, s.out_channels};
    if (conv.weight.shape() != wshape || conv.bias.size() != s.out_channels) {
        throw std::invalid_argument("transposed_conv2d: weight/bias shapes do not match spec");
    }
}

}  // namespace

Tensor transposed_conv2d(const Tensor& fm, const ConvTranspose& conv) {
    check_conv(fm, conv);
    const auto& s = conv.spec;
    const std::size_t h = fm.dim(0);
    const std::size_t w = fm.dim(1);
    const std::size_t ho = s.output_size(h);
    const std::size_t wo = s.output_size(w);
    const std::size_t cin = s.in_channels;
    const std::size_t cout = s.out_channels;

    Tensor out({ho, wo, cout});
    for (std::size_t i = 0; i < ho * wo; ++i)
        std::copy(conv.bias.data(), conv.bias.data() + cout, out.data() + i * cout);

    std::vector<double> tap(h * w * cout);
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
            std::fill(tap.begin(), tap.end(), 0.0);
            const double* wk = conv.weight.data() + (ky * s.kernel + kx) * cin * cout;
            gemm::nn(fm.data(), wk, tap.data(), h * w, cin, cout);
            for (std::size_t iy = 0; iy < h; ++iy) {
                const long long oy = static_cast<long long>(iy * s.stride + ky) - static_cast<long long>(s.padding);
                if (oy < 0 || oy >= static_cast<long long>(ho)) continue;
                for (std::size_t ix = 0; ix < w; ++ix) {
                    const long long ox = static_cast<long long>(ix * s.stride + kx) - static_cast<long long>(s.padding);
                    if (ox < 0 || ox >= static_cast<long long>(wo)) continue;
                    double* dst = out.data() + (static_cast<std::size_t>(oy) * wo + static_cast<std::size_t>(ox)) * cout;
                    const double* src = tap.data() + (iy * w + ix) * cout;
                    for (std::size_t c = 0; c < cout; ++c) dst[c] += src[c];
                }
            }
        }
    }
    return out;
}

Tensor transposed_conv2d_backward(const Tensor& fm, const Tensor& dy, const ConvTranspose& conv,
                                  ConvTranspose* grad, bool want_dx) {
    const auto& s = conv.spec;
    const std::size_t h = fm.dim(0);
    const std::size_t w = fm.dim(1);
    const std::size_t ho = dy.dim(0);
    const std::size_t wo = dy.dim(1);
    const std::size_t cin = s.in_channels;
    const std::size_t cout = s.out_channels;

    if (grad) {
        for (std::size_t i = 0; i < ho * wo; ++i)
            for (std::size_t c = 0; c < cout; ++c) grad->bias[c] += dy[i * cout + c];
    }
    Tensor dx;
    if (want_dx) dx = Tensor({h, w, cin});

    std::vector<double> gathered(h * w * cout);
    for (std::size_t ky = 0; ky < s.kernel; ++ky) {
        for (std::size_t kx = 0; kx < s.kernel; ++kx) {
            std::fill(gathered.begin(), gathered.end(), 0.0);
            bool any = false;
            for (std::size_t iy = 0; iy < h; ++iy) {
                const long long oy = static_cast<long long>(iy * s.stride + ky) - static_cast<long long>(s.padding);
                if (oy < 0 || oy >= static_cast<long long>(ho)) continue;
                for (std::size_t ix = 0; ix < w; ++ix) {
                    const long long ox = static_cast<long long>(ix * s.stride + kx) - static_cast<long long>(s.padding);
                    if (ox < 0 || ox >= static_cast<long long>(wo)) continue;
                    const double* src = dy.data() + (static_cast<std::size_t>(oy) * wo + static_cast<std::size_t>(ox)) * cout;
                    std::copy(src, src + cout, gathered.data() + (iy * w + ix) * cout);
                    any = true;
                }
            }
            if (!any) continue;
            const std::size_t offset = (ky * s.kernel + kx) * cin * cout;
            if (grad) gemm::tn(fm.data(), gathered.data(), grad->weight.data() + offset, h * w, cin, cout);
            if (want_dx) gemm::nt(gathered.data(), conv.weight.data() + offset, dx.data(), h * w, cout, cin);
        }
    }
    return dx;
}

std::vector<double> l2_normalize(std::span<const double> v, double eps) {
    std::vector<double> out(v.begin(), v.end());
    l2_normalize_inplace(out, eps);
    return out;
}

void l2_normalize_inplace(std::span<double> v, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("l2_normalize: eps must be positive");
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double denom = std::max(std::sqrt(sq), eps);
    for (double& x : v) x /= denom;
}

std::vector<double> l2_normalize_backward(std::span<const double> v, std::span<const double> dy, double eps) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    const double norm = std::sqrt(sq);
    std::vector<double> dv(v.size());
    if (norm < eps) {
        for (std::size_t i = 0; i < v.size(); ++i) dv[i] = dy[i] / eps;
        return dv;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * dy[i];
    dot /= norm;
    for (std::size_t i = 0; i < v.size(); ++i) dv[i] = (dy[i] - (v[i] / norm) * dot) / norm;
    return dv;
}

Tensor intra_l2(const Tensor& grid, double eps) {
    Tensor out = grid;
    const std::size_t c = grid.cols();
    for (std::size_t r = 0; r < grid.rows(); ++r) l2_normalize_inplace(out.values().subspan(r * c, c), eps);
    return out;
}

Tensor intra_l2_backward(const Tensor& grid, const Tensor& dy, double eps) {
    Tensor dx(grid.shape());
    const std::size_t c = grid.cols();
    for (std::size_t r = 0; r < grid.rows(); ++r) {
        const auto g = l2_normalize_backward(grid.values().subspan(r * c, c), dy.values().subspan(r * c, c), eps);
        std::copy(g.begin(), g.end(), dx.data() + r * c);
    }
    return dx;
}

}  // namespace ops
}  // namespace tsvpr
