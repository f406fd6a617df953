#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tsvpr/tensor.hpp"

// Dense kernels for the transformer backbone and the feature heads.
// Every forward op is a pure function; ops used in training also have an
// analytic backward that accumulates parameter gradients into a mirror
// struct (pass nullptr to skip, e.g. for frozen groups).

namespace tsvpr {

constexpr double kLayerNormEps = 1e-6;

/// y = x * weight + bias, weight stored [in x out].
struct Linear {
    Tensor weight;
    Tensor bias;

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
};

/// Query/key/value/output projections, each D -> D.
struct AttentionParams {
    Linear query;
    Linear key;
    Linear value;
    Linear output;
};

struct ConvTransposeSpec {
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 1;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;

    /// (in - 1) * stride - 2 * padding + kernel; throws if not positive.
    std::size_t output_size(std::size_t in) const;
};

/// Transposed convolution; weight laid out [k x k x in x out].
struct ConvTranspose {
    ConvTransposeSpec spec;
    Tensor weight;
    Tensor bias;
};

namespace ops {

/// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor linear(const Tensor& x, const Linear& layer);
/// Returns dL/dx. Accumulates weight/bias gradients into `grad` when given.
Tensor linear_backward(const Tensor& x, const Tensor& dy, const Linear& layer, Linear* grad,
                       bool want_dx = true);

struct LayerNormCache {
    Tensor normalized;
    std::vector<double> inv_std;
};

/// Normalizes each last-axis slice: gamma * (x - mean) / sqrt(var + eps) + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = kLayerNormEps,
                  LayerNormCache* cache = nullptr);
Tensor layer_norm_backward(const Tensor& dy, const LayerNormParams& params, const LayerNormCache& cache,
                           LayerNormParams* grad);

Tensor gelu(const Tensor& x);
Tensor gelu_backward(const Tensor& x, const Tensor& dy);
Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

/// In-place, numerically stable softmax over each row.
void softmax_rows(std::span<double> values, std::size_t cols);

struct AttentionCache {
    Tensor input;
    Tensor query;
    Tensor key;
    Tensor value;
    std::vector<Tensor> probs;  // one [T x T] per head
    Tensor context;             // concatenated head outputs before the output projection
};

/// Scaled dot-product attention over `heads` heads, concatenated and projected.
Tensor multi_head_attention(const Tensor& x, const AttentionParams& params, std::size_t heads,
                            AttentionCache* cache = nullptr);
Tensor multi_head_attention_backward(const Tensor& dy, const AttentionParams& params, std::size_t heads,
                                     const AttentionCache& cache, AttentionParams* grad);

/// fm is [H x W x C_in]; result is [H' x W' x C_out] with H' = spec.output_size(H).
Tensor transposed_conv2d(const Tensor& fm, const ConvTranspose& conv);
Tensor transposed_conv2d_backward(const Tensor& fm, const Tensor& dy, const ConvTranspose& conv,
                                  ConvTranspose* grad, bool want_dx = true);

/// v / max(|v|, eps). Zero vectors stay zero.
std::vector<double> l2_normalize(std::span<const double> v, double eps = 1e-12);
void l2_normalize_inplace(std::span<double> v, double eps = 1e-12);
std::vector<double> l2_normalize_backward(std::span<const double> v, std::span<const double> dy,
                                          double eps = 1e-12);

/// Per-location L2 normalization over the channel (last) axis.
Tensor intra_l2(const Tensor& grid, double eps = 1e-12);
Tensor intra_l2_backward(const Tensor& grid, const Tensor& dy, double eps = 1e-12);

}  // namespace ops
}  // namespace tsvpr
