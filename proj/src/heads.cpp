#include "tsvpr/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace tsvpr {

std::string to_string(GlobalMode mode) { return mode == GlobalMode::gem ? "gem" : "class_token"; }

GlobalMode parse_global_mode(const std::string& text) {
    if (text == "gem") return GlobalMode::gem;
    if (text == "class_token" || text == "cls") return GlobalMode::class_token;
    throw std::invalid_argument("unknown global feature mode '" + text + "'");
}

namespace {

ConvTranspose make_conv(std::size_t in, std::size_t out, const HeadConfig& config, Rng& rng) {
    ConvTranspose c;
    c.spec = {config.kernel, config.stride, config.padding, in, out};
    c.weight = Tensor({config.kernel, config.kernel, in, out});
    fill_normal(c.weight, std::sqrt(2.0 / static_cast<double>(in * config.kernel * config.kernel)), rng);
    c.bias = Tensor({out});
    return c;
}

}  // namespace

LocalHeadParams init_local_head(std::size_t in_channels, const HeadConfig& config, Rng& rng) {
    if (config.local_mid_channels <= config.local_out_channels) {
        throw std::invalid_argument("local head: mid channels must exceed output channels");
    }
    return {make_conv(in_channels, config.local_mid_channels, config, rng),
            make_conv(config.local_mid_channels, config.local_out_channels, config, rng)};
}

std::vector<double> gem_pool(const Tensor& fm, double p, double eps) {
    if (!(p >= 1.0)) throw std::invalid_argument("gem_pool: p must be >= 1");
    if (!(eps > 0.0)) throw std::invalid_argument("gem_pool: eps must be positive");
    const std::size_t c = fm.cols();
    const std::size_t locations = fm.rows();
    if (locations == 0) throw std::invalid_argument("gem_pool: empty feature map");
    std::vector<double> sums(c, 0.0);
    for (std::size_t s = 0; s < locations; ++s) {
        const double* row = fm.data() + s * c;
        for (std::size_t j = 0; j < c; ++j) sums[j] += std::pow(std::max(row[j], eps), p);
    }
    for (double& v : sums) v = std::pow(v / static_cast<double>(locations), 1.0 / p);
    return sums;
}

Tensor gem_pool_backward(const Tensor& fm, double p, std::span<const double> pooled, std::span<const double> d_pooled,
                         double* d_p, double eps) {
    const std::size_t c = fm.cols();
    const std::size_t locations = fm.rows();
    const double inv_s = 1.0 / static_cast<double>(locations);
    Tensor dfm(fm.shape());
    std::vector<double> coeff(c);
    for (std::size_t j = 0; j < c; ++j) coeff[j] = d_pooled[j] * std::pow(pooled[j], 1.0 - p) * inv_s;
    std::vector<double> weighted_log(c, 0.0);
    for (std::size_t s = 0; s < locations; ++s) {
        const double* row = fm.data() + s * c;
        double* out = dfm.data() + s * c;
        for (std::size_t j = 0; j < c; ++j) {
            const double y = std::max(row[j], eps);
            if (row[j] > eps) out[j] = coeff[j] * std::pow(y, p - 1.0);
            if (d_p) weighted_log[j] += std::pow(y, p) * std::log(y);
        }
    }
    if (d_p) {
        for (std::size_t j = 0; j < c; ++j) {
            const double mean_pow = std::pow(pooled[j], p);
            const double dg = pooled[j] * (-std::log(mean_pow) / (p * p) + weighted_log[j] * inv_s / (p * mean_pow));
            *d_p += d_pooled[j] * dg;
        }
    }
    return dfm;
}

std::vector<double> global_feature(const Tensor& fm, double p, GlobalMode mode, const Tensor& class_token) {
    if (mode == GlobalMode::class_token) return ops::l2_normalize(class_token.values());
    return ops::l2_normalize(gem_pool(fm, p));
}

Tensor local_adaptation(const Tensor& fm, const LocalHeadParams& params, LocalHeadCache* cache) {
    Tensor up1 = ops::transposed_conv2d(fm, params.up1);
    Tensor act = ops::relu(up1);
    Tensor up2 = ops::transposed_conv2d(act, params.up2);
    Tensor grid = ops::intra_l2(up2, kIntraL2Eps);
    if (cache) {
        cache->input = fm;
        cache->up1_out = std::move(up1);
        cache->up1_act = std::move(act);
        cache->up2_out = std::move(up2);
    }
    return grid;
}

Tensor local_adaptation_backward(const Tensor& d_grid, const LocalHeadParams& params, const LocalHeadCache& cache,
                                 LocalHeadParams* grad) {
    const Tensor d_up2 = ops::intra_l2_backward(cache.up2_out, d_grid, kIntraL2Eps);
    const Tensor d_act = ops::transposed_conv2d_backward(cache.up1_act, d_up2, params.up2, grad ? &grad->up2 : nullptr);
    const Tensor d_up1 = ops::relu_backward(cache.up1_out, d_act);
    return ops::transposed_conv2d_backward(cache.input, d_up1, params.up1, grad ? &grad->up1 : nullptr);
}

}  // namespace tsvpr
