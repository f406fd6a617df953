#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tsvpr/ops.hpp"
#include "tsvpr/rng.hpp"
#include "tsvpr/tensor.hpp"

namespace tsvpr {

enum class GlobalMode { gem, class_token };

std::string to_string(GlobalMode mode);
GlobalMode parse_global_mode(const std::string& text);

constexpr double kGemEps = 1e-6;
constexpr double kIntraL2Eps = 1e-12;

struct HeadConfig {
    std::size_t local_mid_channels = 48;
    std::size_t local_out_channels = 32;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 1;
    double gem_p = 3.0;
    bool learn_gem_p = true;
    GlobalMode global_mode = GlobalMode::gem;
};

/// Two transposed convolutions, C -> mid -> out, ReLU in between.
struct LocalHeadParams {
    ConvTranspose up1;
    ConvTranspose up2;
};

LocalHeadParams init_local_head(std::size_t in_channels, const HeadConfig& config, Rng& rng);

/// Per channel: (mean over locations of max(x, eps)^p)^(1/p). fm is [h x w x C].
std::vector<double> gem_pool(const Tensor& fm, double p, double eps = kGemEps);

/// Gradient of gem_pool w.r.t. fm; adds dL/dp into *d_p when given.
Tensor gem_pool_backward(const Tensor& fm, double p, std::span<const double> pooled, std::span<const double> d_pooled,
                         double* d_p, double eps = kGemEps);

/// L2(GeM(fm)) or L2(class token).
std::vector<double> global_feature(const Tensor& fm, double p, GlobalMode mode, const Tensor& class_token);

struct LocalHeadCache {
    Tensor input;
    Tensor up1_out;
    Tensor up1_act;
    Tensor up2_out;
};

/// intraL2(up2(ReLU(up1(fm)))).
Tensor local_adaptation(const Tensor& fm, const LocalHeadParams& params, LocalHeadCache* cache = nullptr);
/// Returns dL/dfm; accumulates head gradients into `grad` when given.
Tensor local_adaptation_backward(const Tensor& d_grid, const LocalHeadParams& params, const LocalHeadCache& cache,
                                 LocalHeadParams* grad);

}  // namespace tsvpr
