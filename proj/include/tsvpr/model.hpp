#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "tsvpr/backbone.hpp"
#include "tsvpr/heads.hpp"

namespace tsvpr {

struct ModelConfig {
    BackboneConfig backbone;
    HeadConfig heads;

    /// Side of the dense local grid produced by the head.
    std::size_t local_grid_size() const;
    void validate() const;
};

ModelConfig desk_model();
/// ViT-L/14 at 224 px with 256 -> 128 local head.
ModelConfig paper_model();

enum class ParamGroup { backbone, adapters, local_head, gem };

std::string to_string(ParamGroup group);
ParamGroup parse_param_group(const std::string& text);

using FreezePolicy = std::set<ParamGroup>;

/// Backbone frozen whenever adapters exist; heads always tunable.
FreezePolicy default_freeze_policy(const ModelConfig& config);

struct ModelParams {
    BackboneParams backbone;
    LocalHeadParams local_head;
    Tensor gem_p;  // [1]
};

struct ParamRef {
    std::string name;
    ParamGroup group;
    Tensor* tensor;
};

struct ConstParamRef {
    std::string name;
    ParamGroup group;
    const Tensor* tensor;
};

/// Every parameter tensor in a fixed order with a stable dotted name.
std::vector<ParamRef> param_refs(ModelParams& params);
std::vector<ConstParamRef> param_refs(const ModelParams& params);

ModelParams init_model(const ModelConfig& config, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);

struct ImageFeatures {
    Tensor feature_map;           // [g x g x D]
    Tensor class_token;           // [D]
    std::vector<double> global;   // unit norm
    Tensor local;                 // [h' x w' x C_l], unit-norm rows (or zero)
};

/// Inference. The local head is skipped when with_local is false.
ImageFeatures extract_features(const Tensor& image, const ModelConfig& config, const ModelParams& params,
                               bool with_local = true);

struct ModelCache {
    BackboneCache backbone;
    LocalHeadCache local;
    std::vector<double> pooled;  // pre-normalization global vector
};

ImageFeatures forward_train(const Tensor& image, const ModelConfig& config, const ModelParams& params,
                            ModelCache& cache);

/// Backpropagates dL/d(global) and dL/d(local) (either may be empty) into `grad`,
/// skipping parameter gradients of frozen groups.
void backward(std::span<const double> d_global, const Tensor& d_local, const ModelConfig& config,
              const ModelParams& params, const ModelCache& cache, const ImageFeatures& features, ModelParams& grad,
              const FreezePolicy& frozen);

}  // namespace tsvpr
