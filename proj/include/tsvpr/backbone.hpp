#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "tsvpr/ops.hpp"
#include "tsvpr/rng.hpp"
#include "tsvpr/tensor.hpp"

namespace tsvpr {

enum class AdapterMode { none, serial_only, parallel_only, both };

std::string to_string(AdapterMode mode);
AdapterMode parse_adapter_mode(const std::string& text);

inline bool has_serial(AdapterMode m) { return m == AdapterMode::serial_only || m == AdapterMode::both; }
inline bool has_parallel(AdapterMode m) { return m == AdapterMode::parallel_only || m == AdapterMode::both; }

struct BackboneConfig {
    std::size_t image_size = 64;
    std::size_t patch_size = 8;
    std::size_t embed_dim = 64;
    std::size_t num_blocks = 4;
    std::size_t num_heads = 4;
    AdapterMode adapter_mode = AdapterMode::both;
    double bottleneck_ratio = 0.5;
    double adapter_scale = 0.2;

    /// Patches per side.
    std::size_t grid_size() const { return image_size / patch_size; }
    std::size_t num_patches() const { return grid_size() * grid_size(); }
    std::size_t patch_dim() const { return patch_size * patch_size * 3; }
    std::size_t mlp_width() const { return 4 * embed_dim; }
    /// round(r * D)
    std::size_t adapter_width() const;
    void validate() const;
};

/// 64 px images, 8 px patches, D=64, 4 blocks, 4 heads.
BackboneConfig desk_backbone();
/// ViT-L/14 at 224 px: D=1024, 24 blocks, 16 heads.
BackboneConfig vit_large_backbone();

/// Bottleneck: up(ReLU(down(z))).
struct AdapterParams {
    Linear down;
    Linear up;
};

struct BlockParams {
    LayerNormParams norm1;
    AttentionParams attention;
    LayerNormParams norm2;
    Linear mlp_in;
    Linear mlp_out;
    std::optional<AdapterParams> serial_adapter;    // after attention, internal skip
    std::optional<AdapterParams> parallel_adapter;  // beside the MLP, scaled
};

struct BackboneParams {
    Linear patch_embed;
    Tensor class_token;  // [D]
    Tensor pos_embed;    // [(N+1) x D]
    std::vector<BlockParams> blocks;
    LayerNormParams final_norm;
};

/// Random frozen-backbone weights plus adapters with a zero up-projection.
BackboneParams init_backbone(const BackboneConfig& config, Rng& rng);
/// Same structure, every tensor zero.
BackboneParams zeros_like(const BackboneParams& params);

/// [H x W x 3] image -> [(N+1) x D] token sequence (class token first, positions added).
Tensor patch_embed(const Tensor& image, const BackboneConfig& config, const BackboneParams& params);

/// Plain transformer block: x' = MHA(LN(x)) + x; out = MLP(LN(x')) + x'. Adapters are ignored.
Tensor block_forward(const Tensor& x, const BlockParams& params, std::size_t heads);

struct BlockCache {
    Tensor input;
    ops::LayerNormCache norm1;
    Tensor norm1_out;
    ops::AttentionCache attention;
    Tensor attention_out;
    Tensor serial_pre;  // down-projection before ReLU
    Tensor serial_act;
    ops::LayerNormCache norm2;
    Tensor norm2_out;
    Tensor mlp_pre;
    Tensor mlp_act;
    Tensor parallel_pre;
    Tensor parallel_act;
};

/// Adapted block:
///   x'  = A1(MHA(LN(x))) + x,            A1(z) = z + up(ReLU(down(z)))
///   out = MLP(LN(x')) + s * A2(LN(x')) + x'
/// serial_only / parallel_only drop the other adapter term.
Tensor adapted_block_forward(const Tensor& x, const BlockParams& params, std::size_t heads, double scale,
                             AdapterMode mode, BlockCache* cache = nullptr);

struct BackboneOutput {
    Tensor feature_map;  // [g x g x D], class token dropped
    Tensor class_token;  // [D] after the final norm
};

struct BackboneCache {
    Tensor patches;  // [N x patch_dim]
    std::vector<BlockCache> blocks;
    ops::LayerNormCache final_norm;
};

BackboneOutput backbone_forward(const Tensor& image, const BackboneConfig& config, const BackboneParams& params,
                                BackboneCache* cache = nullptr);

/// Which gradients to produce during backward.
struct BackboneGradMask {
    bool base = true;      // embeddings, attention, MLP, norms
    bool adapters = true;
};

/// Backpropagates d(feature_map) and d(class_token) (may be empty) into `grad`.
void backbone_backward(const Tensor& d_feature_map, const Tensor& d_class_token, const BackboneConfig& config,
                       const BackboneParams& params, const BackboneCache& cache, BackboneParams& grad,
                       BackboneGradMask mask);

}  // namespace tsvpr
