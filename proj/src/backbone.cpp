#include "tsvpr/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace tsvpr {

std::string to_string(AdapterMode mode) {
    switch (mode) {
        case AdapterMode::none: return "none";
        case AdapterMode::serial_only: return "serial_only";
        case AdapterMode::parallel_only: return "parallel_only";
        case AdapterMode::both: return "both";
    }
    return "unknown";
}

AdapterMode parse_adapter_mode(const std::string& text) {
    if (text == "none") return AdapterMode::none;
    if (text == "serial_only" || text == "serial") return AdapterMode::serial_only;
    if (text == "parallel_only" || text == "parallel") return AdapterMode::parallel_only;
    if (text == "both") return AdapterMode::both;
    throw std::invalid_argument("unknown adapter mode '" + text + "'");
}

std::size_t BackboneConfig::adapter_width() const {
    return static_cast<std::size_t>(std::llround(bottleneck_ratio * static_cast<double>(embed_dim)));
}

void BackboneConfig::validate() const {
    if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
        throw std::invalid_argument("backbone config: image_size must be a positive multiple of patch_size");
    }
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0) {
        throw std::invalid_argument("backbone config: embed_dim must be divisible by num_heads");
    }
    if (adapter_mode != AdapterMode::none) {
        if (!(bottleneck_ratio > 0.0 && bottleneck_ratio <= 1.0)) {
            throw std::invalid_argument("backbone config: bottleneck ratio must lie in (0, 1]");
        }
        if (adapter_width() < 1) throw std::invalid_argument("backbone config: adapter width rounds to zero");
    }
}

BackboneConfig desk_backbone() { return BackboneConfig{}; }

BackboneConfig vit_large_backbone() {
    BackboneConfig c;
    c.image_size = 224;
    c.patch_size = 14;
    c.embed_dim = 1024;
    c.num_blocks = 24;
    c.num_heads = 16;
    return c;
}

namespace {

Linear make_linear(std::size_t in, std::size_t out, double stddev, Rng& rng) {
    Linear l{Tensor({in, out}), Tensor({out})};
    if (stddev > 0.0) fill_normal(l.weight, stddev, rng);
    return l;
}

LayerNormParams make_norm(std::size_t d) { return {Tensor({d}, 1.0), Tensor({d}, 0.0)}; }

AdapterParams make_adapter(std::size_t d, std::size_t hidden, Rng& rng) {
    // Zero up-projection: a fresh adapter contributes exactly nothing.
    return {make_linear(d, hidden, 1.0 / std::sqrt(static_cast<double>(d)), rng), make_linear(hidden, d, 0.0, rng)};
}

Linear zero_linear(const Linear& l) { return {Tensor::zeros_like(l.weight), Tensor::zeros_like(l.bias)}; }
LayerNormParams zero_norm(const LayerNormParams& n) { return {Tensor::zeros_like(n.gamma), Tensor::zeros_like(n.beta)}; }

void add_into(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

BackboneParams init_backbone(const BackboneConfig& config, Rng& rng) {
    config.validate();
    const std::size_t d = config.embed_dim;
    const double embed_std = 0.02;
    auto fan_in_std = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };

    BackboneParams p;
    p.patch_embed = make_linear(config.patch_dim(), d, fan_in_std(config.patch_dim()), rng);
    p.class_token = Tensor({d});
    fill_normal(p.class_token, embed_std, rng);
    p.pos_embed = Tensor({config.num_patches() + 1, d});
    fill_normal(p.pos_embed, embed_std, rng);

    p.blocks.reserve(config.num_blocks);
    for (std::size_t b = 0; b < config.num_blocks; ++b) {
        BlockParams blk;
        blk.norm1 = make_norm(d);
        blk.attention.query = make_linear(d, d, fan_in_std(d), rng);
        blk.attention.key = make_linear(d, d, fan_in_std(d), rng);
        blk.attention.value = make_linear(d, d, fan_in_std(d), rng);
        blk.attention.output = make_linear(d, d, fan_in_std(d), rng);
        blk.norm2 = make_norm(d);
        blk.mlp_in = make_linear(d, config.mlp_width(), fan_in_std(d), rng);
        blk.mlp_out = make_linear(config.mlp_width(), d, fan_in_std(config.mlp_width()), rng);
        if (has_serial(config.adapter_mode)) blk.serial_adapter = make_adapter(d, config.adapter_width(), rng);
        if (has_parallel(config.adapter_mode)) blk.parallel_adapter = make_adapter(d, config.adapter_width(), rng);
        p.blocks.push_back(std::move(blk));
    }
    p.final_norm = make_norm(d);
    return p;
}

BackboneParams zeros_like(const BackboneParams& params) {
    BackboneParams z;
    z.patch_embed = zero_linear(params.patch_embed);
    z.class_token = Tensor::zeros_like(params.class_token);
    z.pos_embed = Tensor::zeros_like(params.pos_embed);
    for (const auto& blk : params.blocks) {
        BlockParams zb;
        zb.norm1 = zero_norm(blk.norm1);
        zb.attention = {zero_linear(blk.attention.query), zero_linear(blk.attention.key),
                        zero_linear(blk.attention.value), zero_linear(blk.attention.output)};
        zb.norm2 = zero_norm(blk.norm2);
        zb.mlp_in = zero_linear(blk.mlp_in);
        zb.mlp_out = zero_linear(blk.mlp_out);
        if (blk.serial_adapter) zb.serial_adapter = AdapterParams{zero_linear(blk.serial_adapter->down), zero_linear(blk.serial_adapter->up)};
        if (blk.parallel_adapter) zb.parallel_adapter = AdapterParams{zero_linear(blk.parallel_adapter->down), zero_linear(blk.parallel_adapter->up)};
        z.blocks.push_back(std::move(zb));
    }
    z.final_norm = zero_norm(params.final_norm);
    return z;
}

namespace {

Tensor extract_patches(const Tensor& image, const BackboneConfig& config) {
    const std::size_t s = config.image_size;
    if (image.rank() != 3 || image.dim(0) != s || image.dim(1) != s || image.dim(2) != 3) {
        throw std::invalid_argument("patch_embed: expected " + std::to_string(s) + "x" + std::to_string(s) +
                                    "x3 image, got " + image.shape_string());
    }
    const std::size_t ps = config.patch_size;
    const std::size_t g = config.grid_size();
    Tensor patches({g * g, config.patch_dim()});
    for (std::size_t py = 0; py < g; ++py) {
        for (std::size_t px = 0; px < g; ++px) {
            double* dst = patches.data() + (py * g + px) * config.patch_dim();
            for (std::size_t y = 0; y < ps; ++y) {
                const double* src = image.data() + ((py * ps + y) * s + px * ps) * 3;
                std::copy(src, src + ps * 3, dst + y * ps * 3);
            }
        }
    }
    return patches;
}

Tensor embed_patches(const Tensor& patches, const BackboneParams& params) {
    const Tensor tokens = ops::linear(patches, params.patch_embed);
    const std::size_t n = tokens.dim(0);
    const std::size_t d = tokens.dim(1);
    Tensor x({n + 1, d});
    for (std::size_t j = 0; j < d; ++j) x[j] = params.class_token[j] + params.pos_embed[j];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x[(i + 1) * d + j] = tokens[i * d + j] + params.pos_embed[(i + 1) * d + j];
    return x;
}

Tensor run_block(const Tensor& x, const BlockParams& params, std::size_t heads, double scale, bool serial,
                 bool parallel, BlockCache* cache) {
    ops::LayerNormCache n1;
    Tensor h1 = ops::layer_norm(x, params.norm1.gamma, params.norm1.beta, kLayerNormEps, cache ? &n1 : nullptr);
    Tensor attn = ops::multi_head_attention(h1, params.attention, heads, cache ? &cache->attention : nullptr);

    Tensor mid = attn;
    Tensor serial_pre;
    Tensor serial_act;
    if (serial) {
        serial_pre = ops::linear(attn, params.serial_adapter->down);
        serial_act = ops::relu(serial_pre);
        add_into(mid, ops::linear(serial_act, params.serial_adapter->up));
    }
    add_into(mid, x);

    ops::LayerNormCache n2;
    Tensor h2 = ops::layer_norm(mid, params.norm2.gamma, params.norm2.beta, kLayerNormEps, cache ? &n2 : nullptr);
    Tensor mlp_pre = ops::linear(h2, params.mlp_in);
    Tensor mlp_act = ops::gelu(mlp_pre);
    Tensor out = mid;
    add_into(out, ops::linear(mlp_act, params.mlp_out));

    Tensor parallel_pre;
    Tensor parallel_act;
    if (parallel) {
        parallel_pre = ops::linear(h2, params.parallel_adapter->down);
        parallel_act = ops::relu(parallel_pre);
        const Tensor branch = ops::linear(parallel_act, params.parallel_adapter->up);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * branch[i];
    }

    if (cache) {
        cache->input = x;
        cache->norm1 = std::move(n1);
        cache->norm1_out = std::move(h1);
        cache->attention_out = std::move(attn);
        cache->serial_pre = std::move(serial_pre);
        cache->serial_act = std::move(serial_act);
        cache->norm2 = std::move(n2);
        cache->norm2_out = std::move(h2);
        cache->mlp_pre = std::move(mlp_pre);
        cache->mlp_act = std::move(mlp_act);
        cache->parallel_pre = std::move(parallel_pre);
        cache->parallel_act = std::move(parallel_act);
    }
    return out;
}

Tensor block_backward(const Tensor& dout, const BlockParams& params, std::size_t heads, double scale,
                      const BlockCache& cache, BlockParams& grad, BackboneGradMask mask) {
    const bool serial = !cache.serial_pre.empty();
    const bool parallel = !cache.parallel_pre.empty();
    Linear* no_grad = nullptr;

    Tensor dmid = dout;
    Tensor dh2 = Tensor::zeros_like(cache.norm2_out);
    if (parallel) {
        Tensor dbranch = dout;
        for (double& v : dbranch.values()) v *= scale;
        auto& ga = *grad.parallel_adapter;
        const Tensor dact = ops::linear_backward(cache.parallel_act, dbranch, params.parallel_adapter->up,
                                                 mask.adapters ? &ga.up : no_grad);
        const Tensor dpre = ops::relu_backward(cache.parallel_pre, dact);
        add_into(dh2, ops::linear_backward(cache.norm2_out, dpre, params.parallel_adapter->down,
                                           mask.adapters ? &ga.down : no_grad));
    }
    {
        const Tensor dact = ops::linear_backward(cache.mlp_act, dout, params.mlp_out, mask.base ? &grad.mlp_out : no_grad);
        const Tensor dpre = ops::gelu_backward(cache.mlp_pre, dact);
        add_into(dh2, ops::linear_backward(cache.norm2_out, dpre, params.mlp_in, mask.base ? &grad.mlp_in : no_grad));
    }
    add_into(dmid, ops::layer_norm_backward(dh2, params.norm2, cache.norm2, mask.base ? &grad.norm2 : nullptr));

    Tensor dattn = dmid;
    if (serial) {
        auto& ga = *grad.serial_adapter;
        const Tensor dact = ops::linear_backward(cache.serial_act, dmid, params.serial_adapter->up,
                                                 mask.adapters ? &ga.up : no_grad);
        const Tensor dpre = ops::relu_backward(cache.serial_pre, dact);
        add_into(dattn, ops::linear_backward(cache.attention_out, dpre, params.serial_adapter->down,
                                             mask.adapters ? &ga.down : no_grad));
    }
    const Tensor dh1 = ops::multi_head_attention_backward(dattn, params.attention, heads, cache.attention,
                                                          mask.base ? &grad.attention : nullptr);
    Tensor dx = dmid;
    add_into(dx, ops::layer_norm_backward(dh1, params.norm1, cache.norm1, mask.base ? &grad.norm1 : nullptr));
    return dx;
}

void check_adapters(const BlockParams& params, AdapterMode mode) {
    if (has_serial(mode) != params.serial_adapter.has_value() ||
        has_parallel(mode) != params.parallel_adapter.has_value()) {
        throw std::invalid_argument("adapted block: parameters do not match adapter mode " + to_string(mode));
    }
}

}  // namespace

Tensor patch_embed(const Tensor& image, const BackboneConfig& config, const BackboneParams& params) {
    return embed_patches(extract_patches(image, config), params);
}

Tensor block_forward(const Tensor& x, const BlockParams& params, std::size_t heads) {
    return run_block(x, params, heads, 0.0, false, false, nullptr);
}

Tensor adapted_block_forward(const Tensor& x, const BlockParams& params, std::size_t heads, double scale,
                             AdapterMode mode, BlockCache* cache) {
    if (mode == AdapterMode::none) throw std::invalid_argument("adapted block: adapter mode is none");
    check_adapters(params, mode);
    return run_block(x, params, heads, scale, has_serial(mode), has_parallel(mode), cache);
}

BackboneOutput backbone_forward(const Tensor& image, const BackboneConfig& config, const BackboneParams& params,
                                BackboneCache* cache) {
    config.validate();
    if (params.blocks.size() != config.num_blocks) throw std::invalid_argument("backbone: block count mismatch");
    Tensor patches = extract_patches(image, config);
    Tensor x = embed_patches(patches, params);
    if (cache) {
        cache->patches = std::move(patches);
        cache->blocks.assign(config.num_blocks, BlockCache{});
    }
    const bool adapted = config.adapter_mode != AdapterMode::none;
    for (std::size_t b = 0; b < config.num_blocks; ++b) {
        BlockCache* bc = cache ? &cache->blocks[b] : nullptr;
        if (adapted) {
            x = adapted_block_forward(x, params.blocks[b], config.num_heads, config.adapter_scale, config.adapter_mode, bc);
        } else {
            x = run_block(x, params.blocks[b], config.num_heads, 0.0, false, false, bc);
        }
    }
    const Tensor y = ops::layer_norm(x, params.final_norm.gamma, params.final_norm.beta, kLayerNormEps,
                                     cache ? &cache->final_norm : nullptr);

    const std::size_t g = config.grid_size();
    const std::size_t d = config.embed_dim;
    BackboneOutput out;
    out.class_token = Tensor({d}, std::vector<double>(y.data(), y.data() + d));
    out.feature_map = Tensor({g, g, d}, std::vector<double>(y.data() + d, y.data() + y.size()));
    return out;
}

void backbone_backward(const Tensor& d_feature_map, const Tensor& d_class_token, const BackboneConfig& config,
                       const BackboneParams& params, const BackboneCache& cache, BackboneParams& grad,
                       BackboneGradMask mask) {
    const std::size_t n = config.num_patches();
    const std::size_t d = config.embed_dim;
    Tensor dy({n + 1, d});
    if (!d_class_token.empty()) std::copy(d_class_token.data(), d_class_token.data() + d, dy.data());
    if (!d_feature_map.empty()) std::copy(d_feature_map.data(), d_feature_map.data() + n * d, dy.data() + d);

    Tensor dx = ops::layer_norm_backward(dy, params.final_norm, cache.final_norm, mask.base ? &grad.final_norm : nullptr);
    const double scale = config.adapter_mode == AdapterMode::none ? 0.0 : config.adapter_scale;
    for (std::size_t b = config.num_blocks; b-- > 0;) {
        dx = block_backward(dx, params.blocks[b], config.num_heads, scale, cache.blocks[b], grad.blocks[b], mask);
    }
    if (!mask.base) return;

    add_into(grad.pos_embed, dx);
    for (std::size_t j = 0; j < d; ++j) grad.class_token[j] += dx[j];
    const Tensor dtokens({n, d}, std::vector<double>(dx.data() + d, dx.data() + dx.size()));
    ops::linear_backward(cache.patches, dtokens, params.patch_embed, &grad.patch_embed, false);
}

}  // namespace tsvpr
