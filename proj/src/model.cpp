#include "tsvpr/model.hpp"

#include <stdexcept>

#include "tsvpr/ops.hpp"

namespace tsvpr {

std::size_t ModelConfig::local_grid_size() const {
    ConvTransposeSpec s{heads.kernel, heads.stride, heads.padding, 1, 1};
    return s.output_size(s.output_size(backbone.grid_size()));
}

void ModelConfig::validate() const {
    backbone.validate();
    if (!(heads.gem_p >= 1.0)) throw std::invalid_argument("model config: GeM p must be >= 1");
    if (heads.local_mid_channels <= heads.local_out_channels || heads.local_out_channels == 0) {
        throw std::invalid_argument("model config: local head channels must shrink (mid > out > 0)");
    }
    (void)local_grid_size();
}

ModelConfig desk_model() { return ModelConfig{}; }

ModelConfig paper_model() {
    ModelConfig c;
    c.backbone = vit_large_backbone();
    c.heads.local_mid_channels = 256;
    c.heads.local_out_channels = 128;
    return c;
}

std::string to_string(ParamGroup group) {
    switch (group) {
        case ParamGroup::backbone: return "backbone";
        case ParamGroup::adapters: return "adapters";
        case ParamGroup::local_head: return "local_head";
        case ParamGroup::gem: return "gem";
    }
    return "unknown";
}

ParamGroup parse_param_group(const std::string& text) {
    if (text == "backbone") return ParamGroup::backbone;
    if (text == "adapters") return ParamGroup::adapters;
    if (text == "local_head") return ParamGroup::local_head;
    if (text == "gem") return ParamGroup::gem;
    throw std::invalid_argument("unknown parameter group '" + text + "'");
}

FreezePolicy default_freeze_policy(const ModelConfig& config) {
    FreezePolicy frozen;
    if (config.backbone.adapter_mode != AdapterMode::none) frozen.insert(ParamGroup::backbone);
    if (!config.heads.learn_gem_p) frozen.insert(ParamGroup::gem);
    return frozen;
}

namespace {

template <class Params, class Ref>
std::vector<Ref> collect(Params& p) {
    std::vector<Ref> refs;
    auto add = [&refs](std::string name, ParamGroup g, auto& t) { refs.push_back(Ref{std::move(name), g, &t}); };
    auto add_linear = [&add](const std::string& name, ParamGroup g, auto& l) {
        add(name + ".weight", g, l.weight);
        add(name + ".bias", g, l.bias);
    };
    auto add_norm = [&add](const std::string& name, auto& n) {
        add(name + ".gamma", ParamGroup::backbone, n.gamma);
        add(name + ".beta", ParamGroup::backbone, n.beta);
    };
    auto& bb = p.backbone;
    add_linear("backbone.patch_embed", ParamGroup::backbone, bb.patch_embed);
    add("backbone.class_token", ParamGroup::backbone, bb.class_token);
    add("backbone.pos_embed", ParamGroup::backbone, bb.pos_embed);
    for (std::size_t b = 0; b < bb.blocks.size(); ++b) {
        auto& blk = bb.blocks[b];
        const std::string pre = "backbone.blocks." + std::to_string(b);
        add_norm(pre + ".norm1", blk.norm1);
        add_linear(pre + ".attn.query", ParamGroup::backbone, blk.attention.query);
        add_linear(pre + ".attn.key", ParamGroup::backbone, blk.attention.key);
        add_linear(pre + ".attn.value", ParamGroup::backbone, blk.attention.value);
        add_linear(pre + ".attn.output", ParamGroup::backbone, blk.attention.output);
        add_norm(pre + ".norm2", blk.norm2);
        add_linear(pre + ".mlp.fc1", ParamGroup::backbone, blk.mlp_in);
        add_linear(pre + ".mlp.fc2", ParamGroup::backbone, blk.mlp_out);
        if (blk.serial_adapter) {
            add_linear(pre + ".adapter1.down", ParamGroup::adapters, blk.serial_adapter->down);
            add_linear(pre + ".adapter1.up", ParamGroup::adapters, blk.serial_adapter->up);
        }
        if (blk.parallel_adapter) {
            add_linear(pre + ".adapter2.down", ParamGroup::adapters, blk.parallel_adapter->down);
            add_linear(pre + ".adapter2.up", ParamGroup::adapters, blk.parallel_adapter->up);
        }
    }
    add_norm("backbone.final_norm", bb.final_norm);
    add("local_head.up1.weight", ParamGroup::local_head, p.local_head.up1.weight);
    add("local_head.up1.bias", ParamGroup::local_head, p.local_head.up1.bias);
    add("local_head.up2.weight", ParamGroup::local_head, p.local_head.up2.weight);
    add("local_head.up2.bias", ParamGroup::local_head, p.local_head.up2.bias);
    add("gem.p", ParamGroup::gem, p.gem_p);
    return refs;
}

}  // namespace

std::vector<ParamRef> param_refs(ModelParams& params) { return collect<ModelParams, ParamRef>(params); }

std::vector<ConstParamRef> param_refs(const ModelParams& params) {
    return collect<const ModelParams, ConstParamRef>(params);
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng backbone_rng(derive_seed(seed, 1));
    Rng head_rng(derive_seed(seed, 2));
    ModelParams p;
    p.backbone = init_backbone(config.backbone, backbone_rng);
    p.local_head = init_local_head(config.backbone.embed_dim, config.heads, head_rng);
    p.gem_p = Tensor({1}, config.heads.gem_p);
    return p;
}

ModelParams zeros_like(const ModelParams& params) {
    ModelParams z;
    z.backbone = zeros_like(params.backbone);
    auto zero_conv = [](const ConvTranspose& c) {
        return ConvTranspose{c.spec, Tensor::zeros_like(c.weight), Tensor::zeros_like(c.bias)};
    };
    z.local_head = {zero_conv(params.local_head.up1), zero_conv(params.local_head.up2)};
    z.gem_p = Tensor::zeros_like(params.gem_p);
    return z;
}

ImageFeatures extract_features(const Tensor& image, const ModelConfig& config, const ModelParams& params,
                               bool with_local) {
    BackboneOutput bb = backbone_forward(image, config.backbone, params.backbone);
    ImageFeatures f;
    f.global = global_feature(bb.feature_map, params.gem_p[0], config.heads.global_mode, bb.class_token);
    if (with_local) f.local = local_adaptation(bb.feature_map, params.local_head);
    f.feature_map = std::move(bb.feature_map);
    f.class_token = std::move(bb.class_token);
    return f;
}

ImageFeatures forward_train(const Tensor& image, const ModelConfig& config, const ModelParams& params,
                            ModelCache& cache) {
    BackboneOutput bb = backbone_forward(image, config.backbone, params.backbone, &cache.backbone);
    ImageFeatures f;
    if (config.heads.global_mode == GlobalMode::gem) {
        cache.pooled = gem_pool(bb.feature_map, params.gem_p[0]);
    } else {
        cache.pooled.assign(bb.class_token.values().begin(), bb.class_token.values().end());
    }
    f.global = ops::l2_normalize(cache.pooled);
    f.local = local_adaptation(bb.feature_map, params.local_head, &cache.local);
    f.feature_map = std::move(bb.feature_map);
    f.class_token = std::move(bb.class_token);
    return f;
}

void backward(std::span<const double> d_global, const Tensor& d_local, const ModelConfig& config,
              const ModelParams& params, const ModelCache& cache, const ImageFeatures& features, ModelParams& grad,
              const FreezePolicy& frozen) {
    const bool backbone_tunable = !frozen.contains(ParamGroup::backbone);
    const bool adapters_tunable = !frozen.contains(ParamGroup::adapters) && config.backbone.adapter_mode != AdapterMode::none;
    const bool head_tunable = !frozen.contains(ParamGroup::local_head);
    const bool gem_tunable = !frozen.contains(ParamGroup::gem);

    Tensor d_fm(features.feature_map.shape());
    Tensor d_cls;
    if (!d_global.empty()) {
        const auto d_pooled = ops::l2_normalize_backward(cache.pooled, d_global);
        if (config.heads.global_mode == GlobalMode::gem) {
            double dp = 0.0;
            const Tensor g = gem_pool_backward(features.feature_map, params.gem_p[0], cache.pooled, d_pooled,
                                               gem_tunable ? &dp : nullptr);
            for (std::size_t i = 0; i < d_fm.size(); ++i) d_fm[i] += g[i];
            if (gem_tunable) grad.gem_p[0] += dp;
        } else {
            d_cls = Tensor({d_pooled.size()}, d_pooled);
        }
    }
    if (!d_local.empty()) {
        const Tensor g = local_adaptation_backward(d_local, params.local_head, cache.local,
                                                   head_tunable ? &grad.local_head : nullptr);
        for (std::size_t i = 0; i < d_fm.size(); ++i) d_fm[i] += g[i];
    }
    if (!backbone_tunable && !adapters_tunable) return;
    backbone_backward(d_fm, d_cls, config.backbone, params.backbone, cache.backbone, grad.backbone,
                      BackboneGradMask{backbone_tunable, adapters_tunable});
}

}  // namespace tsvpr
