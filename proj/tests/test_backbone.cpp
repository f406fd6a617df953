#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tsvpr/backbone.hpp"

using namespace tsvpr;
using tu::max_abs;
using tu::random_tensor;
using tu::weighted_sum;

namespace {

BackboneConfig tiny_backbone(AdapterMode mode = AdapterMode::both) {
    BackboneConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.embed_dim = 8;
    c.num_blocks = 2;
    c.num_heads = 2;
    c.adapter_mode = mode;
    return c;
}

void randomize_up_projections(BackboneParams& p, Rng& rng) {
    for (auto& b : p.blocks) {
        if (b.serial_adapter) fill_normal(b.serial_adapter->up.weight, 0.3, rng);
        if (b.parallel_adapter) fill_normal(b.parallel_adapter->up.weight, 0.3, rng);
    }
}

}  // namespace

TEST(Backbone, ConfigArithmetic) {
    const BackboneConfig desk = desk_backbone();
    EXPECT_EQ(desk.grid_size(), 8u);
    EXPECT_EQ(desk.num_patches(), 64u);
    EXPECT_EQ(desk.patch_dim(), 192u);
    EXPECT_EQ(desk.adapter_width(), 32u);

    const BackboneConfig large = vit_large_backbone();
    EXPECT_EQ(large.grid_size(), 16u);
    EXPECT_EQ(large.embed_dim, 1024u);
    EXPECT_EQ(large.num_blocks, 24u);
    EXPECT_EQ(large.mlp_width(), 4096u);
    EXPECT_EQ(large.adapter_width(), 512u);
}

TEST(Backbone, AdapterWidthRounds) {
    BackboneConfig c = tiny_backbone();
    c.embed_dim = 10;
    c.num_heads = 2;
    c.bottleneck_ratio = 0.25;  // 2.5 rounds away from zero
    EXPECT_EQ(c.adapter_width(), 3u);
    c.bottleneck_ratio = 0.01;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Backbone, ValidateRejectsBadGeometry) {
    BackboneConfig c = tiny_backbone();
    c.image_size = 20;  // not a multiple of the patch size
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = tiny_backbone();
    c.num_heads = 3;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Backbone, ModeParsing) {
    for (AdapterMode m : {AdapterMode::none, AdapterMode::serial_only, AdapterMode::parallel_only, AdapterMode::both}) {
        EXPECT_EQ(parse_adapter_mode(to_string(m)), m);
    }
    EXPECT_THROW(parse_adapter_mode("sideways"), std::invalid_argument);
}

TEST(Backbone, AdaptersPresentPerMode) {
    Rng rng(1);
    const auto serial = init_backbone(tiny_backbone(AdapterMode::serial_only), rng);
    EXPECT_TRUE(serial.blocks[0].serial_adapter.has_value());
    EXPECT_FALSE(serial.blocks[0].parallel_adapter.has_value());
    const auto none = init_backbone(tiny_backbone(AdapterMode::none), rng);
    EXPECT_FALSE(none.blocks[1].serial_adapter.has_value());
    EXPECT_FALSE(none.blocks[1].parallel_adapter.has_value());

    const auto both = init_backbone(tiny_backbone(), rng);
    const auto& a = *both.blocks[0].serial_adapter;
    EXPECT_EQ(a.down.weight.shape(), (std::vector<std::size_t>{8, 4}));
    EXPECT_EQ(a.up.weight.shape(), (std::vector<std::size_t>{4, 8}));
    EXPECT_EQ(max_abs(a.up.weight), 0.0);
}

TEST(Backbone, OutputShapes) {
    Rng rng(2);
    const BackboneConfig c = tiny_backbone();
    const BackboneParams p = init_backbone(c, rng);
    const Tensor image = random_tensor({16, 16, 3}, rng);
    const Tensor tokens = patch_embed(image, c, p);
    EXPECT_EQ(tokens.shape(), (std::vector<std::size_t>{5, 8}));
    const BackboneOutput out = backbone_forward(image, c, p);
    EXPECT_EQ(out.feature_map.shape(), (std::vector<std::size_t>{2, 2, 8}));
    EXPECT_EQ(out.class_token.shape(), (std::vector<std::size_t>{8}));
}

TEST(Backbone, PatchEmbedOrdersPatchesRowMajor) {
    Rng rng(3);
    const BackboneConfig c = tiny_backbone();
    BackboneParams p = init_backbone(c, rng);
    p.pos_embed.fill(0.0);
    Tensor image({16, 16, 3});
    // Only the bottom-left patch (row 1, col 0) is non-zero.
    for (std::size_t y = 8; y < 16; ++y)
        for (std::size_t x = 0; x < 8; ++x)
            for (std::size_t ch = 0; ch < 3; ++ch) image.at(y, x, ch) = 1.0;
    const Tensor tokens = patch_embed(image, c, p);
    for (std::size_t t : {1u, 2u, 4u}) {
        for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(tokens.at(t, d), p.patch_embed.bias[d], 1e-12);
    }
    double diff = 0.0;
    for (std::size_t d = 0; d < 8; ++d) diff += std::abs(tokens.at(3, d) - p.patch_embed.bias[d]);
    EXPECT_GT(diff, 1e-6);
}

TEST(Backbone, ZeroInitAdaptersAreIdentity) {
    Rng rng(4);
    for (AdapterMode m : {AdapterMode::serial_only, AdapterMode::parallel_only, AdapterMode::both}) {
        const BackboneConfig c = tiny_backbone(m);
        const BackboneParams p = init_backbone(c, rng);
        for (int trial = 0; trial < 5; ++trial) {
            const Tensor x = random_tensor({5, 8}, rng);
            const Tensor plain = block_forward(x, p.blocks[0], c.num_heads);
            const Tensor adapted = adapted_block_forward(x, p.blocks[0], c.num_heads, c.adapter_scale, m);
            EXPECT_LT(max_abs_diff(plain, adapted), 1e-12);
        }
    }
}

TEST(Backbone, NonZeroAdaptersChangeOutput) {
    Rng rng(5);
    const BackboneConfig c = tiny_backbone();
    BackboneParams p = init_backbone(c, rng);
    randomize_up_projections(p, rng);
    const Tensor x = random_tensor({5, 8}, rng);
    const Tensor plain = block_forward(x, p.blocks[0], c.num_heads);
    const Tensor adapted = adapted_block_forward(x, p.blocks[0], c.num_heads, c.adapter_scale, AdapterMode::both);
    EXPECT_GT(max_abs_diff(plain, adapted), 1e-4);
}

TEST(Backbone, ParallelAdapterIsScaled) {
    Rng rng(6);
    const BackboneConfig c = tiny_backbone(AdapterMode::parallel_only);
    BackboneParams p = init_backbone(c, rng);
    randomize_up_projections(p, rng);
    const Tensor x = random_tensor({5, 8}, rng);
    const Tensor plain = block_forward(x, p.blocks[0], c.num_heads);
    const Tensor s1 = adapted_block_forward(x, p.blocks[0], c.num_heads, 0.1, AdapterMode::parallel_only);
    const Tensor s2 = adapted_block_forward(x, p.blocks[0], c.num_heads, 0.2, AdapterMode::parallel_only);
    // The parallel branch is additive, so doubling s doubles the deviation.
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(s2[i] - plain[i], 2.0 * (s1[i] - plain[i]), 1e-12);
}

TEST(Backbone, BackwardMatchesFiniteDifferences) {
    for (AdapterMode mode : {AdapterMode::both, AdapterMode::none}) {
        Rng rng(7);
        const BackboneConfig c = tiny_backbone(mode);
        BackboneParams p = init_backbone(c, rng);
        randomize_up_projections(p, rng);
        Tensor image = random_tensor({16, 16, 3}, rng, 0.5);
        const Tensor w_fm = random_tensor({2, 2, 8}, rng);
        const Tensor w_cls = random_tensor({8}, rng);

        BackboneCache cache;
        backbone_forward(image, c, p, &cache);
        BackboneParams grad = zeros_like(p);
        backbone_backward(w_fm, w_cls, c, p, cache, grad, {});

        auto f = [&] {
            const BackboneOutput o = backbone_forward(image, c, p);
            return weighted_sum(o.feature_map, w_fm) + weighted_sum(o.class_token, w_cls);
        };
        auto check = [&](Tensor& param, const Tensor& g) {
            // A few coordinates per tensor keeps the test fast.
            for (std::size_t i = 0; i < param.size(); i += std::max<std::size_t>(1, param.size() / 5)) {
                const double n = tu::numeric_derivative(f, param[i]);
                EXPECT_NEAR(g[i], n, 1e-6 * std::max(1.0, std::abs(n)));
            }
        };
        check(p.patch_embed.weight, grad.patch_embed.weight);
        check(p.class_token, grad.class_token);
        check(p.pos_embed, grad.pos_embed);
        check(p.blocks[0].attention.query.weight, grad.blocks[0].attention.query.weight);
        check(p.blocks[1].mlp_in.weight, grad.blocks[1].mlp_in.weight);
        check(p.blocks[1].norm2.gamma, grad.blocks[1].norm2.gamma);
        check(p.final_norm.beta, grad.final_norm.beta);
        if (mode == AdapterMode::both) {
            check(p.blocks[0].serial_adapter->down.weight, grad.blocks[0].serial_adapter->down.weight);
            check(p.blocks[1].parallel_adapter->up.weight, grad.blocks[1].parallel_adapter->up.weight);
            check(p.blocks[1].parallel_adapter->up.bias, grad.blocks[1].parallel_adapter->up.bias);
        }
    }
}

TEST(Backbone, GradMaskSkipsGroups) {
    Rng rng(8);
    const BackboneConfig c = tiny_backbone();
    BackboneParams p = init_backbone(c, rng);
    randomize_up_projections(p, rng);
    const Tensor image = random_tensor({16, 16, 3}, rng, 0.5);
    BackboneCache cache;
    backbone_forward(image, c, p, &cache);
    BackboneParams grad = zeros_like(p);
    backbone_backward(random_tensor({2, 2, 8}, rng), Tensor(), c, p, cache, grad, {.base = false, .adapters = true});
    EXPECT_EQ(max_abs(grad.patch_embed.weight), 0.0);
    EXPECT_EQ(max_abs(grad.blocks[0].attention.key.weight), 0.0);
    EXPECT_GT(max_abs(grad.blocks[0].serial_adapter->down.weight), 0.0);
}
