#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"
#include "tsvpr/losses.hpp"
#include "tsvpr/ops.hpp"

using namespace tsvpr;
using tu::random_tensor;

namespace {

// Owns the features behind a TripletView.
struct TripletData {
    std::vector<double> q, p;
    std::vector<std::vector<double>> n;
    Tensor ql, pl;
    std::vector<Tensor> nl;

    TripletView view() const {
        TripletView t{q, p, {}, grid_view(ql), grid_view(pl), {}};
        for (const auto& x : n) t.negative_globals.push_back(x);
        for (const auto& x : nl) t.negative_locals.push_back(grid_view(x));
        return t;
    }
};

TripletData random_triplet(Rng& rng, std::size_t negatives, std::size_t gdim = 6, std::size_t side = 3,
                           std::size_t ch = 4) {
    TripletData d;
    auto unit = [&](std::size_t n) { return ops::l2_normalize(random_tensor({n}, rng).values()); };
    d.q = unit(gdim);
    d.p = unit(gdim);
    for (std::size_t j = 0; j < negatives; ++j) d.n.push_back(unit(gdim));
    d.ql = ops::intra_l2(random_tensor({side, side, ch}, rng));
    d.pl = ops::intra_l2(random_tensor({side, side, ch}, rng));
    for (std::size_t j = 0; j < negatives; ++j) d.nl.push_back(ops::intra_l2(random_tensor({side, side, ch}, rng)));
    return d;
}

// Every feature coordinate of the triplet, with the matching analytic gradient.
void collect(TripletData& d, const LossGradients& g, std::vector<double*>& coords, std::vector<double>& analytic) {
    auto add = [&](std::span<double> x, std::span<const double> gx) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            coords.push_back(&x[i]);
            analytic.push_back(gx[i]);
        }
    };
    add(d.q, g.query_global);
    add(d.p, g.positive_global);
    for (std::size_t j = 0; j < d.n.size(); ++j) add(d.n[j], g.negative_globals[j]);
    add(d.ql.values(), g.query_local.values());
    add(d.pl.values(), g.positive_local.values());
    for (std::size_t j = 0; j < d.nl.size(); ++j) add(d.nl[j].values(), g.negative_locals[j].values());
}

}  // namespace

TEST(Losses, Hinge) {
    EXPECT_EQ(hinge(-1.0), 0.0);
    EXPECT_EQ(hinge(0.0), 0.0);
    EXPECT_EQ(hinge(2.5), 2.5);
}

TEST(Losses, GlobalLossHandValue) {
    TripletData d;
    d.q = {1.0, 0.0};
    d.p = {0.0, 1.0};   // |q - p| = sqrt(2)
    d.n = {{-1.0, 0.0},  // 2: inactive with m = 0.1
           {0.6, 0.8}};  // sqrt(0.16 + 0.64) = sqrt(0.8)
    d.ql = d.pl = Tensor({1, 1}, 1.0);
    d.nl = {d.ql, d.ql};
    const double want = std::sqrt(2.0) + 0.1 - std::sqrt(0.8);
    EXPECT_NEAR(global_loss(d.view(), 0.1), want, 1e-14);
}

TEST(Losses, MeanMatchSimilarity) {
    // Two locations, two channels; the candidate swaps rows and scales one.
    Tensor q({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0});
    Tensor c({2, 2}, std::vector<double>{0.0, 0.5, 1.0, 0.0});
    MatchSet m;
    EXPECT_NEAR(mean_match_similarity(grid_view(q), grid_view(c), &m), 0.75, 1e-15);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].candidate, 1u);
    EXPECT_EQ(m[1].candidate, 0u);
    EXPECT_NEAR(mean_match_similarity(grid_view(q), grid_view(q)), 1.0, 1e-15);
}

TEST(Losses, LocalLossHandValue) {
    TripletData d;
    d.q = d.p = {1.0};
    d.n = {{1.0}, {1.0}};
    d.ql = Tensor({2, 2}, std::vector<double>{1.0, 0.0, 0.0, 1.0});
    d.pl = Tensor({2, 2}, std::vector<double>{0.0, 0.5, 1.0, 0.0});  // mean 0.75
    d.nl = {Tensor({2, 2}, std::vector<double>{0.9, 0.0, 0.0, 0.9}),  // mean 0.9
            Tensor({2, 2}, std::vector<double>{0.1, 0.0, 0.0, 0.1})};
    EXPECT_NEAR(local_loss(d.view()), 0.15, 1e-14);

    LossConfig cfg;
    cfg.local_weight = 2.0;
    const LossValue v = combined_loss(d.view(), cfg);
    // Global terms: all distances are 0, so each is hinge(m) = m.
    EXPECT_NEAR(v.global, 0.2, 1e-15);
    EXPECT_NEAR(v.local, 0.15, 1e-14);
    EXPECT_NEAR(v.total, 0.2 + 2.0 * 0.15, 1e-14);
    ASSERT_EQ(v.hinge_args.size(), 4u);
    EXPECT_NEAR(v.kink_distance(), 0.1, 1e-14);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    Rng rng(1);
    std::size_t total_checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
        TripletData d = random_triplet(rng, 2);
        LossConfig cfg;
        cfg.margin = 0.5;  // keeps global hinges mostly active
        LossGradients g;
        combined_loss(d.view(), cfg, &g);
        std::vector<double*> coords;
        std::vector<double> analytic;
        collect(d, g, coords, analytic);
        auto probe = [&] {
            const LossValue v = combined_loss(d.view(), cfg);
            return LossProbe{v.total, v.selection_signature, v.kink_distance()};
        };
        const GradcheckReport r = finite_diff_gradcheck(probe, coords, analytic);
        EXPECT_LT(r.max_rel_error, 1e-4) << "trial " << trial;
        total_checked += r.checked;
    }
    EXPECT_GT(total_checked, 500u);
}

TEST(Losses, InactiveHingesGiveZeroGradient) {
    Rng rng(2);
    TripletData d = random_triplet(rng, 1);
    d.p = d.q;  // d(q, p) = 0
    for (double& v : d.n[0]) v = -v;  // far negative
    d.pl = d.ql;
    LossGradients g;
    const LossValue v = combined_loss(d.view(), {}, &g);
    EXPECT_EQ(v.global, 0.0);
    for (double x : g.query_global) EXPECT_EQ(x, 0.0);
    EXPECT_EQ(tu::max_abs(g.query_local), 0.0);
}

TEST(Losses, GradcheckSkipsKinks) {
    double x = 0.0;
    // hinge(x) has its kink exactly at the evaluation point.
    auto probe = [&] { return LossProbe{hinge(x), x > 0.0 ? 1u : 0u, std::abs(x)}; };
    double* coords[] = {&x};
    const double analytic[] = {0.5};
    const GradcheckReport r = finite_diff_gradcheck(probe, coords, analytic);
    EXPECT_EQ(r.checked, 0u);
    EXPECT_EQ(r.skipped, 1u);
}

TEST(Losses, GradcheckSkipsSelectionChanges) {
    double x = 0.5;
    // Selection flips when x moves up by any amount; the loss value is smooth.
    auto probe = [&] { return LossProbe{x * x, x > 0.5 ? 1u : 0u, 1.0}; };
    double* coords[] = {&x};
    const double analytic[] = {1.0};
    const GradcheckReport r = finite_diff_gradcheck(probe, coords, analytic);
    EXPECT_EQ(r.skipped, 1u);
}

TEST(Losses, GradcheckReportsWrongGradient) {
    double x = 2.0;
    auto probe = [&] { return LossProbe{x * x, 0, 1.0}; };
    double* coords[] = {&x};
    const double wrong[] = {3.0};
    const GradcheckReport r = finite_diff_gradcheck(probe, coords, wrong);
    EXPECT_EQ(r.checked, 1u);
    EXPECT_NEAR(r.max_rel_error, 0.25, 1e-6);
    EXPECT_EQ(x, 2.0);  // restored
}

TEST(Losses, GradcheckThrowsOnNonFiniteLoss) {
    double x = 1.0;
    auto probe = [&] { return LossProbe{x > 1.0 ? std::numeric_limits<double>::infinity() : x, 0, 1.0}; };
    double* coords[] = {&x};
    const double analytic[] = {1.0};
    EXPECT_THROW(finite_diff_gradcheck(probe, coords, analytic), std::runtime_error);
}

TEST(Losses, ConfigValidation) {
    LossConfig c;
    EXPECT_NO_THROW(c.validate());
    c.margin = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.local_weight = -1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Losses, TripletNeedsNegatives) {
    Rng rng(3);
    TripletData d = random_triplet(rng, 0);
    EXPECT_THROW(combined_loss(d.view(), {}), std::invalid_argument);
}
