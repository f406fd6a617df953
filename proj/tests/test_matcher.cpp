#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"
#include "tsvpr/matcher.hpp"
#include "tsvpr/ops.hpp"

using namespace tsvpr;

namespace {

// Exhaustive oracle: argmaxes computed independently with strict '>' scans.
MatchSet oracle_matches(const SimilarityMatrix<double>& s) {
    MatchSet out;
    for (std::size_t u = 0; u < s.rows; ++u) {
        std::size_t v = 0;
        for (std::size_t j = 1; j < s.cols; ++j)
            if (s.at(u, j) > s.at(u, v)) v = j;
        std::size_t back = 0;
        for (std::size_t i = 1; i < s.rows; ++i)
            if (s.at(i, v) > s.at(back, v)) back = i;
        if (back == u) out.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(v), s.at(u, v)});
    }
    return out;
}

SimilarityMatrix<double> random_matrix(Rng& rng, bool ties) {
    std::uniform_int_distribution<std::size_t> dim(1, 16);
    SimilarityMatrix<double> s;
    s.rows = dim(rng);
    s.cols = dim(rng);
    s.values.resize(s.rows * s.cols);
    std::uniform_int_distribution<int> coarse(-3, 3);
    std::normal_distribution<double> fine;
    for (double& v : s.values) v = ties ? coarse(rng) : fine(rng);
    return s;
}

}  // namespace

TEST(Matcher, HandExample) {
    SimilarityMatrix<double> s{3, 3, {0.9, 0.1, 0.0,   //
                                      0.8, 0.2, 0.1,   //
                                      0.0, 0.3, 0.7}};
    const MatchSet m = mutual_nn_matches(s);
    ASSERT_EQ(m.size(), 2u);
    EXPECT_EQ(m[0].query, 0u);
    EXPECT_EQ(m[0].candidate, 0u);
    EXPECT_EQ(m[1].query, 2u);
    EXPECT_EQ(m[1].candidate, 2u);
    EXPECT_DOUBLE_EQ(m[1].similarity, 0.7);
}

TEST(Matcher, TiesGoToLowestIndex) {
    SimilarityMatrix<double> all_equal{2, 3, std::vector<double>(6, 0.5)};
    const MatchSet m = mutual_nn_matches(all_equal);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].query, 0u);
    EXPECT_EQ(m[0].candidate, 0u);
}

TEST(Matcher, AgreesWithExhaustiveOracle) {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto s = random_matrix(rng, trial % 2 == 0);
        const MatchSet got = mutual_nn_matches(s);
        const MatchSet want = oracle_matches(s);
        ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
        for (std::size_t i = 0; i < got.size(); ++i) {
            EXPECT_EQ(got[i].query, want[i].query);
            EXPECT_EQ(got[i].candidate, want[i].candidate);
        }
    }
}

TEST(Matcher, MatchesAreOneToOne) {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const auto s = random_matrix(rng, true);
        const MatchSet m = mutual_nn_matches(s);
        std::vector<int> used(s.cols, 0);
        for (const auto& x : m) EXPECT_EQ(++used[x.candidate], 1);
        EXPECT_LE(m.size(), std::min(s.rows, s.cols));
    }
}

TEST(Matcher, SimilarityIsDotProduct) {
    Rng rng(3);
    const Tensor q = tu::random_tensor({5, 4}, rng);
    const Tensor c = tu::random_tensor({7, 4}, rng);
    const auto s = similarity_matrix(grid_view(q), grid_view(c));
    ASSERT_EQ(s.rows, 5u);
    ASSERT_EQ(s.cols, 7u);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) {
            double d = 0.0;
            for (std::size_t k = 0; k < 4; ++k) d += q.at(i, k) * c.at(j, k);
            EXPECT_NEAR(s.at(i, j), d, 1e-12);
        }
}

TEST(Matcher, RerankScoreCountsMatchesAndIsSymmetric) {
    Rng rng(4);
    MatchWorkspace<double> ws;
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor q = tu::random_tensor({9, 3}, rng);
        const Tensor c = tu::random_tensor({11, 3}, rng);
        const auto s = similarity_matrix(grid_view(q), grid_view(c));
        EXPECT_EQ(rerank_score(grid_view(q), grid_view(c), ws), mutual_nn_matches(s).size());
        // Continuous data has no ties, so swapping roles gives the same count.
        EXPECT_EQ(rerank_score(grid_view(q), grid_view(c)), rerank_score(grid_view(c), grid_view(q)));
    }
}

TEST(Matcher, IdenticalUnitGridsMatchEverywhere) {
    Rng rng(5);
    Tensor g = tu::random_tensor({4, 4, 6}, rng);
    g = ops::intra_l2(g);
    EXPECT_EQ(rerank_score(grid_view(g), grid_view(g)), 16u);
}

TEST(Matcher, FloatAndDoubleAgree) {
    Rng rng(6);
    const Tensor q = ops::intra_l2(tu::random_tensor({6, 6, 8}, rng));
    const Tensor c = ops::intra_l2(tu::random_tensor({6, 6, 8}, rng));
    std::vector<float> qf(q.values().begin(), q.values().end()), cf(c.values().begin(), c.values().end());
    const GridView<float> vq{qf.data(), 36, 8}, vc{cf.data(), 36, 8};
    EXPECT_EQ(rerank_score(vq, vc), rerank_score(grid_view(q), grid_view(c)));
}

TEST(Matcher, OrderByScores) {
    const std::vector<double> dist{0.5, 0.2, 0.2, 0.9};
    const std::vector<std::size_t> score{3, 3, 3, 7};
    const auto r = order_by_scores(dist, score);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[0].index, 3u);  // highest score
    EXPECT_EQ(r[1].index, 1u);  // tie on score -> smaller distance, then position
    EXPECT_EQ(r[2].index, 2u);
    EXPECT_EQ(r[3].index, 0u);
    EXPECT_THROW(order_by_scores(dist, std::vector<std::size_t>{1}), std::invalid_argument);
}

TEST(Matcher, RerankCandidatesPromotesBetterLocalMatch) {
    Rng rng(7);
    const Tensor q = ops::intra_l2(tu::random_tensor({5, 5, 4}, rng));
    const Tensor other = ops::intra_l2(tu::random_tensor({5, 5, 4}, rng));
    const std::vector<GridView<double>> cands{grid_view(other), grid_view(q)};
    const std::vector<double> dist{0.1, 0.4};
    const auto r = rerank_candidates<double>(grid_view(q), cands, dist);
    EXPECT_EQ(r[0].index, 1u);
    EXPECT_EQ(r[0].score, 25u);
}
