#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tsvpr/tensor.hpp"

// Mutual-nearest-neighbour matching between two dense local grids and the
// match-count re-ranking built on it. There is deliberately no geometric
// verification stage: the score is the raw number of mutual matches.

namespace tsvpr {

/// Non-owning view of a flattened local grid: `locations` rows of `channels` values.
template <class T>
struct GridView {
    const T* data = nullptr;
    std::size_t locations = 0;
    std::size_t channels = 0;

    const T* row(std::size_t i) const { return data + i * channels; }
};

/// Flattens an [h x w x C] (or [N x C]) tensor.
GridView<double> grid_view(const Tensor& grid);

template <class T>
struct SimilarityMatrix {
    std::size_t rows = 0;  // query locations
    std::size_t cols = 0;  // candidate locations
    std::vector<T> values;

    T at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
};

struct Match {
    std::uint32_t query;
    std::uint32_t candidate;
    double similarity;
};

using MatchSet = std::vector<Match>;

/// s(i, j) = q(i) . c(j), computed as one dense product.
template <class T>
SimilarityMatrix<T> similarity_matrix(GridView<T> query, GridView<T> candidate);

/// Pairs (u, v) with u = argmax_i s(i, v) and v = argmax_j s(u, j); ties go to the
/// lowest index. Sorted by query index.
template <class T>
MatchSet mutual_nn_matches(const SimilarityMatrix<T>& s);

/// Reusable buffers so repeated scoring does not allocate.
template <class T>
struct MatchWorkspace {
    std::vector<T> candidate_t;
    std::vector<T> sims;
    std::vector<T> col_best;
    std::vector<std::uint32_t> col_arg;
    std::vector<std::uint32_t> row_arg;
};

/// |mutual_nn_matches(similarity_matrix(q, c))|
template <class T>
std::size_t rerank_score(GridView<T> query, GridView<T> candidate, MatchWorkspace<T>& ws);
template <class T>
std::size_t rerank_score(GridView<T> query, GridView<T> candidate);

struct RankedCandidate {
    std::size_t index;  // position in the incoming candidate list
    double global_distance;
    std::size_t score;
};

/// Orders by descending score, then ascending global distance, then incoming position.
std::vector<RankedCandidate> order_by_scores(std::span<const double> global_distances,
                                             std::span<const std::size_t> scores);

/// Scores every candidate against the query and returns the re-ranked list.
template <class T>
std::vector<RankedCandidate> rerank_candidates(GridView<T> query, std::span<const GridView<T>> candidates,
                                               std::span<const double> global_distances);

}  // namespace tsvpr
