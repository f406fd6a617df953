#include "tsvpr/matcher.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "tsvpr/gemm.hpp"

namespace tsvpr {

GridView<double> grid_view(const Tensor& grid) {
    return {grid.data(), grid.rows(), grid.cols()};
}

namespace {

template <class T>
void check_pair(GridView<T> q, GridView<T> c) {
    if (q.channels != c.channels) throw std::invalid_argument("matcher: channel dimensions differ");
    if (q.locations == 0 || c.locations == 0) throw std::invalid_argument("matcher: empty local grid");
}

template <class T>
void fill_similarities(GridView<T> q, GridView<T> c, std::vector<T>& transposed, std::vector<T>& out) {
    const std::size_t k = q.channels;
    transposed.resize(k * c.locations);
    for (std::size_t j = 0; j < c.locations; ++j)
        for (std::size_t p = 0; p < k; ++p) transposed[p * c.locations + j] = c.data[j * k + p];
    out.assign(q.locations * c.locations, T(0));
    gemm::nn(q.data, transposed.data(), out.data(), q.locations, k, c.locations);
}

// One pass over the matrix gives both the per-row and per-column argmax; strict
// comparisons keep the first (lowest) index on ties.
template <class T, class OnMatch>
void mutual_pass(const T* s, std::size_t rows, std::size_t cols, std::vector<T>& col_best,
                 std::vector<std::uint32_t>& col_arg, std::vector<std::uint32_t>& row_arg, OnMatch&& on_match) {
    col_best.assign(cols, -std::numeric_limits<T>::infinity());
    col_arg.assign(cols, 0);
    row_arg.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const T* r = s + i * cols;
        T best = -std::numeric_limits<T>::infinity();
        std::uint32_t arg = 0;
        for (std::size_t j = 0; j < cols; ++j) {
            const T v = r[j];
            if (v > best) {
                best = v;
                arg = static_cast<std::uint32_t>(j);
            }
            if (v > col_best[j]) {
                col_best[j] = v;
                col_arg[j] = static_cast<std::uint32_t>(i);
            }
        }
        row_arg[i] = arg;
    }
    for (std::size_t i = 0; i < rows; ++i) {
        const std::uint32_t v = row_arg[i];
        if (col_arg[v] == i) on_match(static_cast<std::uint32_t>(i), v);
    }
}

}  // namespace

template <class T>
SimilarityMatrix<T> similarity_matrix(GridView<T> query, GridView<T> candidate) {
    check_pair(query, candidate);
    SimilarityMatrix<T> s;
    s.rows = query.locations;
    s.cols = candidate.locations;
    std::vector<T> scratch;
    fill_similarities(query, candidate, scratch, s.values);
    return s;
}

template <class T>
MatchSet mutual_nn_matches(const SimilarityMatrix<T>& s) {
    if (s.rows == 0 || s.cols == 0) throw std::invalid_argument("mutual_nn_matches: empty matrix");
    std::vector<T> col_best;
    std::vector<std::uint32_t> col_arg;
    std::vector<std::uint32_t> row_arg;
    MatchSet out;
    mutual_pass(s.values.data(), s.rows, s.cols, col_best, col_arg, row_arg, [&](std::uint32_t u, std::uint32_t v) {
        out.push_back({u, v, static_cast<double>(s.at(u, v))});
    });
    return out;
}

template <class T>
std::size_t rerank_score(GridView<T> query, GridView<T> candidate, MatchWorkspace<T>& ws) {
    check_pair(query, candidate);
    fill_similarities(query, candidate, ws.candidate_t, ws.sims);
    std::size_t count = 0;
    mutual_pass(ws.sims.data(), query.locations, candidate.locations, ws.col_best, ws.col_arg, ws.row_arg,
                [&count](std::uint32_t, std::uint32_t) { ++count; });
    return count;
}

template <class T>
std::size_t rerank_score(GridView<T> query, GridView<T> candidate) {
    MatchWorkspace<T> ws;
    return rerank_score(query, candidate, ws);
}

std::vector<RankedCandidate> order_by_scores(std::span<const double> global_distances,
                                             std::span<const std::size_t> scores) {
    if (global_distances.size() != scores.size()) throw std::invalid_argument("order_by_scores: length mismatch");
    std::vector<RankedCandidate> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = {i, global_distances[i], scores[i]};
    std::stable_sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.global_distance < b.global_distance;
    });
    return out;
}

template <class T>
std::vector<RankedCandidate> rerank_candidates(GridView<T> query, std::span<const GridView<T>> candidates,
                                               std::span<const double> global_distances) {
    if (candidates.size() != global_distances.size()) throw std::invalid_argument("rerank_candidates: length mismatch");
    MatchWorkspace<T> ws;
    std::vector<std::size_t> scores(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) scores[i] = rerank_score(query, candidates[i], ws);
    return order_by_scores(global_distances, scores);
}

template SimilarityMatrix<float> similarity_matrix(GridView<float>, GridView<float>);
template SimilarityMatrix<double> similarity_matrix(GridView<double>, GridView<double>);
template MatchSet mutual_nn_matches(const SimilarityMatrix<float>&);
template MatchSet mutual_nn_matches(const SimilarityMatrix<double>&);
template std::size_t rerank_score(GridView<float>, GridView<float>, MatchWorkspace<float>&);
template std::size_t rerank_score(GridView<double>, GridView<double>, MatchWorkspace<double>&);
template std::size_t rerank_score(GridView<float>, GridView<float>);
template std::size_t rerank_score(GridView<double>, GridView<double>);
template std::vector<RankedCandidate> rerank_candidates(GridView<float>, std::span<const GridView<float>>,
                                                        std::span<const double>);
template std::vector<RankedCandidate> rerank_candidates(GridView<double>, std::span<const GridView<double>>,
                                                        std::span<const double>);

}  // namespace tsvpr
