#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tsvpr {

struct BenchConfig {
    std::vector<std::size_t> ks{10, 25, 50, 100};
    std::vector<std::size_t> locations{64, 225, 841};  // N' = h' * w'
    std::size_t channels = 128;
    std::size_t queries = 2;
    /// Each cell reports the fastest of this many passes.
    std::size_t repeats = 3;
    std::uint64_t seed = 0;
};

struct BenchRow {
    std::size_t k;
    std::size_t locations;
    double seconds_per_query;
};

struct BenchResult {
    std::vector<BenchRow> rows;
    /// Exponents of a joint fit log t = a + slope_k log k + slope_locations log N'.
    double slope_k = 0.0;
    double slope_locations = 0.0;
};

/// Times re-ranking of k random unit-norm candidate grids per query (float).
BenchResult benchmark_rerank(const BenchConfig& config);

/// Least-squares slope of log(y) against log(x).
double loglog_slope(std::span<const double> x, std::span<const double> y);

std::string bench_csv(const BenchResult& result);

}  // namespace tsvpr
