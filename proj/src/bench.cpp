#include "tsvpr/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "tsvpr/matcher.hpp"
#include "tsvpr/rng.hpp"

namespace tsvpr {

namespace {

std::vector<float> random_unit_grid(std::size_t locations, std::size_t channels, Rng& rng) {
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::vector<float> g(locations * channels);
    for (std::size_t i = 0; i < locations; ++i) {
        float* row = g.data() + i * channels;
        double s = 0.0;
        for (std::size_t c = 0; c < channels; ++c) {
            row[c] = n(rng);
            s += static_cast<double>(row[c]) * row[c];
        }
        const float inv = static_cast<float>(1.0 / std::sqrt(s));
        for (std::size_t c = 0; c < channels; ++c) row[c] *= inv;
    }
    return g;
}

}  // namespace

double loglog_slope(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need two or more paired points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += std::log(x[i]);
        my += std::log(y[i]);
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        sxy += dx * (std::log(y[i]) - my);
        sxx += dx * dx;
    }
    if (sxx == 0.0) throw std::invalid_argument("loglog_slope: x values are all equal");
    return sxy / sxx;
}

BenchResult benchmark_rerank(const BenchConfig& config) {
    if (config.ks.empty() || config.locations.empty() || config.channels == 0 || config.queries == 0 || config.repeats == 0) {
        throw std::invalid_argument("bench: empty configuration");
    }
    using clock = std::chrono::steady_clock;
    Rng rng(derive_seed(config.seed, 21));
    const std::size_t max_k = *std::max_element(config.ks.begin(), config.ks.end());

    BenchResult result;
    MatchWorkspace<float> ws;
    for (std::size_t n : config.locations) {
        std::vector<std::vector<float>> queries, candidates;
        for (std::size_t q = 0; q < config.queries; ++q) queries.push_back(random_unit_grid(n, config.channels, rng));
        for (std::size_t c = 0; c < max_k; ++c) candidates.push_back(random_unit_grid(n, config.channels, rng));
        for (std::size_t k : config.ks) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t sink = 0;
            for (std::size_t r = 0; r < config.repeats; ++r) {
                const auto start = clock::now();
                for (const auto& q : queries) {
                    const GridView<float> qv{q.data(), n, config.channels};
                    for (std::size_t c = 0; c < k; ++c) {
                        sink += rerank_score<float>(qv, {candidates[c].data(), n, config.channels}, ws);
                    }
                }
                const double s = std::chrono::duration<double>(clock::now() - start).count();
                best = std::min(best, s / static_cast<double>(config.queries));
            }
            if (sink == std::numeric_limits<std::size_t>::max()) best += 1.0;  // keeps the loop observable
            result.rows.push_back({k, n, best});
        }
    }

    // Joint least squares on centred logs: [a b; b c] [sk sn]' = [u v]'.
    const double count = static_cast<double>(result.rows.size());
    double mk = 0.0, mn = 0.0, mt = 0.0;
    for (const auto& r : result.rows) {
        mk += std::log(static_cast<double>(r.k));
        mn += std::log(static_cast<double>(r.locations));
        mt += std::log(r.seconds_per_query);
    }
    mk /= count;
    mn /= count;
    mt /= count;
    double a = 0.0, b = 0.0, c = 0.0, u = 0.0, v = 0.0;
    for (const auto& r : result.rows) {
        const double dk = std::log(static_cast<double>(r.k)) - mk;
        const double dn = std::log(static_cast<double>(r.locations)) - mn;
        const double dt = std::log(r.seconds_per_query) - mt;
        a += dk * dk;
        b += dk * dn;
        c += dn * dn;
        u += dk * dt;
        v += dn * dt;
    }
    const double det = a * c - b * b;
    if (det > 0.0) {
        result.slope_k = (c * u - b * v) / det;
        result.slope_locations = (a * v - b * u) / det;
    } else {
        // Only one of the two axes varies.
        result.slope_k = a > 0.0 ? u / a : 0.0;
        result.slope_locations = c > 0.0 ? v / c : 0.0;
    }
    return result;
}

std::string bench_csv(const BenchResult& result) {
    std::ostringstream os;
    os << "k,locations,seconds_per_query\n";
    os.precision(6);
    for (const auto& r : result.rows) os << r.k << ',' << r.locations << ',' << std::scientific << r.seconds_per_query << std::defaultfloat << '\n';
    os << "# slope_k=" << result.slope_k << " slope_locations=" << result.slope_locations << '\n';
    return os.str();
}

}  // namespace tsvpr
