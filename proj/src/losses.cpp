#include "tsvpr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tsvpr {

void LossConfig::validate() const {
    if (!(margin > 0.0)) throw std::invalid_argument("loss config: margin must be positive");
    if (!(local_weight >= 0.0)) throw std::invalid_argument("loss config: lambda must be non-negative");
    if (hard_negatives == 0) throw std::invalid_argument("loss config: need at least one negative");
}

double hinge(double x) { return x > 0.0 ? x : 0.0; }

namespace {

double distance(std::span<const double> a, std::span<const double> b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sq);
}

void check_triplet(const TripletView& t) {
    if (t.negative_globals.empty() || t.negative_globals.size() != t.negative_locals.size()) {
        throw std::invalid_argument("triplet: need at least one negative with global and local features");
    }
}

// FNV-1a over 64-bit words.
struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void add(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    }
};

// d(mean over M of q(u).c(v)) / dq(u) = c(v) / |M|, and symmetrically for c.
void add_match_gradient(const MatchSet& m, GridView<double> q, GridView<double> c, double coeff, Tensor& dq,
                        Tensor& dc) {
    if (m.empty()) return;
    const double w = coeff / static_cast<double>(m.size());
    const std::size_t ch = q.channels;
    for (const auto& match : m) {
        const double* qu = q.row(match.query);
        const double* cv = c.row(match.candidate);
        double* gq = dq.data() + match.query * ch;
        double* gc = dc.data() + match.candidate * ch;
        for (std::size_t k = 0; k < ch; ++k) {
            gq[k] += w * cv[k];
            gc[k] += w * qu[k];
        }
    }
}

}  // namespace

double global_loss(const TripletView& t, double margin) {
    check_triplet(t);
    const double dp = distance(t.query_global, t.positive_global);
    double total = 0.0;
    for (const auto& n : t.negative_globals) total += hinge(dp + margin - distance(t.query_global, n));
    return total;
}

double mean_match_similarity(GridView<double> q, GridView<double> c, MatchSet* matches) {
    MatchSet m = mutual_nn_matches(similarity_matrix(q, c));
    double sum = 0.0;
    for (const auto& x : m) sum += x.similarity;
    const double mean = m.empty() ? 0.0 : sum / static_cast<double>(m.size());
    if (matches) *matches = std::move(m);
    return mean;
}

double local_loss(const TripletView& t) {
    check_triplet(t);
    const double pos = mean_match_similarity(t.query_local, t.positive_local);
    double total = 0.0;
    for (const auto& n : t.negative_locals) total += hinge(-pos + mean_match_similarity(t.query_local, n));
    return total;
}

double LossValue::kink_distance() const {
    double best = std::numeric_limits<double>::infinity();
    for (double a : hinge_args) best = std::min(best, std::abs(a));
    return best;
}

LossValue combined_loss(const TripletView& t, const LossConfig& config, LossGradients* grads) {
    check_triplet(t);
    const std::size_t negatives = t.negative_globals.size();
    LossValue out;
    Fnv sig;

    // Global triplet terms.
    const double dp = distance(t.query_global, t.positive_global);
    std::vector<double> dn(negatives);
    for (std::size_t j = 0; j < negatives; ++j) {
        dn[j] = distance(t.query_global, t.negative_globals[j]);
        const double arg = dp + config.margin - dn[j];
        out.hinge_args.push_back(arg);
        out.global += hinge(arg);
        sig.add(arg > 0.0 ? 1 : 0);
    }

    // Local mutual-match terms.
    MatchSet pos_matches;
    const double pos_mean = mean_match_similarity(t.query_local, t.positive_local, &pos_matches);
    std::vector<MatchSet> neg_matches(negatives);
    std::vector<double> local_args(negatives);
    for (const auto& m : pos_matches) sig.add((static_cast<std::uint64_t>(m.query) << 32) | m.candidate);
    for (std::size_t j = 0; j < negatives; ++j) {
        const double neg_mean = mean_match_similarity(t.query_local, t.negative_locals[j], &neg_matches[j]);
        local_args[j] = -pos_mean + neg_mean;
        out.hinge_args.push_back(local_args[j]);
        out.local += hinge(local_args[j]);
        sig.add(local_args[j] > 0.0 ? 1 : 0);
        sig.add(0xffffffffull + j);
        for (const auto& m : neg_matches[j]) sig.add((static_cast<std::uint64_t>(m.query) << 32) | m.candidate);
    }
    out.total = out.global + config.local_weight * out.local;
    out.selection_signature = sig.h;
    if (!grads) return out;

    const std::size_t gdim = t.query_global.size();
    grads->query_global.assign(gdim, 0.0);
    grads->positive_global.assign(gdim, 0.0);
    grads->negative_globals.assign(negatives, std::vector<double>(gdim, 0.0));
    for (std::size_t j = 0; j < negatives; ++j) {
        if (!(out.hinge_args[j] > 0.0)) continue;
        for (std::size_t i = 0; i < gdim; ++i) {
            const double up = dp > 0.0 ? (t.query_global[i] - t.positive_global[i]) / dp : 0.0;
            const double un = dn[j] > 0.0 ? (t.query_global[i] - t.negative_globals[j][i]) / dn[j] : 0.0;
            grads->query_global[i] += up - un;
            grads->positive_global[i] -= up;
            grads->negative_globals[j][i] += un;
        }
    }

    const std::size_t ch = t.query_local.channels;
    grads->query_local = Tensor({t.query_local.locations, ch});
    grads->positive_local = Tensor({t.positive_local.locations, ch});
    grads->negative_locals.clear();
    for (std::size_t j = 0; j < negatives; ++j) grads->negative_locals.emplace_back(std::vector<std::size_t>{t.negative_locals[j].locations, ch});
    const double lambda = config.local_weight;
    for (std::size_t j = 0; j < negatives; ++j) {
        if (!(local_args[j] > 0.0) || lambda == 0.0) continue;
        add_match_gradient(pos_matches, t.query_local, t.positive_local, -lambda, grads->query_local,
                           grads->positive_local);
        add_match_gradient(neg_matches[j], t.query_local, t.negative_locals[j], lambda, grads->query_local,
                           grads->negative_locals[j]);
    }
    return out;
}

GradcheckReport finite_diff_gradcheck(const std::function<LossProbe()>& loss, std::span<double* const> coordinates,
                                      std::span<const double> analytic, const GradcheckConfig& config) {
    if (!(config.step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
    if (coordinates.size() != analytic.size()) throw std::invalid_argument("gradcheck: coordinate/gradient count mismatch");
    GradcheckReport report;
    const LossProbe base = loss();
    if (base.kink_distance < config.kink_margin) {
        report.skipped = coordinates.size();
        return report;
    }
    for (std::size_t i = 0; i < coordinates.size(); ++i) {
        double& theta = *coordinates[i];
        const double saved = theta;
        theta = saved + config.step;
        const LossProbe plus = loss();
        theta = saved - config.step;
        const LossProbe minus = loss();
        theta = saved;
        if (!std::isfinite(plus.value) || !std::isfinite(minus.value)) {
            throw std::runtime_error("gradcheck: non-finite loss at a perturbed point");
        }
        if (plus.signature != base.signature || minus.signature != base.signature ||
            plus.kink_distance < config.kink_margin || minus.kink_distance < config.kink_margin) {
            ++report.skipped;
            continue;
        }
        const double numeric = (plus.value - minus.value) / (2.0 * config.step);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), config.denominator_floor});
        const double rel = std::abs(numeric - analytic[i]) / denom;
        report.rel_errors.push_back(rel);
        report.max_rel_error = std::max(report.max_rel_error, rel);
        ++report.checked;
    }
    return report;
}

}  // namespace tsvpr
