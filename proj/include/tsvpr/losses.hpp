#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tsvpr/matcher.hpp"
#include "tsvpr/tensor.hpp"

namespace tsvpr {

struct LossConfig {
    double margin = 0.1;
    double local_weight = 1.0;  // lambda
    std::size_t hard_negatives = 2;

    void validate() const;
};

double hinge(double x);

/// Global and local features of one query/positive/negatives triplet.
struct TripletView {
    std::span<const double> query_global;
    std::span<const double> positive_global;
    std::vector<std::span<const double>> negative_globals;
    GridView<double> query_local;
    GridView<double> positive_local;
    std::vector<GridView<double>> negative_locals;
};

/// sum_j hinge(|q - p| + m - |q - n_j|)
double global_loss(const TripletView& t, double margin);

/// Mean similarity over the mutual matches of (q, c); 0 when there are none.
double mean_match_similarity(GridView<double> q, GridView<double> c, MatchSet* matches = nullptr);

/// sum_j hinge(-mean_sim(q, p) + mean_sim(q, n_j))
double local_loss(const TripletView& t);

struct LossGradients {
    std::vector<double> query_global;
    std::vector<double> positive_global;
    std::vector<std::vector<double>> negative_globals;
    Tensor query_local;  // [locations x channels]
    Tensor positive_local;
    std::vector<Tensor> negative_locals;
};

struct LossValue {
    double global = 0.0;
    double local = 0.0;
    double total = 0.0;
    /// Every hinge argument, global terms first.
    std::vector<double> hinge_args;
    /// Hash of the match sets and the active-hinge pattern.
    std::uint64_t selection_signature = 0;

    /// Distance of the closest hinge argument from its kink at zero.
    double kink_distance() const;
};

/// L_g + lambda * L_l. Gradients (w.r.t. the features) hold the match sets fixed.
LossValue combined_loss(const TripletView& t, const LossConfig& config, LossGradients* grads = nullptr);

// ---- finite-difference verification -------------------------------------

struct GradcheckConfig {
    double step = 1e-5;
    /// Coordinates whose loss has a hinge argument closer than this to zero are skipped.
    double kink_margin = 1e-3;
    /// Floor on the relative-error denominator, for coordinates with ~zero gradient.
    double denominator_floor = 1e-6;
};

/// One loss evaluation as seen by the checker.
struct LossProbe {
    double value = 0.0;
    std::uint64_t signature = 0;
    double kink_distance = 1.0;
};

struct GradcheckReport {
    std::size_t checked = 0;
    std::size_t skipped = 0;
    double max_rel_error = 0.0;
    std::vector<double> rel_errors;  // per checked coordinate
};

/// Central differences on the given coordinates. `coordinates[i]` is perturbed in
/// place (and restored); `analytic[i]` is the gradient being verified.
/// Throws if the loss is non-finite at a perturbed point.
GradcheckReport finite_diff_gradcheck(const std::function<LossProbe()>& loss, std::span<double* const> coordinates,
                                      std::span<const double> analytic, const GradcheckConfig& config = {});

}  // namespace tsvpr
