#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsvpr/losses.hpp"
#include "tsvpr/model.hpp"
#include "tsvpr/place_index.hpp"

namespace tsvpr {

struct MiningConfig {
    double positive_radius_m = 10.0;
    double negative_radius_m = 25.0;
    std::size_t negative_pool = 1000;
    std::size_t hard_negatives = 2;

    void validate() const;
};

/// Mining settings sized for the synthetic desk world, which has far fewer than
/// 1000 negatives per query.
MiningConfig desk_mining();

struct Triplet {
    std::size_t query;
    std::size_t positive;
    std::vector<std::size_t> negatives;
};

struct TripletBatch {
    std::vector<Triplet> triplets;
    std::size_t skipped_no_positive = 0;
    std::size_t skipped_small_pool = 0;
};

/// Mines one triplet per entry of `queries` against the whole `tags` set (the query
/// itself excluded). `features[i]` is the current global feature of image i.
/// Negatives are sampled with an rng seeded from (seed, query position).
TripletBatch mine_triplets(std::span<const std::size_t> queries, const std::vector<GeoTag>& tags,
                           const std::vector<std::vector<double>>& features, const MiningConfig& config,
                           std::uint64_t seed);

// ---- optimisation ---------------------------------------------------------

struct AdamConfig {
    double learning_rate = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
};

AdamState init_adam(const ModelParams& params);

/// Updates every tensor outside the frozen groups. Returns false and leaves
/// everything untouched when a tunable gradient is non-finite.
bool adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const AdamConfig& config,
               const FreezePolicy& frozen);

struct ParamReport {
    std::size_t total_params = 0;
    std::size_t tunable_params = 0;
    std::size_t frozen_params = 0;
    std::map<ParamGroup, std::size_t> per_group;
};

ParamReport count_parameters(const ModelParams& params, const FreezePolicy& frozen);
/// Same counts derived from the configuration alone, without allocating weights.
ParamReport count_parameters(const ModelConfig& config, const FreezePolicy& frozen);

std::string param_report_text(const ParamReport& report);

// ---- triplet loss through the model --------------------------------------

struct TripletImages {
    const Tensor* query;
    const Tensor* positive;
    std::vector<const Tensor*> negatives;
};

/// Runs the model on every image of the triplet and evaluates the combined loss.
/// When `grad` is given, parameter gradients scaled by `grad_scale` are added to it.
LossValue triplet_loss(const TripletImages& images, const ModelConfig& config, const ModelParams& params,
                       const LossConfig& loss_config, const FreezePolicy& frozen, ModelParams* grad = nullptr,
                       double grad_scale = 1.0);

/// Sum of triplet_loss over a batch; the probe folds every triplet's selection
/// signature and kink distance together.
LossProbe batch_loss_probe(std::span<const TripletImages> batch, const ModelConfig& config, const ModelParams& params,
                           const LossConfig& loss_config);

struct ModelGradcheckConfig {
    std::size_t coordinates = 240;
    /// Coordinates are spread evenly over these groups (empty groups are skipped).
    std::vector<ParamGroup> groups{ParamGroup::backbone, ParamGroup::adapters, ParamGroup::local_head, ParamGroup::gem};
    GradcheckConfig check;
    std::uint64_t seed = 0;
};

/// Finite-difference check of the parameter gradients of the summed batch loss.
GradcheckReport model_gradcheck(std::span<const TripletImages> batch, const ModelConfig& config, ModelParams& params,
                                const LossConfig& loss_config, const ModelGradcheckConfig& gc);

// ---- training loop --------------------------------------------------------

struct GeoImage {
    std::uint64_t id = 0;
    Tensor image;
    GeoTag tag;
};

struct TrainingData {
    std::vector<GeoImage> train;
    std::vector<GeoImage> val_queries;
    std::vector<GeoImage> val_database;
};

struct TrainConfig {
    double learning_rate = 1e-5;
    std::size_t batch_size = 4;
    std::size_t epoch_queries = 512;
    std::size_t patience_epochs = 3;
    /// Hard cap on epochs in case validation keeps improving.
    std::size_t max_epochs = 50;
    std::uint64_t seed = 0;
    std::optional<FreezePolicy> freeze_policy;  // default_freeze_policy when unset

    void validate(const ModelConfig& model) const;
    FreezePolicy effective_freeze_policy(const ModelConfig& model) const;
};

struct EpochStats {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_r1 = 0.0;
    double val_r5 = 0.0;
    double wall_seconds = 0.0;
    std::size_t triplets = 0;
    std::size_t skipped_queries = 0;
    std::size_t rejected_steps = 0;
};

/// Stops once R@5 has failed to improve (ties included) for `patience` epochs.
class EarlyStopping {
public:
    explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

    /// Returns true when this epoch is the new best.
    bool update(double metric);
    bool should_stop() const { return stale_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t stale_ = 0;
    double best_ = 0.0;
    bool any_ = false;
};

struct TrainResult {
    ModelParams params;  // best-R@5 checkpoint
    std::vector<EpochStats> history;
    std::size_t best_epoch = 0;
};

/// Global-only validation recall (R@1, R@5) of `params`.
std::pair<double, double> validation_recall(const TrainingData& data, const ModelConfig& config,
                                            const ModelParams& params);

TrainResult train(const ModelConfig& config, ModelParams params, const TrainingData& data, const TrainConfig& train_config,
                  const MiningConfig& mining, const LossConfig& loss_config,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

std::string history_csv(const std::vector<EpochStats>& history);

}  // namespace tsvpr
