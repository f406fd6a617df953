#include "tsvpr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tsvpr/rng.hpp"

namespace tsvpr {

void MiningConfig::validate() const {
    if (!(positive_radius_m > 0.0) || !(positive_radius_m < negative_radius_m)) {
        throw std::invalid_argument("mining config: need 0 < positive radius < negative radius");
    }
    if (hard_negatives == 0) throw std::invalid_argument("mining config: need at least one hard negative");
    if (negative_pool < hard_negatives) throw std::invalid_argument("mining config: negative pool smaller than hard negatives");
}

MiningConfig desk_mining() {
    MiningConfig m;
    m.negative_pool = 64;
    return m;
}

namespace {

double feature_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(sq);
}

double geo_distance(const GeoTag& a, const GeoTag& b) { return haversine_m(a.lat, a.lon, b.lat, b.lon); }

}  // namespace

TripletBatch mine_triplets(std::span<const std::size_t> queries, const std::vector<GeoTag>& tags,
                           const std::vector<std::vector<double>>& features, const MiningConfig& config,
                           std::uint64_t seed) {
    config.validate();
    if (tags.size() != features.size()) throw std::invalid_argument("mine_triplets: tag/feature count mismatch");
    TripletBatch batch;
    std::vector<std::size_t> negatives;
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const std::size_t q = queries[qi];
        if (q >= tags.size()) throw std::out_of_range("mine_triplets: query index out of range");

        std::optional<std::size_t> positive;
        double best = 0.0;
        negatives.clear();
        for (std::size_t i = 0; i < tags.size(); ++i) {
            if (i == q) continue;
            const double geo = geo_distance(tags[q], tags[i]);
            if (geo <= config.positive_radius_m) {
                const double d = feature_distance(features[q], features[i]);
                if (!positive || d < best) {
                    positive = i;
                    best = d;
                }
            } else if (geo > config.negative_radius_m) {
                negatives.push_back(i);
            }
        }
        if (!positive) {
            ++batch.skipped_no_positive;
            continue;
        }
        if (negatives.size() < config.negative_pool) {
            ++batch.skipped_small_pool;
            continue;
        }

        // Partial Fisher-Yates: the first negative_pool entries become the sample.
        Rng rng(derive_seed(seed, qi));
        for (std::size_t i = 0; i < config.negative_pool; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, negatives.size() - 1);
            std::swap(negatives[i], negatives[pick(rng)]);
        }
        std::vector<std::pair<double, std::size_t>> pool;
        pool.reserve(config.negative_pool);
        for (std::size_t i = 0; i < config.negative_pool; ++i) {
            pool.emplace_back(feature_distance(features[q], features[negatives[i]]), negatives[i]);
        }
        std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(config.hard_negatives), pool.end());

        Triplet t{q, *positive, {}};
        for (std::size_t j = 0; j < config.hard_negatives; ++j) t.negatives.push_back(pool[j].second);

        if (geo_distance(tags[q], tags[t.positive]) > config.positive_radius_m) {
            throw std::logic_error("mine_triplets: positive outside the positive radius");
        }
        for (std::size_t n : t.negatives) {
            if (geo_distance(tags[q], tags[n]) <= config.negative_radius_m) {
                throw std::logic_error("mine_triplets: negative inside the negative radius");
            }
        }
        batch.triplets.push_back(std::move(t));
    }
    return batch;
}

// ---- optimisation ---------------------------------------------------------

AdamState init_adam(const ModelParams& params) {
    AdamState s;
    for (const auto& ref : param_refs(params)) {
        s.m.push_back(Tensor::zeros_like(*ref.tensor));
        s.v.push_back(Tensor::zeros_like(*ref.tensor));
    }
    return s;
}

bool adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, const AdamConfig& config,
               const FreezePolicy& frozen) {
    auto p = param_refs(params);
    const auto g = param_refs(grads);
    if (p.size() != g.size() || p.size() != state.m.size()) throw std::invalid_argument("adam_step: parameter layout mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (!p[i].tensor->same_shape(*g[i].tensor)) throw std::invalid_argument("adam_step: shape mismatch for " + p[i].name);
        if (!frozen.contains(p[i].group) && !g[i].tensor->all_finite()) return false;
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (frozen.contains(p[i].group)) continue;
        Tensor& w = *p[i].tensor;
        const Tensor& gr = *g[i].tensor;
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gr[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gr[j] * gr[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            w[j] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.eps);
        }
    }
    return true;
}

namespace {

void finish_report(ParamReport& r, const FreezePolicy& frozen) {
    for (const auto& [group, n] : r.per_group) {
        r.total_params += n;
        (frozen.contains(group) ? r.frozen_params : r.tunable_params) += n;
    }
}

}  // namespace

ParamReport count_parameters(const ModelParams& params, const FreezePolicy& frozen) {
    ParamReport r;
    // Every group gets a row, even when it holds nothing (no adapters).
    for (ParamGroup g : {ParamGroup::backbone, ParamGroup::adapters, ParamGroup::local_head, ParamGroup::gem}) r.per_group[g] = 0;
    for (const auto& ref : param_refs(params)) r.per_group[ref.group] += ref.tensor->size();
    finish_report(r, frozen);
    return r;
}

ParamReport count_parameters(const ModelConfig& config, const FreezePolicy& frozen) {
    config.validate();
    const auto& b = config.backbone;
    const std::size_t d = b.embed_dim;
    auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };

    std::size_t base = linear(b.patch_dim(), d) + d + (b.num_patches() + 1) * d + 2 * d;
    const std::size_t block = 2 * d + 4 * linear(d, d) + 2 * d + linear(d, b.mlp_width()) + linear(b.mlp_width(), d);
    base += b.num_blocks * block;
    const std::size_t adapter = linear(d, b.adapter_width()) + linear(b.adapter_width(), d);
    const std::size_t per_block_adapters =
        (has_serial(b.adapter_mode) ? adapter : 0) + (has_parallel(b.adapter_mode) ? adapter : 0);
    const auto& h = config.heads;
    const std::size_t k2 = h.kernel * h.kernel;
    const std::size_t head = k2 * d * h.local_mid_channels + h.local_mid_channels +
                             k2 * h.local_mid_channels * h.local_out_channels + h.local_out_channels;

    ParamReport r;
    r.per_group[ParamGroup::backbone] = base;
    r.per_group[ParamGroup::adapters] = b.num_blocks * per_block_adapters;
    r.per_group[ParamGroup::local_head] = head;
    r.per_group[ParamGroup::gem] = 1;
    finish_report(r, frozen);
    return r;
}

std::string param_report_text(const ParamReport& report) {
    std::ostringstream os;
    os << "group,params\n";
    for (const auto& [group, n] : report.per_group) os << to_string(group) << ',' << n << '\n';
    os << "total," << report.total_params << '\n';
    os << "tunable," << report.tunable_params << '\n';
    os << "frozen," << report.frozen_params << '\n';
    return os.str();
}

// ---- triplet loss through the model --------------------------------------

LossValue triplet_loss(const TripletImages& images, const ModelConfig& config, const ModelParams& params,
                       const LossConfig& loss_config, const FreezePolicy& frozen, ModelParams* grad,
                       double grad_scale) {
    loss_config.validate();
    std::vector<const Tensor*> all{images.query, images.positive};
    all.insert(all.end(), images.negatives.begin(), images.negatives.end());
    std::vector<ModelCache> caches(all.size());
    std::vector<ImageFeatures> feats;
    feats.reserve(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        feats.push_back(grad ? forward_train(*all[i], config, params, caches[i])
                             : extract_features(*all[i], config, params, true));
    }

    TripletView view{feats[0].global, feats[1].global, {}, grid_view(feats[0].local), grid_view(feats[1].local), {}};
    for (std::size_t i = 2; i < feats.size(); ++i) {
        view.negative_globals.emplace_back(feats[i].global);
        view.negative_locals.push_back(grid_view(feats[i].local));
    }
    if (!grad) return combined_loss(view, loss_config);

    LossGradients lg;
    const LossValue value = combined_loss(view, loss_config, &lg);
    auto run = [&](std::size_t i, std::vector<double>& d_global, const Tensor& d_local) {
        for (double& x : d_global) x *= grad_scale;
        Tensor dl = d_local.reshaped(feats[i].local.shape());
        for (double& x : dl.values()) x *= grad_scale;
        backward(d_global, dl, config, params, caches[i], feats[i], *grad, frozen);
    };
    run(0, lg.query_global, lg.query_local);
    run(1, lg.positive_global, lg.positive_local);
    for (std::size_t j = 0; j < images.negatives.size(); ++j) run(2 + j, lg.negative_globals[j], lg.negative_locals[j]);
    return value;
}

LossProbe batch_loss_probe(std::span<const TripletImages> batch, const ModelConfig& config, const ModelParams& params,
                           const LossConfig& loss_config) {
    LossProbe probe;
    probe.kink_distance = std::numeric_limits<double>::infinity();
    std::uint64_t sig = 0;
    for (const auto& t : batch) {
        const LossValue v = triplet_loss(t, config, params, loss_config, {});
        probe.value += v.total;
        sig = sig * 1099511628211ull + v.selection_signature;
        probe.kink_distance = std::min(probe.kink_distance, v.kink_distance());
    }
    probe.signature = sig;
    return probe;
}

GradcheckReport model_gradcheck(std::span<const TripletImages> batch, const ModelConfig& config, ModelParams& params,
                                const LossConfig& loss_config, const ModelGradcheckConfig& gc) {
    if (batch.empty()) throw std::invalid_argument("gradcheck: empty batch");
    ModelParams grad = zeros_like(params);
    for (const auto& t : batch) triplet_loss(t, config, params, loss_config, {}, &grad);

    auto refs = param_refs(params);
    const auto grefs = param_refs(grad);
    std::vector<ParamGroup> groups;
    for (ParamGroup g : gc.groups) {
        for (const auto& r : refs) {
            if (r.group == g && r.tensor->size() > 0) {
                groups.push_back(g);
                break;
            }
        }
    }
    if (groups.empty()) throw std::invalid_argument("gradcheck: no parameters in the requested groups");

    // Flat (tensor, offset) list per group, sampled uniformly with replacement.
    Rng rng(derive_seed(gc.seed, 31));
    std::vector<double*> coords;
    std::vector<double> analytic;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        std::vector<std::size_t> tensors;
        std::size_t total = 0;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (refs[i].group == groups[gi]) {
                tensors.push_back(i);
                total += refs[i].tensor->size();
            }
        }
        const std::size_t share = gc.coordinates / groups.size() + (gi < gc.coordinates % groups.size() ? 1 : 0);
        std::uniform_int_distribution<std::size_t> pick(0, total - 1);
        for (std::size_t n = 0; n < share; ++n) {
            std::size_t flat = pick(rng);
            for (std::size_t i : tensors) {
                if (flat < refs[i].tensor->size()) {
                    coords.push_back(refs[i].tensor->data() + flat);
                    analytic.push_back((*grefs[i].tensor)[flat]);
                    break;
                }
                flat -= refs[i].tensor->size();
            }
        }
    }
    return finite_diff_gradcheck([&] { return batch_loss_probe(batch, config, params, loss_config); }, coords, analytic,
                                 gc.check);
}

// ---- training loop --------------------------------------------------------

void TrainConfig::validate(const ModelConfig& model) const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("train config: learning rate must be non-negative");
    if (batch_size == 0 || epoch_queries == 0 || patience_epochs == 0 || max_epochs == 0) {
        throw std::invalid_argument("train config: batch size, epoch queries, patience and max epochs must be positive");
    }
    if (model.backbone.adapter_mode != AdapterMode::none && !effective_freeze_policy(model).contains(ParamGroup::backbone)) {
        throw std::invalid_argument("train config: the backbone must stay frozen when adapters are present");
    }
}

FreezePolicy TrainConfig::effective_freeze_policy(const ModelConfig& model) const {
    return freeze_policy ? *freeze_policy : default_freeze_policy(model);
}

bool EarlyStopping::update(double metric) {
    ++epoch_;
    if (!any_ || metric > best_) {
        any_ = true;
        best_ = metric;
        best_epoch_ = epoch_;
        stale_ = 0;
        return true;
    }
    ++stale_;
    return false;
}

namespace {

PlaceIndex global_only_index(const std::vector<GeoImage>& images, const std::vector<std::vector<double>>& feats) {
    PlaceIndex index(feats.empty() ? 0 : feats[0].size(), 0, 0, 0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        PlaceRecord r;
        r.id = images[i].id;
        r.global.assign(feats[i].begin(), feats[i].end());
        r.lat = images[i].tag.lat;
        r.lon = images[i].tag.lon;
        r.heading = images[i].tag.heading;
        index.add(std::move(r));
    }
    return index;
}

std::vector<std::vector<double>> global_features(const std::vector<GeoImage>& images, const ModelConfig& config,
                                                 const ModelParams& params) {
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    for (const auto& im : images) out.push_back(extract_features(im.image, config, params, false).global);
    return out;
}

}  // namespace

std::pair<double, double> validation_recall(const TrainingData& data, const ModelConfig& config,
                                            const ModelParams& params) {
    if (data.val_queries.empty() || data.val_database.empty()) throw std::invalid_argument("validation: empty split");
    const auto db = global_features(data.val_database, config, params);
    const auto qs = global_features(data.val_queries, config, params);
    const PlaceIndex index = global_only_index(data.val_database, db);
    std::vector<std::vector<GeoTag>> retrieved;
    std::vector<GeoTag> tags;
    for (std::size_t q = 0; q < qs.size(); ++q) {
        const std::vector<float> g(qs[q].begin(), qs[q].end());
        const auto hits = global_search(index, g, 5);
        std::vector<GeoTag> row;
        for (const auto& h : hits.hits) row.push_back(data.val_database[h.position].tag);
        retrieved.push_back(std::move(row));
        tags.push_back(data.val_queries[q].tag);
    }
    const std::size_t ns[] = {1, 5};
    const auto r = recall_at_n(retrieved, tags, MatchThresholds{}, ns);
    return {r[0].recall_percent, r[1].recall_percent};
}

TrainResult train(const ModelConfig& config, ModelParams params, const TrainingData& data, const TrainConfig& tc,
                  const MiningConfig& mining, const LossConfig& loss_config,
                  const std::function<void(const EpochStats&)>& on_epoch) {
    config.validate();
    tc.validate(config);
    mining.validate();
    loss_config.validate();
    if (data.train.empty()) throw std::invalid_argument("train: empty training set");
    if (mining.hard_negatives != loss_config.hard_negatives) {
        throw std::invalid_argument("train: mining and loss disagree on the number of hard negatives");
    }
    const FreezePolicy frozen = tc.effective_freeze_policy(config);
    const AdamConfig adam{tc.learning_rate};
    AdamState state = init_adam(params);

    std::vector<GeoTag> tags;
    for (const auto& im : data.train) tags.push_back(im.tag);

    const auto start = std::chrono::steady_clock::now();
    EarlyStopping stopper(tc.patience_epochs);
    TrainResult result;
    result.params = params;

    std::vector<std::size_t> order(data.train.size());
    for (std::size_t epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        const std::uint64_t epoch_seed = derive_seed(tc.seed, epoch);
        const auto feats = global_features(data.train, config, params);

        // Cycle through reshuffled passes of the training set until epoch_queries are drawn.
        std::vector<std::size_t> queries;
        Rng order_rng(derive_seed(epoch_seed, 0));
        while (queries.size() < tc.epoch_queries) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size(); i > 1; --i) {
                std::uniform_int_distribution<std::size_t> pick(0, i - 1);
                std::swap(order[i - 1], order[pick(order_rng)]);
            }
            const std::size_t take = std::min(order.size(), tc.epoch_queries - queries.size());
            queries.insert(queries.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
        }
        const TripletBatch mined = mine_triplets(queries, tags, feats, mining, derive_seed(epoch_seed, 1));
        if (mined.triplets.empty()) throw std::runtime_error("train: no usable triplets (every query was skipped)");

        EpochStats stats;
        stats.epoch = epoch;
        stats.triplets = mined.triplets.size();
        stats.skipped_queries = mined.skipped_no_positive + mined.skipped_small_pool;
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < mined.triplets.size(); b += tc.batch_size) {
            const std::size_t end = std::min(mined.triplets.size(), b + tc.batch_size);
            ModelParams grad = zeros_like(params);
            const double scale = 1.0 / static_cast<double>(end - b);
            for (std::size_t t = b; t < end; ++t) {
                const Triplet& tr = mined.triplets[t];
                TripletImages imgs{&data.train[tr.query].image, &data.train[tr.positive].image, {}};
                for (std::size_t n : tr.negatives) imgs.negatives.push_back(&data.train[n].image);
                loss_sum += triplet_loss(imgs, config, params, loss_config, frozen, &grad, scale).total;
            }
            if (!adam_step(params, grad, state, adam, frozen)) ++stats.rejected_steps;
        }
        stats.train_loss = loss_sum / static_cast<double>(mined.triplets.size());
        std::tie(stats.val_r1, stats.val_r5) = validation_recall(data, config, params);
        stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.history.push_back(stats);
        if (stopper.update(stats.val_r5)) {
            result.params = params;
            result.best_epoch = epoch;
        }
        if (on_epoch) on_epoch(stats);
        if (stopper.should_stop()) break;
    }
    return result;
}

std::string history_csv(const std::vector<EpochStats>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,val_r1,val_r5,wall_seconds\n";
    os.setf(std::ios::fixed);
    for (const auto& e : history) {
        os.precision(6);
        os << e.epoch << ',' << e.train_loss << ',';
        os.precision(4);
        os << e.val_r1 << ',' << e.val_r5 << ',';
        os.precision(3);
        os << e.wall_seconds << '\n';
    }
    return os.str();
}

}  // namespace tsvpr
