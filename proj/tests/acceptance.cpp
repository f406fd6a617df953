// Acceptance suite. Each criterion prints one PASS/FAIL line; the exit status is
// non-zero when any selected criterion fails.
//
//   acceptance                 run all nine
//   acceptance --criterion 6   run one

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsvpr/bench.hpp"
#include "tsvpr/losses.hpp"
#include "tsvpr/matcher.hpp"
#include "tsvpr/model.hpp"
#include "tsvpr/pipeline.hpp"
#include "tsvpr/synth.hpp"
#include "tsvpr/trainer.hpp"

using namespace tsvpr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string shape(const Tensor& t) { return t.shape_string(); }

Tensor random_image(std::size_t side, Rng& rng) {
    Tensor im({side, side, 3});
    fill_uniform(im, -1.0, 1.0, rng);
    return im;
}

// ---- 1 ---------------------------------------------------------------------

Outcome shape_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig c = paper_model();
    const ModelParams p = init_model(c, 1);
    Rng rng(2);
    const ImageFeatures f = extract_features(random_image(224, rng), c, p);
    const double t = seconds_since(t0);
    const bool fm_ok = f.feature_map.shape() == std::vector<std::size_t>{16, 16, 1024};
    const bool local_ok = f.local.shape() == std::vector<std::size_t>{61, 61, 128};
    return {fm_ok && local_ok && f.global.size() == 1024 && t < 60.0,
            "fm " + shape(f.feature_map) + ", local " + shape(f.local) + fmt(", %.1f s (limit 60)", t)};
}

// ---- 2 ---------------------------------------------------------------------

Outcome zero_init_identity() {
    ModelConfig adapted = desk_model();
    adapted.backbone.adapter_mode = AdapterMode::both;
    const ModelParams p = init_model(adapted, 3);

    // Same frozen weights with the adapters removed.
    BackboneConfig plain_cfg = adapted.backbone;
    plain_cfg.adapter_mode = AdapterMode::none;
    BackboneParams plain = p.backbone;
    for (auto& b : plain.blocks) {
        b.serial_adapter.reset();
        b.parallel_adapter.reset();
    }

    Rng rng(4);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
        const Tensor im = random_image(adapted.backbone.image_size, rng);
        const BackboneOutput a = backbone_forward(im, adapted.backbone, p.backbone);
        const BackboneOutput b = backbone_forward(im, plain_cfg, plain);
        worst = std::max({worst, max_abs_diff(a.feature_map, b.feature_map), max_abs_diff(a.class_token, b.class_token)});
    }
    return {worst < 1e-12, fmt("max abs diff %.3g over 10 inputs (limit 1e-12)", worst)};
}

// ---- 3 ---------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    const ModelConfig c = desk_model();
    ModelParams p = init_model(c, 5);
    // Non-zero up-projections so every adapter weight carries gradient.
    Rng prng(6);
    for (auto& b : p.backbone.blocks) {
        fill_normal(b.serial_adapter->up.weight, 0.02, prng);
        fill_normal(b.parallel_adapter->up.weight, 0.02, prng);
    }
    Rng rng(7);
    std::vector<Tensor> images;
    for (int i = 0; i < 8; ++i) images.push_back(random_image(c.backbone.image_size, rng));
    std::vector<TripletImages> batch;
    for (int t = 0; t < 2; ++t) batch.push_back({&images[4 * t], &images[4 * t + 1], {&images[4 * t + 2], &images[4 * t + 3]}});

    LossConfig lc;
    lc.margin = 0.5;
    ModelGradcheckConfig gc;
    gc.coordinates = 320;
    gc.seed = 8;
    const GradcheckReport r = model_gradcheck(batch, c, p, lc, gc);
    const double t = seconds_since(t0);
    return {r.checked >= 200 && r.max_rel_error < 1e-4 && t < 300.0,
            fmt("%zu coordinates checked (%zu skipped at kinks or match changes), max rel error %.3g, %.1f s", r.checked,
                r.skipped, r.max_rel_error, t)};
}

// ---- 4 ---------------------------------------------------------------------

MatchSet double_argmax_oracle(const SimilarityMatrix<double>& s) {
    MatchSet out;
    for (std::size_t u = 0; u < s.rows; ++u) {
        std::size_t best_v = 0;
        for (std::size_t j = 1; j < s.cols; ++j)
            if (s.at(u, j) > s.at(u, best_v)) best_v = j;
        std::size_t best_u = 0;
        for (std::size_t i = 1; i < s.rows; ++i)
            if (s.at(i, best_v) > s.at(best_u, best_v)) best_u = i;
        if (best_u == u) out.push_back({static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(best_v), s.at(u, best_v)});
    }
    return out;
}

Outcome matcher_oracle() {
    Rng rng(9);
    std::uniform_int_distribution<std::size_t> dim(1, 16);
    std::uniform_int_distribution<int> coarse(-2, 2);
    std::normal_distribution<double> fine;
    std::size_t mismatches = 0, with_ties = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        SimilarityMatrix<double> s;
        s.rows = dim(rng);
        s.cols = dim(rng);
        const bool ties = trial % 2 == 0;
        with_ties += ties;
        for (std::size_t i = 0; i < s.rows * s.cols; ++i) s.values.push_back(ties ? coarse(rng) : fine(rng));
        const MatchSet got = mutual_nn_matches(s);
        const MatchSet want = double_argmax_oracle(s);
        bool same = got.size() == want.size();
        for (std::size_t i = 0; same && i < got.size(); ++i) {
            same = got[i].query == want[i].query && got[i].candidate == want[i].candidate;
        }
        if (!same) ++mismatches;
    }
    return {mismatches == 0, fmt("%zu/1000 mismatches (%zu matrices with integer ties)", mismatches, with_ties)};
}

// ---- 5 and 6 share the desk experiment ------------------------------------

constexpr std::uint64_t kWorldSeed = 7;
constexpr std::uint64_t kModelSeed = 1;
constexpr std::uint64_t kTrainSeed = 3;

struct DeskRun {
    SynthWorld world;
    std::string manifest;
    ModelConfig config;
    ModelParams initial;
    TrainResult trained;
};

DeskRun desk_training_run(const fs::path& dir) {
    DeskRun r;
    SynthWorldConfig sc;
    sc.seed = kWorldSeed;
    r.world = generate_synth_world(sc);
    r.manifest = write_synth_world(r.world, dir.string());
    r.config = desk_model();
    r.initial = init_model(r.config, kModelSeed);
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.epoch_queries = 512;
    tc.max_epochs = 10;
    tc.seed = kTrainSeed;
    const TrainingData data = load_training_data(r.manifest, r.world.entries);
    r.trained = train(r.config, r.initial, data, tc, desk_mining(), {}, [](const EpochStats& e) {
        std::fprintf(stderr, "  epoch %zu loss %.4f val R@1 %.1f R@5 %.1f (%.0f s)\n", e.epoch, e.train_loss, e.val_r1,
                     e.val_r5, e.wall_seconds);
    });
    return r;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tsvpr_acceptance_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Outcome freezing() {
    const fs::path dir = scratch("c5");
    const DeskRun run = desk_training_run(dir);
    const FreezePolicy frozen = default_freeze_policy(run.config);
    const auto before = param_refs(run.initial);
    const auto after = param_refs(run.trained.params);
    std::size_t frozen_tensors = 0, changed_frozen = 0, moved_tunable = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
        const auto& a = before[i].tensor->values();
        const auto& b = after[i].tensor->values();
        const bool identical = std::equal(a.begin(), a.end(), b.begin(), b.end(), [](double x, double y) {
            return std::memcmp(&x, &y, sizeof x) == 0;
        });
        if (frozen.contains(before[i].group)) {
            ++frozen_tensors;
            if (!identical) ++changed_frozen;
        } else if (!identical) {
            ++moved_tunable;
        }
    }
    fs::remove_all(dir);

    const ModelConfig paper = paper_model();
    const ParamReport pr = count_parameters(paper, default_freeze_policy(paper));
    const double ratio = static_cast<double>(pr.tunable_params) / static_cast<double>(pr.total_params);
    const double reference = 53.0 / 304.0;
    const bool ratio_ok = std::abs(ratio / reference - 1.0) <= 0.2;
    return {changed_frozen == 0 && moved_tunable > 0 && ratio_ok,
            fmt("%zu/%zu frozen tensors changed after %zu epochs (%zu tunable tensors moved); paper-preset "
                "tunable/total %.1fM/%.1fM = %.3f vs reference %.3f (%+.1f%%)",
                changed_frozen, frozen_tensors, run.trained.history.size(), moved_tunable, pr.tunable_params / 1e6,
                pr.total_params / 1e6, ratio, reference, 100.0 * (ratio / reference - 1.0))};
}

struct SplitRecall {
    double global = 0.0;
    double dense = 0.0;
    double patches = 0.0;
};

double r_at_1(const PlaceIndex& db, const std::vector<PlaceRecord>& q, RerankMode mode) {
    const std::size_t ns[] = {1};
    return evaluate_results(db, q, run_queries(db, q, 20, mode, Precision::f32), {}, ns)[0].recall_percent;
}

std::pair<double, SplitRecall> desk_recalls(const DeskRun& run, const ModelParams& params) {
    const auto records = extract_records(run.manifest, run.world.entries, run.config, params, true);
    const PlaceIndex all = make_index(records);
    const PlaceIndex db = make_index(select_split(all, run.world.entries, Split::database));
    const auto queries = select_split(all, run.world.entries, Split::query);
    const auto aliased = select_split(all, run.world.entries, Split::query, true);
    SplitRecall s{r_at_1(db, aliased, RerankMode::none), r_at_1(db, aliased, RerankMode::dense_local),
                  r_at_1(db, aliased, RerankMode::backbone_patches)};
    return {r_at_1(db, queries, RerankMode::none), s};
}

Outcome desk_experiment() {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = scratch("c6");
    const DeskRun run = desk_training_run(dir);
    const auto [untrained, untrained_alias] = desk_recalls(run, run.initial);
    const auto [trained, alias] = desk_recalls(run, run.trained.params);
    fs::remove_all(dir);
    const double t = seconds_since(t0);
    const bool a = trained - untrained >= 20.0;
    const bool b = alias.dense > alias.global;
    const bool c = alias.patches <= alias.dense;
    return {a && b && c && t < 900.0,
            fmt("(a) global R@1 %.1f -> %.1f (%+.1f pp, need +20) %s; (b) aliasing split R@1 dense %.1f vs global %.1f "
                "%s; (c) patches %.1f <= dense %.1f %s; untrained aliasing global/dense/patches %.1f/%.1f/%.1f; "
                "best epoch %zu of %zu; %.0f s (limit 900)",
                untrained, trained, trained - untrained, a ? "ok" : "FAIL", alias.dense, alias.global, b ? "ok" : "FAIL",
                alias.patches, alias.dense, c ? "ok" : "FAIL", untrained_alias.global, untrained_alias.dense,
                untrained_alias.patches, run.trained.best_epoch, run.trained.history.size(), t)};
}

// ---- 7 ---------------------------------------------------------------------

// Source files that could host a verification stage.
bool source_mentions_verification(std::string& where) {
    const fs::path root = TSVPR_SOURCE_DIR;
    const char* tokens[] = {"ransac", "homography", "inlier", "fundamental_matrix", "essential_matrix"};
    for (const char* sub : {"src", "include", "tools"}) {
        for (const auto& e : fs::recursive_directory_iterator(root / sub)) {
            if (!e.is_regular_file()) continue;
            std::ifstream in(e.path());
            std::stringstream ss;
            ss << in.rdbuf();
            std::string text = ss.str();
            for (char& ch : text) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            for (const char* tok : tokens) {
                if (text.find(tok) != std::string::npos) {
                    where = e.path().string() + ": " + tok;
                    return true;
                }
            }
        }
    }
    return false;
}

// The final score of every candidate must be the raw mutual-match count.
bool scores_are_raw_match_counts() {
    Rng rng(10);
    auto grid = [&](std::size_t side) {
        Tensor t({side, side, 16});
        fill_normal(t, 1.0, rng);
        const Tensor n = ops::intra_l2(t);
        return LocalGrid{side, side, 16, std::vector<float>(n.values().begin(), n.values().end())};
    };
    PlaceIndex idx(8, 6, 6, 16);
    for (std::uint64_t id = 0; id < 30; ++id) {
        PlaceRecord r;
        r.id = id;
        Tensor g({8});
        fill_normal(g, 1.0, rng);
        const auto u = ops::l2_normalize(g.values());
        r.global.assign(u.begin(), u.end());
        r.local = grid(6);
        idx.add(std::move(r));
    }
    PlaceRecord q = idx[0];
    q.id = 999;
    q.local = grid(6);
    const QueryResult res = two_stage_query(idx, q, 30);
    for (const auto& c : res.final_order) {
        if (c.rerank_score != rerank_score(q.local.view(), idx[c.position].local.view())) return false;
    }
    return true;
}

Outcome rerank_scaling() {
    BenchConfig bc;
    bc.seed = 11;
    const BenchResult r = benchmark_rerank(bc);
    const bool k_ok = std::abs(r.slope_k - 1.0) <= 0.2;
    const bool n_ok = std::abs(r.slope_locations - 2.0) <= 0.3;
    std::string where;
    const bool clean = !source_mentions_verification(where);
    const bool raw = scores_are_raw_match_counts();
    return {k_ok && n_ok && clean && raw,
            fmt("slope in k %.3f (1.0 +/- 0.2), slope in N' %.3f (2.0 +/- 0.3); verification stage: %s; scores equal raw "
                "match counts: %s",
                r.slope_k, r.slope_locations, clean ? "none found" : where.c_str(), raw ? "yes" : "no")};
}

// ---- 8 ---------------------------------------------------------------------

Outcome evaluation_protocol() {
    const double m_per_deg = kEarthRadiusM * std::numbers::pi / 180.0;
    auto at = [&](double north_m, std::optional<double> heading) {
        return GeoTag{47.0 + north_m / m_per_deg, 8.0, heading};
    };
    const std::vector<GeoTag> queries{at(0, 10.0), at(0, 350.0), at(0, std::nullopt), at(0, 90.0), at(0, 0.0)};
    const std::vector<std::vector<GeoTag>> retrieved{
        // q0: 24.9 m / 30 deg at rank 1.
        {at(24.9, 40.0), at(500, 10.0), at(500, 10.0)},
        // q1: rank 1 is 10 m but 50 deg off (across north); rank 2 is 25.1 m; rank 3 is 5 m and 30 deg off.
        {at(10, 40.0), at(25.1, 350.0), at(5, 20.0)},
        // q2: no query heading, so only distance counts; first within 25 m at rank 2.
        {at(30, 0.0), at(20, 200.0), at(0, 0.0)},
        // q3: candidate heading missing at rank 1 (distance only); all others wrong.
        {at(3, std::nullopt), at(100, 90.0), at(100, 90.0)},
        // q4: nothing within 25 m.
        {at(26, 0.0), at(40, 0.0), at(1000, 0.0)}};
    const std::size_t ns[] = {1, 2, 3};

    // Hand-enumerated first-correct ranks.
    //   25 m only:        q0 1, q1 1, q2 2, q3 1, q4 none  -> R@1 60, R@2 80, R@3 80
    //   25 m and 40 deg:  q0 1, q1 3, q2 2, q3 1, q4 none  -> R@1 40, R@2 60, R@3 80
    const double want_dist[] = {60.0, 80.0, 80.0};
    const double want_both[] = {40.0, 60.0, 80.0};
    const auto dist_only = recall_at_n(retrieved, queries, {25.0, std::nullopt}, ns);
    const auto both = recall_at_n(retrieved, queries, {25.0, 40.0}, ns);
    bool ok = true;
    for (int i = 0; i < 3; ++i) ok = ok && dist_only[i].recall_percent == want_dist[i] && both[i].recall_percent == want_both[i];

    // Boundary cases of the thresholds themselves.
    ok = ok && is_correct(at(0, 0.0), at(24.99, 0.0), {}) && !is_correct(at(0, 0.0), at(25.01, 0.0), {});
    ok = ok && is_correct(at(0, 0.0), at(0, 40.0), {25.0, 40.0}) && !is_correct(at(0, 0.0), at(0, 40.5), {25.0, 40.0});
    return {ok, fmt("distance-only R@1/2/3 %.0f/%.0f/%.0f, with heading %.0f/%.0f/%.0f; threshold boundaries honoured",
                    dist_only[0].recall_percent, dist_only[1].recall_percent, dist_only[2].recall_percent,
                    both[0].recall_percent, both[1].recall_percent, both[2].recall_percent)};
}

// ---- 9 ---------------------------------------------------------------------

int cli(const std::string& args) {
    const std::string cmd = std::string(TSVPR_CLI_PATH) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism() {
    std::vector<std::string> csvs;
    for (int run = 0; run < 2; ++run) {
        const fs::path d = scratch("c9_" + std::to_string(run));
        const std::string m = (d / "world" / "manifest.jsonl").string();
        const std::string q = "--index " + (d / "db.svpr").string() + " --queries " + (d / "feat.svpr").string() +
                              " --manifest " + m;
        const bool ok = cli("--seed 13 synth -o " + (d / "world").string()) == 0 &&
                        cli("--seed 13 extract --manifest " + m + " -o " + (d / "feat.svpr").string()) == 0 &&
                        cli("index --features " + (d / "feat.svpr").string() + " --manifest " + m + " -o " +
                            (d / "db.svpr").string()) == 0 &&
                        cli("evaluate " + q + " --k 20 -o " + (d / "recall.csv").string()) == 0 &&
                        cli("query " + q + " --k 20 -o " + (d / "ranked.csv").string()) == 0;
        if (!ok) return {false, "pipeline command failed on run " + std::to_string(run + 1)};
        csvs.push_back(slurp(d / "recall.csv") + slurp(d / "ranked.csv"));
        fs::remove_all(d);
    }
    const bool same = csvs[0] == csvs[1] && !csvs[0].empty();
    return {same, fmt("recall and ranking CSVs %s across two runs (%zu bytes)", same ? "byte-identical" : "DIFFER",
                      csvs[0].size())};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance checks"};
    int only = 0;
    app.add_option("--criterion", only, "Run one criterion (1-9)")->check(CLI::Range(1, 9));
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"shape fidelity at paper scale", shape_fidelity},
        {"zero-init identity", zero_init_identity},
        {"gradient correctness", gradient_correctness},
        {"matcher oracle equivalence", matcher_oracle},
        {"freezing and parameter ratio", freezing},
        {"end-to-end desk experiment", desk_experiment},
        {"re-rank cost scaling", rerank_scaling},
        {"evaluation protocol", evaluation_protocol},
        {"determinism", determinism},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only != 0 && static_cast<std::size_t>(only) != i + 1) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %zu %s: %s | %s\n", i + 1, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
