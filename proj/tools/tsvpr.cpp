// Command-line front end: synthetic world generation, feature extraction,
// indexing, querying, evaluation, training and diagnostics.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsvpr/bench.hpp"
#include "tsvpr/checkpoint.hpp"
#include "tsvpr/heatmap.hpp"
#include "tsvpr/pipeline.hpp"
#include "tsvpr/rng.hpp"
#include "tsvpr/synth.hpp"
#include "tsvpr/trainer.hpp"

using namespace tsvpr;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    std::string precision = "f32";
};

struct ModelFlags {
    std::string preset = "desk";
    std::string adapter_mode;
    std::string global_mode;
    std::size_t local_mid = 0;
    std::size_t local_out = 0;
    std::string checkpoint;

    void add(CLI::App* app, bool with_checkpoint = true) {
        app->add_option("--preset", preset, "Model size: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
        app->add_option("--adapter-mode", adapter_mode, "none, serial_only, parallel_only or both");
        app->add_option("--global-mode", global_mode, "gem or class_token");
        app->add_option("--local-mid", local_mid, "Channels after the first up-convolution");
        app->add_option("--local-out", local_out, "Channels of the dense local grid");
        if (with_checkpoint) app->add_option("--checkpoint", checkpoint, "Weights to load instead of a random init");
    }

    ModelConfig config() const {
        ModelConfig c = preset == "paper" ? paper_model() : desk_model();
        if (!adapter_mode.empty()) c.backbone.adapter_mode = parse_adapter_mode(adapter_mode);
        if (!global_mode.empty()) c.heads.global_mode = parse_global_mode(global_mode);
        if (local_mid) c.heads.local_mid_channels = local_mid;
        if (local_out) c.heads.local_out_channels = local_out;
        c.validate();
        return c;
    }

    Checkpoint load(std::uint64_t seed) const {
        if (!checkpoint.empty()) return load_checkpoint(checkpoint);
        const ModelConfig c = config();
        return {c, init_model(c, seed)};
    }
};

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
    if (!out) throw std::runtime_error("write failed on '" + path + "'");
}

struct QueryFlags {
    std::string index;
    std::string queries;
    std::string manifest;
    std::string split = "query";
    std::size_t k = 100;
    std::string rerank = "dense";
    bool aliased_only = false;
    std::string out;

    void add(CLI::App* app) {
        app->add_option("--index", index, "Database index file")->required();
        app->add_option("--queries", queries, "Feature file holding the query records")->required();
        app->add_option("--manifest", manifest, "Manifest used to select the query split")->required();
        app->add_option("--split", split, "Split to query with")->check(CLI::IsMember({"database", "query", "train", "val"}));
        app->add_option("--k", k, "Candidates re-ranked per query")->check(CLI::PositiveNumber);
        app->add_option("--rerank", rerank, "dense, patches or none")->check(CLI::IsMember({"dense", "patches", "none"}));
        app->add_flag("--aliased-only", aliased_only, "Only queries from places with a perceptual alias");
        app->add_option("-o,--out", out, "Output CSV (stdout when omitted)");
    }

    struct Run {
        PlaceIndex database;
        std::vector<PlaceRecord> queries;
        std::vector<QueryResult> results;
    };

    Run run(Precision precision) const {
        Run r;
        r.database = load_features(index);
        const PlaceIndex all = load_features(queries);
        const auto entries = load_manifest(manifest);
        r.queries = select_split(all, entries, parse_split(split), aliased_only);
        if (r.queries.empty()) throw std::runtime_error("no query records selected");
        r.results = run_queries(r.database, r.queries, k, parse_rerank_mode(rerank), precision);
        return r;
    }
};

std::vector<std::size_t> parse_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t pos = 0;
        const unsigned long v = std::stoul(item, &pos);
        if (pos != item.size() || v == 0) throw std::invalid_argument("bad list element '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty list '" + text + "'");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage visual place recognition toolkit"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Flat key=value file; command-line flags take precedence");
    Globals g;
    app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
    app.add_option("--precision", g.precision, "Matcher arithmetic: f32 or f64")->check(CLI::IsMember({"f32", "f64"}));

    // synth
    SynthWorldConfig sc;
    std::string synth_out = "world";
    auto* synth = app.add_subcommand("synth", "Generate a synthetic place world (PPM images + manifest.jsonl)");
    synth->add_option("-o,--out", synth_out, "Output directory");
    synth->add_option("--places", sc.num_places);
    synth->add_option("--variants", sc.variants_per_place);
    synth->add_option("--spacing-m", sc.place_spacing_m);
    synth->add_option("--landmark-grid", sc.landmark_grid);
    synth->add_option("--image-size", sc.image_size);
    synth->add_option("--brightness", sc.brightness);
    synth->add_option("--noise", sc.noise);
    synth->add_option("--max-shift", sc.max_shift);
    synth->add_option("--aliasing-pairs", sc.aliasing_pairs);

    // extract
    ModelFlags extract_model;
    std::string extract_manifest, extract_out = "features.svpr";
    bool no_patches = false;
    auto* extract = app.add_subcommand("extract", "Compute global and local features for every manifest entry");
    extract->add_option("--manifest", extract_manifest)->required();
    extract->add_option("-o,--out", extract_out, "Feature file (index format)");
    extract->add_flag("--no-patches", no_patches, "Skip the backbone patch grids used by --rerank patches");
    extract_model.add(extract);

    // index
    std::string index_features, index_manifest, index_split = "database", index_out = "index.svpr";
    auto* index = app.add_subcommand("index", "Build a database index from extracted features");
    index->add_option("--features", index_features)->required();
    index->add_option("--manifest", index_manifest)->required();
    index->add_option("--split", index_split)->check(CLI::IsMember({"database", "query", "train", "val"}));
    index->add_option("-o,--out", index_out);

    // query
    QueryFlags qf;
    auto* query = app.add_subcommand("query", "Two-stage retrieval for a batch of queries");
    qf.add(query);

    // evaluate
    QueryFlags ef;
    std::string ns_text = "1,5,10";
    double dist_m = 25.0;
    std::optional<double> heading_deg;
    auto* evaluate = app.add_subcommand("evaluate", "Recall@N table (CSV: N,recall_percent)");
    ef.add(evaluate);
    evaluate->add_option("--n", ns_text, "Comma-separated N values");
    evaluate->add_option("--dist-m", dist_m, "Distance threshold in metres")->check(CLI::PositiveNumber);
    evaluate->add_option("--heading-deg", heading_deg, "Optional heading threshold in degrees");

    // train
    ModelFlags train_model;
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    MiningConfig mining = desk_mining();
    LossConfig lc;
    std::string train_manifest, train_out = "model.ckpt", history_out;
    std::vector<std::string> freeze;
    auto* trn = app.add_subcommand("train", "Fine-tune adapters and the local head with triplet losses");
    trn->add_option("--manifest", train_manifest)->required();
    trn->add_option("-o,--out", train_out, "Checkpoint of the best epoch");
    trn->add_option("--history", history_out, "Per-epoch CSV");
    trn->add_option("--lr", tc.learning_rate)->capture_default_str();
    trn->add_option("--batch-size", tc.batch_size)->capture_default_str();
    trn->add_option("--epoch-queries", tc.epoch_queries)->capture_default_str();
    trn->add_option("--patience", tc.patience_epochs)->capture_default_str();
    trn->add_option("--max-epochs", tc.max_epochs)->capture_default_str();
    trn->add_option("--freeze", freeze, "Frozen groups (backbone, adapters, local_head, gem)");
    trn->add_option("--positive-radius-m", mining.positive_radius_m)->capture_default_str();
    trn->add_option("--negative-radius-m", mining.negative_radius_m)->capture_default_str();
    trn->add_option("--negative-pool", mining.negative_pool)->capture_default_str();
    trn->add_option("--hard-negatives", mining.hard_negatives)->capture_default_str();
    trn->add_option("--margin", lc.margin)->capture_default_str();
    trn->add_option("--lambda", lc.local_weight)->capture_default_str();
    train_model.add(trn);

    // gradcheck
    ModelFlags gc_model;
    ModelGradcheckConfig gcc;
    std::size_t gc_triplets = 2;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the loss gradients");
    gradcheck->add_option("--coords", gcc.coordinates)->capture_default_str();
    gradcheck->add_option("--triplets", gc_triplets)->capture_default_str();
    gradcheck->add_option("--step", gcc.check.step)->capture_default_str();
    gc_model.add(gradcheck);

    // params
    ModelFlags params_model;
    std::vector<std::string> params_freeze;
    auto* params = app.add_subcommand("params", "Parameter counts per group (CSV)");
    params->add_option("--freeze", params_freeze, "Frozen groups (default: backbone when adapters exist)");
    params_model.add(params, false);

    // bench
    BenchConfig bc;
    std::string bench_ks = "10,25,50,100", bench_locations = "64,225,841", bench_out;
    auto* bench = app.add_subcommand("bench", "Time the re-ranking stage against k and grid size");
    bench->add_option("--k", bench_ks);
    bench->add_option("--locations", bench_locations, "Grid sizes N' (locations per image)");
    bench->add_option("--channels", bc.channels)->capture_default_str();
    bench->add_option("--queries", bc.queries)->capture_default_str();
    bench->add_option("--repeats", bc.repeats)->capture_default_str();
    bench->add_option("-o,--out", bench_out);

    // heatmap
    ModelFlags heat_model;
    std::string heat_image, heat_out = "heatmap", heat_which = "feature_map";
    auto* heat = app.add_subcommand("heatmap", "Channel-mean heat map of a feature map (CSV + PGM)");
    heat->add_option("--image", heat_image, "PPM image")->required();
    heat->add_option("-o,--out", heat_out, "Output stem (writes <stem>.csv and <stem>.pgm)");
    heat->add_option("--which", heat_which)->check(CLI::IsMember({"feature_map", "local"}));
    heat_model.add(heat);

    CLI11_PARSE(app, argc, argv);

    try {
        const Precision precision = parse_precision(g.precision);
        if (*synth) {
            sc.seed = g.seed;
            const std::string manifest = write_synth_world(generate_synth_world(sc), synth_out);
            std::cerr << "wrote " << manifest << '\n';
        } else if (*extract) {
            const Checkpoint ck = extract_model.load(g.seed);
            const auto entries = load_manifest(extract_manifest);
            auto records = extract_records(extract_manifest, entries, ck.config, ck.params, !no_patches);
            save_features(extract_out, make_index(std::move(records)));
            std::cerr << "extracted " << entries.size() << " images to " << extract_out << '\n';
        } else if (*index) {
            const PlaceIndex all = load_features(index_features);
            const auto entries = load_manifest(index_manifest);
            const PlaceIndex db = make_index(select_split(all, entries, parse_split(index_split)));
            save_features(index_out, db);
            std::cerr << "indexed " << db.size() << " records to " << index_out << '\n';
        } else if (*query) {
            const auto r = qf.run(precision);
            write_text(qf.out, query_results_csv(r.queries, r.results));
        } else if (*evaluate) {
            const auto r = ef.run(precision);
            MatchThresholds th{dist_m, heading_deg};
            const auto ns = parse_list(ns_text);
            write_text(ef.out, recall_csv(evaluate_results(r.database, r.queries, r.results, th, ns)));
        } else if (*trn) {
            Checkpoint ck = train_model.load(g.seed);
            tc.seed = g.seed;
            if (!freeze.empty()) {
                FreezePolicy f;
                for (const auto& name : freeze) f.insert(parse_param_group(name));
                tc.freeze_policy = f;
            }
            lc.hard_negatives = mining.hard_negatives;
            const auto entries = load_manifest(train_manifest);
            const TrainingData data = load_training_data(train_manifest, entries);
            const TrainResult result = train(ck.config, ck.params, data, tc, mining, lc, [](const EpochStats& e) {
                std::fprintf(stderr, "epoch %zu loss %.5f val R@1 %.2f R@5 %.2f (%zu triplets, %zu skipped, %.1fs)\n", e.epoch,
                             e.train_loss, e.val_r1, e.val_r5, e.triplets, e.skipped_queries, e.wall_seconds);
            });
            save_checkpoint(train_out, ck.config, result.params);
            if (!history_out.empty()) write_text(history_out, history_csv(result.history));
            std::cerr << "best epoch " << result.best_epoch << ", checkpoint " << train_out << '\n';
        } else if (*gradcheck) {
            Checkpoint ck = gc_model.load(g.seed);
            gcc.seed = g.seed;
            Rng rng(derive_seed(g.seed, 41));
            const std::size_t s = ck.config.backbone.image_size;
            std::vector<Tensor> images;
            for (std::size_t i = 0; i < gc_triplets * 4; ++i) {
                Tensor im({s, s, 3});
                fill_uniform(im, -1.0, 1.0, rng);
                images.push_back(std::move(im));
            }
            std::vector<TripletImages> batch;
            for (std::size_t t = 0; t < gc_triplets; ++t) {
                batch.push_back({&images[4 * t], &images[4 * t + 1], {&images[4 * t + 2], &images[4 * t + 3]}});
            }
            const GradcheckReport rep = model_gradcheck(batch, ck.config, ck.params, LossConfig{}, gcc);
            std::cout << "checked " << rep.checked << " skipped " << rep.skipped << " max_rel_error " << rep.max_rel_error << '\n';
            return rep.checked > 0 && rep.max_rel_error < 1e-4 ? 0 : 1;
        } else if (*params) {
            const ModelConfig c = params_model.config();
            FreezePolicy f = default_freeze_policy(c);
            if (!params_freeze.empty()) {
                f.clear();
                for (const auto& name : params_freeze) f.insert(parse_param_group(name));
            }
            std::cout << param_report_text(count_parameters(c, f));
        } else if (*bench) {
            bc.ks = parse_list(bench_ks);
            bc.locations = parse_list(bench_locations);
            bc.seed = g.seed;
            write_text(bench_out, bench_csv(benchmark_rerank(bc)));
        } else if (*heat) {
            const Checkpoint ck = heat_model.load(g.seed);
            const auto f = extract_features(image_to_tensor(read_pnm(heat_image)), ck.config, ck.params,
                                            heat_which == "local");
            emit_heatmap(heat_which == "local" ? f.local : f.feature_map, heat_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
