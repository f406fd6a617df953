#include "tsvpr/pipeline.hpp"

#include <filesystem>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "tsvpr/image_io.hpp"
#include "tsvpr/ops.hpp"

namespace tsvpr {

LocalGrid to_local_grid(const Tensor& grid) {
    if (grid.rank() != 3) throw std::invalid_argument("to_local_grid: expected [h x w x C], got " + grid.shape_string());
    LocalGrid g{grid.dim(0), grid.dim(1), grid.dim(2), {}};
    g.values.assign(grid.values().begin(), grid.values().end());
    return g;
}

PlaceRecord make_record(const ManifestEntry& entry, const ImageFeatures& features, bool with_patches) {
    PlaceRecord r;
    r.id = entry.id;
    r.global.assign(features.global.begin(), features.global.end());
    if (!features.local.empty()) r.local = to_local_grid(features.local);
    r.lat = entry.lat;
    r.lon = entry.lon;
    r.heading = entry.heading_deg;
    if (with_patches) r.patches = to_local_grid(ops::intra_l2(features.feature_map));
    return r;
}

Tensor load_image_tensor(const std::string& manifest_path, const ManifestEntry& entry) {
    return image_to_tensor(read_pnm(resolve_image_path(manifest_path, entry)));
}

std::vector<PlaceRecord> extract_records(const std::string& manifest_path, std::span<const ManifestEntry> entries,
                                         const ModelConfig& config, const ModelParams& params, bool with_patches,
                                         const std::function<void(std::size_t, std::size_t)>& progress) {
    std::vector<PlaceRecord> out;
    out.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const Tensor image = load_image_tensor(manifest_path, entries[i]);
        out.push_back(make_record(entries[i], extract_features(image, config, params, true), with_patches));
        if (progress) progress(i + 1, entries.size());
    }
    return out;
}

PlaceIndex make_index(std::vector<PlaceRecord> records) {
    if (records.empty()) return {};
    const auto& first = records.front();
    PlaceIndex index(first.global.size(), first.local.height, first.local.width, first.local.channels);
    for (auto& r : records) index.add(std::move(r));
    return index;
}

namespace {

std::string patch_path(const std::string& path) { return path + ".patches"; }

}  // namespace

void save_features(const std::string& path, const PlaceIndex& index) {
    save_index(path, index);
    const bool patches = !index.empty() && !index[0].patches.values.empty();
    if (patches) save_patches(patch_path(path), index);
    else std::filesystem::remove(patch_path(path));
}

PlaceIndex load_features(const std::string& path) {
    PlaceIndex index = load_index(path);
    if (std::filesystem::exists(patch_path(path))) load_patches(patch_path(path), index);
    return index;
}

std::vector<PlaceRecord> select_split(const PlaceIndex& index, std::span<const ManifestEntry> manifest, Split split,
                                      bool aliased_only) {
    std::unordered_map<std::uint64_t, std::size_t> by_id;
    for (std::size_t i = 0; i < index.size(); ++i) by_id[index[i].id] = i;
    std::vector<PlaceRecord> out;
    for (const auto& e : manifest) {
        if (e.split != split || (aliased_only && !e.alias_of)) continue;
        auto it = by_id.find(e.id);
        if (it == by_id.end()) throw std::invalid_argument("no features for manifest id " + std::to_string(e.id));
        out.push_back(index[it->second]);
    }
    return out;
}

std::vector<QueryResult> run_queries(const PlaceIndex& database, std::span<const PlaceRecord> queries, std::size_t k,
                                     RerankMode mode, Precision precision) {
    std::vector<QueryResult> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(two_stage_query(database, q, k, mode, precision));
    return out;
}

GeoTag geotag(const ManifestEntry& entry) { return {entry.lat, entry.lon, entry.heading_deg}; }
GeoTag geotag(const PlaceRecord& record) { return {record.lat, record.lon, record.heading}; }

std::vector<RecallEntry> evaluate_results(const PlaceIndex& database, std::span<const PlaceRecord> queries,
                                          const std::vector<QueryResult>& results, const MatchThresholds& thresholds,
                                          std::span<const std::size_t> ns) {
    if (results.size() != queries.size()) throw std::invalid_argument("evaluate: result/query count mismatch");
    std::vector<std::vector<GeoTag>> retrieved;
    std::vector<GeoTag> tags;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        std::vector<GeoTag> row;
        for (const auto& c : results[q].final_order) row.push_back(geotag(database[c.position]));
        retrieved.push_back(std::move(row));
        tags.push_back(geotag(queries[q]));
    }
    return recall_at_n(retrieved, tags, thresholds, ns);
}

std::string query_results_csv(std::span<const PlaceRecord> queries, const std::vector<QueryResult>& results) {
    std::ostringstream os;
    os << "query_id,rank,candidate_id,global_distance,rerank_score\n";
    os.setf(std::ios::fixed);
    os.precision(6);
    for (std::size_t q = 0; q < results.size(); ++q) {
        const auto& order = results[q].final_order;
        for (std::size_t r = 0; r < order.size(); ++r) {
            os << queries[q].id << ',' << r + 1 << ',' << order[r].id << ',' << order[r].global_distance << ','
               << order[r].rerank_score << '\n';
        }
    }
    return os.str();
}

TrainingData load_training_data(const std::string& manifest_path, std::span<const ManifestEntry> entries) {
    TrainingData data;
    for (const auto& e : entries) {
        GeoImage im{e.id, load_image_tensor(manifest_path, e), geotag(e)};
        switch (e.split) {
            case Split::train: data.train.push_back(std::move(im)); break;
            case Split::val: data.val_queries.push_back(std::move(im)); break;
            case Split::database: data.val_database.push_back(std::move(im)); break;
            case Split::query: break;
        }
    }
    return data;
}

}  // namespace tsvpr
