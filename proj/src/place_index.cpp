#include "tsvpr/place_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "tsvpr/binary_io.hpp"

namespace tsvpr {

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (lat2 - lat1) * rad;
    const double dlon = (lon2 - lon1) * rad;
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    double a = s1 * s1 + std::cos(lat1 * rad) * std::cos(lat2 * rad) * s2 * s2;
    a = std::clamp(a, 0.0, 1.0);
    return 2.0 * kEarthRadiusM * std::asin(std::sqrt(a));
}

double heading_delta(double h1, double h2) {
    double d = std::fmod(std::abs(h1 - h2), 360.0);
    return std::min(d, 360.0 - d);
}

void PlaceRecord::validate() const {
    if (!(lat >= -90.0 && lat <= 90.0)) throw std::invalid_argument("place record " + std::to_string(id) + ": latitude out of range");
    if (!(lon >= -180.0 && lon <= 180.0)) throw std::invalid_argument("place record " + std::to_string(id) + ": longitude out of range");
    if (heading && !(*heading >= 0.0 && *heading < 360.0)) {
        throw std::invalid_argument("place record " + std::to_string(id) + ": heading must be in [0, 360)");
    }
    if (local.values.size() != local.locations() * local.channels) {
        throw std::invalid_argument("place record " + std::to_string(id) + ": local grid size mismatch");
    }
}

bool same_persisted_fields(const PlaceRecord& a, const PlaceRecord& b) {
    return a.id == b.id && a.global == b.global && a.local == b.local && a.lat == b.lat && a.lon == b.lon &&
           a.heading == b.heading;
}

PlaceIndex::PlaceIndex(std::size_t global_dim, std::size_t local_h, std::size_t local_w, std::size_t local_dim)
    : global_dim_(global_dim), local_h_(local_h), local_w_(local_w), local_dim_(local_dim) {}

void PlaceIndex::add(PlaceRecord record) {
    record.validate();
    if (record.global.size() != global_dim_) throw std::invalid_argument("index: global dimension mismatch");
    if (record.local.height != local_h_ || record.local.width != local_w_ || record.local.channels != local_dim_) {
        throw std::invalid_argument("index: local grid shape mismatch");
    }
    for (const auto& r : records_) {
        if (r.id == record.id) throw std::invalid_argument("index: duplicate id " + std::to_string(record.id));
    }
    records_.push_back(std::move(record));
}

SearchResult global_search(const PlaceIndex& index, std::span<const float> query, std::size_t k) {
    if (k == 0) throw std::invalid_argument("global_search: k must be at least 1");
    if (index.empty()) throw std::invalid_argument("global_search: index is empty");
    if (query.size() != index.global_dim()) throw std::invalid_argument("global_search: query dimension mismatch");

    std::vector<SearchHit> all(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        const auto& g = index[i].global;
        double sq = 0.0;
        for (std::size_t d = 0; d < g.size(); ++d) {
            const double diff = static_cast<double>(query[d]) - static_cast<double>(g[d]);
            sq += diff * diff;
        }
        all[i] = {i, index[i].id, std::sqrt(sq)};
    }
    SearchResult out;
    out.truncated = k > all.size();
    const std::size_t take = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                      [](const SearchHit& a, const SearchHit& b) {
                          if (a.distance != b.distance) return a.distance < b.distance;
                          return a.id < b.id;
                      });
    all.resize(take);
    out.hits = std::move(all);
    return out;
}

std::string to_string(RerankMode mode) {
    switch (mode) {
        case RerankMode::dense_local: return "dense";
        case RerankMode::backbone_patches: return "patches";
        case RerankMode::none: return "none";
    }
    return "?";
}

RerankMode parse_rerank_mode(const std::string& text) {
    if (text == "dense" || text == "dense_local") return RerankMode::dense_local;
    if (text == "patches" || text == "backbone_patches") return RerankMode::backbone_patches;
    if (text == "none") return RerankMode::none;
    throw std::invalid_argument("unknown re-rank mode '" + text + "' (expected dense, patches or none)");
}

std::string to_string(Precision precision) { return precision == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& text) {
    if (text == "f32") return Precision::f32;
    if (text == "f64") return Precision::f64;
    throw std::invalid_argument("unknown precision '" + text + "' (expected f32 or f64)");
}

std::vector<std::uint64_t> QueryResult::final_ids() const {
    std::vector<std::uint64_t> ids;
    ids.reserve(final_order.size());
    for (const auto& c : final_order) ids.push_back(c.id);
    return ids;
}

namespace {

std::vector<RankedCandidate> rerank_grids(const LocalGrid& q, const std::vector<const LocalGrid*>& grids,
                                          std::span<const double> distances, Precision precision) {
    if (precision == Precision::f32) {
        std::vector<GridView<float>> views;
        for (const LocalGrid* g : grids) views.push_back(g->view());
        return rerank_candidates<float>(q.view(), views, distances);
    }
    auto widen = [](const LocalGrid& g) { return std::vector<double>(g.values.begin(), g.values.end()); };
    const std::vector<double> qd = widen(q);
    std::vector<std::vector<double>> store;
    std::vector<GridView<double>> views;
    store.reserve(grids.size());
    for (const LocalGrid* g : grids) {
        store.push_back(widen(*g));
        views.push_back({store.back().data(), g->locations(), g->channels});
    }
    return rerank_candidates<double>({qd.data(), q.locations(), q.channels}, views, distances);
}

}  // namespace

QueryResult two_stage_query(const PlaceIndex& index, const PlaceRecord& query, std::size_t k, RerankMode mode,
                            Precision precision) {
    const SearchResult found = global_search(index, query.global, k);
    QueryResult out;
    out.truncated = found.truncated;
    for (const auto& h : found.hits) out.global_order.push_back({h.id, h.position, h.distance, 0});
    if (mode == RerankMode::none || out.global_order.size() < 2) {
        out.final_order = out.global_order;
        return out;
    }

    const bool patches = mode == RerankMode::backbone_patches;
    const LocalGrid& q = patches ? query.patches : query.local;
    if (q.values.empty()) {
        throw std::invalid_argument(patches ? "two_stage_query: query has no patch grid" : "two_stage_query: query has no local grid");
    }
    std::vector<const LocalGrid*> grids;
    std::vector<double> distances;
    for (const auto& c : out.global_order) {
        const LocalGrid& g = patches ? index[c.position].patches : index[c.position].local;
        if (g.values.empty()) throw std::invalid_argument("two_stage_query: record " + std::to_string(c.id) + " has no grid for this mode");
        grids.push_back(&g);
        distances.push_back(c.global_distance);
    }
    const auto ranked = rerank_grids(q, grids, distances, precision);
    for (const auto& r : ranked) {
        QueryCandidate c = out.global_order[r.index];
        c.rerank_score = r.score;
        out.final_order.push_back(c);
    }
    for (const auto& r : ranked) out.global_order[r.index].rerank_score = r.score;
    return out;
}

void MatchThresholds::validate() const {
    if (!(distance_m > 0.0)) throw std::invalid_argument("thresholds: distance must be positive");
    if (heading_deg && !(*heading_deg >= 0.0)) throw std::invalid_argument("thresholds: heading must be non-negative");
}

bool is_correct(const GeoTag& query, const GeoTag& candidate, const MatchThresholds& thresholds) {
    if (haversine_m(query.lat, query.lon, candidate.lat, candidate.lon) > thresholds.distance_m) return false;
    if (thresholds.heading_deg && query.heading && candidate.heading) {
        return heading_delta(*query.heading, *candidate.heading) <= *thresholds.heading_deg;
    }
    return true;
}

std::vector<RecallEntry> recall_at_n(const std::vector<std::vector<GeoTag>>& retrieved,
                                     const std::vector<GeoTag>& queries, const MatchThresholds& thresholds,
                                     std::span<const std::size_t> ns) {
    thresholds.validate();
    if (retrieved.size() != queries.size()) throw std::invalid_argument("recall_at_n: result/query count mismatch");
    if (queries.empty()) throw std::invalid_argument("recall_at_n: no queries");
    // Rank of the first correct result per query (max when there is none).
    std::vector<std::size_t> first_hit(queries.size(), std::numeric_limits<std::size_t>::max());
    for (std::size_t q = 0; q < queries.size(); ++q) {
        if (retrieved[q].empty()) throw std::invalid_argument("recall_at_n: query " + std::to_string(q) + " has no results");
        for (std::size_t r = 0; r < retrieved[q].size(); ++r) {
            if (is_correct(queries[q], retrieved[q][r], thresholds)) {
                first_hit[q] = r;
                break;
            }
        }
    }
    std::vector<RecallEntry> out;
    for (std::size_t n : ns) {
        if (n == 0) throw std::invalid_argument("recall_at_n: N must be at least 1");
        std::size_t hits = 0;
        for (std::size_t r : first_hit) hits += r < n ? 1 : 0;
        out.push_back({n, 100.0 * static_cast<double>(hits) / static_cast<double>(queries.size())});
    }
    return out;
}

std::string recall_csv(const std::vector<RecallEntry>& rows) {
    std::ostringstream os;
    os << "N,recall_percent\n";
    os.setf(std::ios::fixed);
    os.precision(4);
    for (const auto& r : rows) os << r.n << ',' << r.recall_percent << '\n';
    return os.str();
}

// ---- persistence ----------------------------------------------------------

namespace {

constexpr char kIndexMagic[4] = {'S', 'V', 'P', 'R'};
constexpr char kPatchMagic[4] = {'S', 'V', 'P', 'T'};

void expect_magic(BinaryReader& r, const char (&magic)[4], const char* what) {
    char got[4];
    r.bytes(got, 4);
    if (std::memcmp(got, magic, 4) != 0) {
        throw FormatError(FormatError::Kind::bad_magic, "'" + r.path() + "' is not " + what);
    }
    const std::uint32_t version = r.u32();
    if (version != kIndexVersion) {
        throw FormatError(FormatError::Kind::version_mismatch,
                          std::string(what) + " version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kIndexVersion) + ")");
    }
}

void read_floats(BinaryReader& r, std::vector<float>& out, std::size_t n) {
    out.resize(n);
    for (auto& v : out) v = r.f32();
}

std::uint32_t checked_u32(std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw std::length_error("dimension does not fit the file format");
    return static_cast<std::uint32_t>(v);
}

}  // namespace

void save_index(const std::string& path, const PlaceIndex& index) {
    BinaryWriter w(path);
    w.bytes(kIndexMagic, 4);
    w.u32(kIndexVersion);
    w.u32(checked_u32(index.global_dim()));
    w.u32(checked_u32(index.local_h()));
    w.u32(checked_u32(index.local_w()));
    w.u32(checked_u32(index.local_dim()));
    w.u64(index.size());
    for (const auto& rec : index.records()) {
        w.u64(rec.id);
        w.f64(rec.lat);
        w.f64(rec.lon);
        w.f32(rec.heading ? static_cast<float>(*rec.heading) : std::numeric_limits<float>::quiet_NaN());
        for (float v : rec.global) w.f32(v);
        for (float v : rec.local.values) w.f32(v);
    }
    w.finish();
}

PlaceIndex load_index(const std::string& path) {
    BinaryReader r(path);
    expect_magic(r, kIndexMagic, "a place index");
    const std::size_t gdim = r.u32();
    const std::size_t lh = r.u32();
    const std::size_t lw = r.u32();
    const std::size_t ld = r.u32();
    const std::uint64_t count = r.u64();
    PlaceIndex index(gdim, lh, lw, ld);
    for (std::uint64_t i = 0; i < count; ++i) {
        PlaceRecord rec;
        rec.id = r.u64();
        rec.lat = r.f64();
        rec.lon = r.f64();
        const float heading = r.f32();
        if (!std::isnan(heading)) rec.heading = static_cast<double>(heading);
        read_floats(r, rec.global, gdim);
        rec.local.height = lh;
        rec.local.width = lw;
        rec.local.channels = ld;
        read_floats(r, rec.local.values, lh * lw * ld);
        try {
            index.add(std::move(rec));
        } catch (const std::invalid_argument& e) {
            throw FormatError(FormatError::Kind::invalid, "'" + path + "': " + e.what());
        }
    }
    if (!r.at_end()) throw FormatError(FormatError::Kind::invalid, "'" + path + "': trailing bytes after last record");
    return index;
}

void save_patches(const std::string& path, const PlaceIndex& index) {
    BinaryWriter w(path);
    w.bytes(kPatchMagic, 4);
    w.u32(kIndexVersion);
    const LocalGrid* shape = index.empty() ? nullptr : &index[0].patches;
    w.u32(shape ? checked_u32(shape->height) : 0);
    w.u32(shape ? checked_u32(shape->width) : 0);
    w.u32(shape ? checked_u32(shape->channels) : 0);
    w.u64(index.size());
    for (const auto& rec : index.records()) {
        if (rec.patches.height != shape->height || rec.patches.width != shape->width ||
            rec.patches.channels != shape->channels || rec.patches.values.size() != shape->locations() * shape->channels) {
            throw std::invalid_argument("save_patches: record " + std::to_string(rec.id) + " has a mismatched patch grid");
        }
        w.u64(rec.id);
        for (float v : rec.patches.values) w.f32(v);
    }
    w.finish();
}

void load_patches(const std::string& path, PlaceIndex& index) {
    BinaryReader r(path);
    expect_magic(r, kPatchMagic, "a patch file");
    const std::size_t h = r.u32();
    const std::size_t w = r.u32();
    const std::size_t c = r.u32();
    const std::uint64_t count = r.u64();
    std::unordered_map<std::uint64_t, std::size_t> by_id;
    for (std::size_t i = 0; i < index.size(); ++i) by_id[index[i].id] = i;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t id = r.u64();
        LocalGrid g{h, w, c, {}};
        read_floats(r, g.values, h * w * c);
        auto it = by_id.find(id);
        if (it == by_id.end()) throw FormatError(FormatError::Kind::invalid, "'" + path + "': unknown record id " + std::to_string(id));
        index[it->second].patches = std::move(g);
    }
}

}  // namespace tsvpr
