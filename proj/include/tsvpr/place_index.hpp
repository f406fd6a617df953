#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsvpr/matcher.hpp"

namespace tsvpr {

constexpr double kEarthRadiusM = 6371000.0;

double haversine_m(double lat1, double lon1, double lat2, double lon2);
/// Smallest angle between two headings, in [0, 180].
double heading_delta(double h1, double h2);

/// A dense local grid stored row-major as [h x w x channels].
struct LocalGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<float> values;

    std::size_t locations() const { return height * width; }
    GridView<float> view() const { return {values.data(), locations(), channels}; }
    bool operator==(const LocalGrid&) const = default;
};

struct PlaceRecord {
    std::uint64_t id = 0;
    std::vector<float> global;
    LocalGrid local;
    double lat = 0.0;
    double lon = 0.0;
    std::optional<double> heading;
    /// Normalised backbone tokens, used only by the patch re-rank mode. Not persisted
    /// in the index file.
    LocalGrid patches;

    void validate() const;
};

bool same_persisted_fields(const PlaceRecord& a, const PlaceRecord& b);

class PlaceIndex {
public:
    PlaceIndex() = default;
    PlaceIndex(std::size_t global_dim, std::size_t local_h, std::size_t local_w, std::size_t local_dim);

    /// Rejects records whose dimensions disagree with the index or whose id is taken.
    void add(PlaceRecord record);

    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }
    const PlaceRecord& operator[](std::size_t i) const { return records_[i]; }
    PlaceRecord& operator[](std::size_t i) { return records_[i]; }
    const std::vector<PlaceRecord>& records() const { return records_; }

    std::size_t global_dim() const { return global_dim_; }
    std::size_t local_h() const { return local_h_; }
    std::size_t local_w() const { return local_w_; }
    std::size_t local_dim() const { return local_dim_; }

private:
    std::size_t global_dim_ = 0;
    std::size_t local_h_ = 0;
    std::size_t local_w_ = 0;
    std::size_t local_dim_ = 0;
    std::vector<PlaceRecord> records_;
};

struct SearchHit {
    std::size_t position;  // position in the index
    std::uint64_t id;
    double distance;
};

struct SearchResult {
    std::vector<SearchHit> hits;
    /// Set when k exceeded the index size and every record was returned.
    bool truncated = false;
};

/// Exact k nearest records by Euclidean distance; ties by lowest id.
SearchResult global_search(const PlaceIndex& index, std::span<const float> query, std::size_t k);

enum class RerankMode { dense_local, backbone_patches, none };
/// Arithmetic used for the similarity products during re-ranking.
enum class Precision { f32, f64 };

std::string to_string(RerankMode mode);
/// Accepts "dense", "patches", "none" and the long spellings.
RerankMode parse_rerank_mode(const std::string& text);
std::string to_string(Precision precision);
Precision parse_precision(const std::string& text);

struct QueryCandidate {
    std::uint64_t id;
    std::size_t position;
    double global_distance;
    std::size_t rerank_score;  // 0 when re-ranking is skipped
};

struct QueryResult {
    std::vector<QueryCandidate> global_order;
    std::vector<QueryCandidate> final_order;
    bool truncated = false;

    std::vector<std::uint64_t> final_ids() const;
};

QueryResult two_stage_query(const PlaceIndex& index, const PlaceRecord& query, std::size_t k = 100,
                            RerankMode mode = RerankMode::dense_local, Precision precision = Precision::f32);

struct MatchThresholds {
    double distance_m = 25.0;
    std::optional<double> heading_deg;

    void validate() const;
};

struct GeoTag {
    double lat = 0.0;
    double lon = 0.0;
    std::optional<double> heading;
};

/// True when `candidate` counts as the right place for `query`. The heading test
/// only applies when both sides carry a heading.
bool is_correct(const GeoTag& query, const GeoTag& candidate, const MatchThresholds& thresholds);

struct RecallEntry {
    std::size_t n;
    double recall_percent;
};

/// `retrieved[q]` lists the geotags of the ranked results for query q.
std::vector<RecallEntry> recall_at_n(const std::vector<std::vector<GeoTag>>& retrieved,
                                     const std::vector<GeoTag>& queries, const MatchThresholds& thresholds,
                                     std::span<const std::size_t> ns);

std::string recall_csv(const std::vector<RecallEntry>& rows);

// ---- persistence ----------------------------------------------------------

constexpr std::uint32_t kIndexVersion = 1;

void save_index(const std::string& path, const PlaceIndex& index);
PlaceIndex load_index(const std::string& path);

/// Patch grids live in a side file keyed by record id.
void save_patches(const std::string& path, const PlaceIndex& index);
void load_patches(const std::string& path, PlaceIndex& index);

}  // namespace tsvpr
