#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tsvpr/manifest.hpp"
#include "tsvpr/model.hpp"
#include "tsvpr/place_index.hpp"
#include "tsvpr/trainer.hpp"

// Glue between manifests, the model and the index used by the command-line tool
// and the end-to-end tests.

namespace tsvpr {

LocalGrid to_local_grid(const Tensor& grid);

/// Float copy of the features plus the manifest geotag. With `with_patches`, the
/// row-normalised backbone tokens are attached for the patch re-rank mode.
PlaceRecord make_record(const ManifestEntry& entry, const ImageFeatures& features, bool with_patches);

Tensor load_image_tensor(const std::string& manifest_path, const ManifestEntry& entry);

std::vector<PlaceRecord> extract_records(const std::string& manifest_path, std::span<const ManifestEntry> entries,
                                         const ModelConfig& config, const ModelParams& params, bool with_patches,
                                         const std::function<void(std::size_t, std::size_t)>& progress = {});

/// Index whose dimensions come from the first record.
PlaceIndex make_index(std::vector<PlaceRecord> records);

/// Index file plus, when any record carries patches, a "<path>.patches" side file.
void save_features(const std::string& path, const PlaceIndex& index);
/// Loads the side file too when it exists.
PlaceIndex load_features(const std::string& path);

/// Records of `index` whose manifest entry is in `split` (and, with
/// `aliased_only`, belongs to an aliasing pair), in manifest order.
std::vector<PlaceRecord> select_split(const PlaceIndex& index, std::span<const ManifestEntry> manifest, Split split,
                                      bool aliased_only = false);

std::vector<QueryResult> run_queries(const PlaceIndex& database, std::span<const PlaceRecord> queries, std::size_t k,
                                     RerankMode mode, Precision precision);

std::vector<RecallEntry> evaluate_results(const PlaceIndex& database, std::span<const PlaceRecord> queries,
                                          const std::vector<QueryResult>& results, const MatchThresholds& thresholds,
                                          std::span<const std::size_t> ns);

std::string query_results_csv(std::span<const PlaceRecord> queries, const std::vector<QueryResult>& results);

GeoTag geotag(const ManifestEntry& entry);
GeoTag geotag(const PlaceRecord& record);

/// Images of the train split for training, val split as validation queries and the
/// database split as the validation database.
TrainingData load_training_data(const std::string& manifest_path, std::span<const ManifestEntry> entries);

}  // namespace tsvpr
