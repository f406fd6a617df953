#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tsvpr/image_io.hpp"
#include "tsvpr/manifest.hpp"

namespace tsvpr {

/// A toy world of places, each a seeded arrangement of coloured rectangles
/// ("landmarks") photographed several times under changing conditions.
struct SynthWorldConfig {
    std::size_t num_places = 64;
    double place_spacing_m = 100.0;
    std::size_t variants_per_place = 8;
    /// Landmarks per image side; one landmark per cell.
    std::size_t landmark_grid = 4;
    std::size_t image_size = 64;
    /// Per-variant brightness offset drawn from [-brightness, brightness] (0..255 scale).
    double brightness = 60.0;
    /// Std of additive per-pixel Gaussian noise.
    double noise = 16.0;
    /// Viewpoint change: translation drawn from [-max_shift, max_shift] pixels per axis.
    std::size_t max_shift = 4;
    double heading_jitter_deg = 15.0;
    /// Place pairs that share landmark colours but arrange them differently.
    std::size_t aliasing_pairs = 16;
    double origin_lat = 47.0;
    double origin_lon = 8.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthWorld {
    std::vector<ManifestEntry> entries;
    std::vector<Image8> images;  // parallel to entries
};

/// With q = max(1, V/4): the first q variants of a place go to the database, the
/// last q to the query split, the one before those to val and the rest to train.
Split variant_split(std::size_t variant, std::size_t variants_per_place);

SynthWorld generate_synth_world(const SynthWorldConfig& config);

/// Writes images/<id>.ppm and manifest.jsonl under `dir`; returns the manifest path.
std::string write_synth_world(const SynthWorld& world, const std::string& dir);

}  // namespace tsvpr
