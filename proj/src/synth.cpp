#include "tsvpr/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <stdexcept>

#include "tsvpr/place_index.hpp"
#include "tsvpr/rng.hpp"

namespace tsvpr {

void SynthWorldConfig::validate() const {
    if (num_places == 0) throw std::invalid_argument("synth: need at least one place");
    if (!(place_spacing_m > 50.0)) throw std::invalid_argument("synth: place spacing must exceed 50 m");
    if (variants_per_place < 4) throw std::invalid_argument("synth: need at least 4 variants per place");
    if (landmark_grid == 0 || landmark_grid > image_size) throw std::invalid_argument("synth: bad landmark grid");
    if (image_size == 0) throw std::invalid_argument("synth: image size must be positive");
    if (brightness < 0.0 || noise < 0.0) throw std::invalid_argument("synth: condition amplitudes must be non-negative");
    if (2 * max_shift >= image_size) throw std::invalid_argument("synth: shift too large for the image");
    if (2 * aliasing_pairs > num_places) throw std::invalid_argument("synth: at most num_places/2 aliasing pairs");
    if (!(origin_lat >= -80.0 && origin_lat <= 80.0)) throw std::invalid_argument("synth: origin latitude out of range");
}

Split variant_split(std::size_t variant, std::size_t variants_per_place) {
    const std::size_t quarter = std::max<std::size_t>(1, variants_per_place / 4);
    if (variant < quarter) return Split::database;
    if (variant + quarter >= variants_per_place) return Split::query;
    if (variant + quarter + 1 == variants_per_place) return Split::val;
    return Split::train;
}

namespace {

using Color = std::array<std::uint8_t, 3>;

struct Landmark {
    Color color;
    // Rectangle in cell-relative coordinates, [0, 1].
    double x0, y0, x1, y1;
};

struct Scene {
    Color background;
    std::vector<Landmark> cells;  // row-major landmark_grid x landmark_grid
};

Color random_color(Rng& rng) {
    std::uniform_int_distribution<int> c(0, 255);
    return {static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng)), static_cast<std::uint8_t>(c(rng))};
}

Scene random_scene(const SynthWorldConfig& cfg, Rng& rng) {
    Scene s;
    s.background = random_color(rng);
    std::uniform_real_distribution<double> size(0.45, 0.9);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < cfg.landmark_grid * cfg.landmark_grid; ++i) {
        Landmark l;
        l.color = random_color(rng);
        const double w = size(rng);
        const double h = size(rng);
        l.x0 = unit(rng) * (1.0 - w);
        l.y0 = unit(rng) * (1.0 - h);
        l.x1 = l.x0 + w;
        l.y1 = l.y0 + h;
        s.cells.push_back(l);
    }
    return s;
}

// Same landmarks in a different arrangement.
Scene permuted_scene(const Scene& base, Rng& rng) {
    Scene s = base;
    if (s.cells.size() < 2) return s;
    std::vector<std::size_t> perm(s.cells.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    bool identity = true;
    while (identity) {
        for (std::size_t i = perm.size(); i > 1; --i) {
            std::uniform_int_distribution<std::size_t> pick(0, i - 1);
            std::swap(perm[i - 1], perm[pick(rng)]);
        }
        identity = std::is_sorted(perm.begin(), perm.end());
    }
    for (std::size_t i = 0; i < perm.size(); ++i) s.cells[i] = base.cells[perm[i]];
    return s;
}

Image8 render(const Scene& scene, const SynthWorldConfig& cfg, Rng& rng) {
    const std::size_t n = cfg.image_size;
    const long shift = static_cast<long>(cfg.max_shift);
    std::uniform_int_distribution<long> offset(-shift, shift);
    const long dx = offset(rng);
    const long dy = offset(rng);
    std::uniform_real_distribution<double> bright(-cfg.brightness, cfg.brightness);
    const double b = bright(rng);
    std::normal_distribution<double> noise(0.0, cfg.noise);

    const double cell = static_cast<double>(n) / static_cast<double>(cfg.landmark_grid);
    Image8 img{n, n, 3, std::vector<std::uint8_t>(n * n * 3)};
    for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
            const double sx = std::clamp(static_cast<double>(static_cast<long>(x) + dx) + 0.5, 0.0, n - 1e-9);
            const double sy = std::clamp(static_cast<double>(static_cast<long>(y) + dy) + 0.5, 0.0, n - 1e-9);
            const std::size_t cx = std::min(cfg.landmark_grid - 1, static_cast<std::size_t>(sx / cell));
            const std::size_t cy = std::min(cfg.landmark_grid - 1, static_cast<std::size_t>(sy / cell));
            const Landmark& l = scene.cells[cy * cfg.landmark_grid + cx];
            const double u = sx / cell - static_cast<double>(cx);
            const double v = sy / cell - static_cast<double>(cy);
            const Color& c = (u >= l.x0 && u < l.x1 && v >= l.y0 && v < l.y1) ? l.color : scene.background;
            for (std::size_t k = 0; k < 3; ++k) {
                const double value = static_cast<double>(c[k]) + b + (cfg.noise > 0.0 ? noise(rng) : 0.0);
                img.at(x, y, k) = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
            }
        }
    }
    return img;
}

}  // namespace

SynthWorld generate_synth_world(const SynthWorldConfig& cfg) {
    cfg.validate();
    Rng layout_rng(derive_seed(cfg.seed, 11));
    std::vector<Scene> scenes;
    std::vector<std::optional<std::uint64_t>> alias_of(cfg.num_places);
    for (std::size_t p = 0; p < cfg.num_places; ++p) {
        // The first 2 * aliasing_pairs places come in pairs (2i, 2i + 1).
        if (p < 2 * cfg.aliasing_pairs && p % 2 == 1) {
            scenes.push_back(permuted_scene(scenes[p - 1], layout_rng));
            alias_of[p] = p - 1;
            alias_of[p - 1] = p;
        } else {
            scenes.push_back(random_scene(cfg, layout_rng));
        }
    }

    const std::size_t cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cfg.num_places))));
    const double m_per_deg_lat = kEarthRadiusM * std::numbers::pi / 180.0;
    const double m_per_deg_lon = m_per_deg_lat * std::cos(cfg.origin_lat * std::numbers::pi / 180.0);

    SynthWorld world;
    Rng heading_rng(derive_seed(cfg.seed, 12));
    std::uniform_real_distribution<double> base_heading(0.0, 360.0);
    std::uniform_real_distribution<double> jitter(-cfg.heading_jitter_deg, cfg.heading_jitter_deg);
    for (std::size_t p = 0; p < cfg.num_places; ++p) {
        const double lat = cfg.origin_lat + static_cast<double>(p / cols) * cfg.place_spacing_m / m_per_deg_lat;
        const double lon = cfg.origin_lon + static_cast<double>(p % cols) * cfg.place_spacing_m / m_per_deg_lon;
        const double heading = base_heading(heading_rng);
        for (std::size_t v = 0; v < cfg.variants_per_place; ++v) {
            const std::uint64_t id = p * cfg.variants_per_place + v;
            Rng rng(derive_seed(derive_seed(cfg.seed, 13), id));
            ManifestEntry e;
            e.id = id;
            e.image_path = "images/" + std::to_string(id) + ".ppm";
            e.lat = lat;
            e.lon = lon;
            double h = std::fmod(heading + jitter(heading_rng), 360.0);
            if (h < 0.0) h += 360.0;
            e.heading_deg = h;
            e.split = variant_split(v, cfg.variants_per_place);
            e.place = p;
            e.alias_of = alias_of[p];
            world.entries.push_back(e);
            world.images.push_back(render(scenes[p], cfg, rng));
        }
    }
    return world;
}

std::string write_synth_world(const SynthWorld& world, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    for (std::size_t i = 0; i < world.entries.size(); ++i) {
        write_pnm((fs::path(dir) / world.entries[i].image_path).string(), world.images[i]);
    }
    const std::string manifest = (fs::path(dir) / "manifest.jsonl").string();
    write_manifest(manifest, world.entries);
    return manifest;
}

}  // namespace tsvpr
