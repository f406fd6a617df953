#include "tsvpr/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tsvpr {

Tensor channel_mean_heatmap(const Tensor& fm) {
    if (fm.rank() != 3 || fm.empty()) throw std::invalid_argument("heatmap: expected a non-empty [h x w x C] map");
    const std::size_t h = fm.dim(0), w = fm.dim(1), c = fm.dim(2);
    Tensor map({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) s += fm[i * c + k];
        map[i] = s / static_cast<double>(c);
    }
    const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
    const double min = *lo, range = *hi - *lo;
    for (double& v : map.values()) v = range > 0.0 ? (v - min) / range : 0.5;
    return map;
}

std::string heatmap_csv(const Tensor& map) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(6);
    for (std::size_t y = 0; y < map.dim(0); ++y) {
        for (std::size_t x = 0; x < map.dim(1); ++x) os << (x ? "," : "") << map.at(y, x);
        os << '\n';
    }
    return os.str();
}

Image8 heatmap_image(const Tensor& map) {
    Image8 img{map.dim(1), map.dim(0), 1, std::vector<std::uint8_t>(map.size())};
    for (std::size_t i = 0; i < map.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(map[i], 0.0, 1.0) * 255.0));
    }
    return img;
}

void emit_heatmap(const Tensor& fm, const std::string& stem) {
    const Tensor map = channel_mean_heatmap(fm);
    std::ofstream csv(stem + ".csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot open '" + stem + ".csv' for writing");
    csv << heatmap_csv(map);
    if (!csv) throw std::runtime_error("write failed on '" + stem + ".csv'");
    write_pnm(stem + ".pgm", heatmap_image(map));
}

}  // namespace tsvpr
