#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tsvpr/tensor.hpp"

namespace tsvpr {

/// 8-bit interleaved image; channels is 1 (gray) or 3 (RGB).
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 3;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
    bool operator==(const Image8&) const = default;
};

/// Binary PPM (P6) for RGB, PGM (P5) for gray.
void write_pnm(const std::string& path, const Image8& image);
Image8 read_pnm(const std::string& path);

/// [H x W x 3] tensor with values mapped from [0, 255] to [-1, 1].
Tensor image_to_tensor(const Image8& image);

}  // namespace tsvpr
