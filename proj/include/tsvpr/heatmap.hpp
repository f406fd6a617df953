#pragma once

#include <string>

#include "tsvpr/image_io.hpp"
#include "tsvpr/tensor.hpp"

namespace tsvpr {

/// Channel mean per location of an [h x w x C] map, min-max scaled to [0, 1].
/// A constant map yields 0.5 everywhere.
Tensor channel_mean_heatmap(const Tensor& fm);

std::string heatmap_csv(const Tensor& map);
Image8 heatmap_image(const Tensor& map);

/// Writes <stem>.csv and <stem>.pgm.
void emit_heatmap(const Tensor& fm, const std::string& stem);

}  // namespace tsvpr
