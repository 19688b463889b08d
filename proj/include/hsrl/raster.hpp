#pragma once

#include <string>

#include "hsrl/core.hpp"

namespace hsrl {

/// How field values map to color: linear over the valid range, or through
/// log10 first (for fields spanning decades, like backscatter/extinction;
/// nonpositive values render as invalid).
enum class RasterScale { linear, log10 };

/// Render a field to an 8-bit RGB PNG: valid values map through `scale` onto
/// a dark-to-bright colormap; invalid pixels come out white. Row 0 of the
/// matrix (nearest range bin) lands at the bottom of the image. Purely a
/// visualization aid; constant fields render as the colormap midpoint.
void write_raster_png(const std::string& path, const Matrix& values, RasterScale scale);

}  // namespace hsrl
