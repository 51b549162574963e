#pragma once

#include <map>
#include <string>

#include "splatct/common.hpp"
#include "splatct/voxelizer.hpp"

namespace splatct {

// Shared single-file container: one line of compact JSON (terminated by
// '\n') followed by raw little-endian float32 payload. Volumes are stored
// x-fastest; images row-major.

void write_volume(const DensityVolume& vol, const std::string& path);
DensityVolume read_volume(const std::string& path);

void write_image(const Image& img, const std::string& path,
                 const std::map<std::string, double>& extra_meta = {});
Image read_image(const std::string& path,
                 std::map<std::string, double>* extra_meta = nullptr);

/// 8-bit grayscale PNG with linear [window_min, window_max] -> [0,255]
/// windowing; values outside the window clamp.
void write_png_gray8(const Image& img, const std::string& path,
                     double window_min, double window_max);

} // namespace splatct
