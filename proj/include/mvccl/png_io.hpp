#pragma once

#include <string>

#include "mvccl/image.hpp"

namespace mvccl {

/// Reads an 8- or 16-bit grayscale PNG, scaled to [0, 1] by the dtype maximum.
/// Throws IoError when the file cannot be opened or decoded, DataError for
/// colour images.
Image read_png(const std::string& path);

/// Writes a 16-bit grayscale PNG; values are clamped to [0, 1] first.
void write_png16(const std::string& path, const Image& image);

}  // namespace mvccl
