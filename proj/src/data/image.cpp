#include "mvccl/image.hpp"

#include "mvccl/errors.hpp"

namespace mvccl {

Image mirror_horizontal(const Image& image) {
  Image out(image.height, image.width);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) out.at(r, image.width - 1 - c) = image.at(r, c);
  }
  return out;
}

Image flip_vertical(const Image& image) {
  Image out(image.height, image.width);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) out.at(image.height - 1 - r, c) = image.at(r, c);
  }
  return out;
}

std::string to_string(ViewRole role) { return role == ViewRole::cc ? "CC" : "MLO"; }

ViewRole parse_view_role(const std::string& text) {
  if (text == "CC" || text == "cc") return ViewRole::cc;
  if (text == "MLO" || text == "mlo") return ViewRole::mlo;
  throw DataError("unknown view '" + text + "' (expected CC or MLO)");
}

}  // namespace mvccl
