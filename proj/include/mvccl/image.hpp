#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mvccl {

/// Grayscale image, row-major, intensities nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0F) : height(h), width(w), pixels(h * w, fill) {}

  float& at(std::size_t row, std::size_t col) { return pixels[row * width + col]; }
  float at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  bool empty() const { return pixels.empty(); }

  bool operator==(const Image&) const = default;
};

Image mirror_horizontal(const Image& image);
Image flip_vertical(const Image& image);

enum class ViewRole { cc, mlo };

std::string to_string(ViewRole role);
ViewRole parse_view_role(const std::string& text);

/// One training example: the view being classified, its ipsilateral
/// partner, and the breast-level label.
struct ViewPair {
  Image main;
  Image aux;
  int label = 0;
  std::string episode_id;
  char side = 'L';
  ViewRole main_role = ViewRole::cc;
};

}  // namespace mvccl
