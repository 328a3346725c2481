#include "mvccl/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvccl/errors.hpp"

namespace mvccl {

namespace stages {

Image threshold_background(const Image& image, float fraction) {
  Image out = image;
  if (out.empty()) return out;
  const float cutoff = fraction * *std::max_element(out.pixels.begin(), out.pixels.end());
  for (auto& p : out.pixels) {
    if (p < cutoff) p = 0.0F;
  }
  return out;
}

Image keep_largest_components(const Image& image) {
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  std::vector<int> component(image.pixels.size(), -1);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < image.pixels.size(); ++start) {
    if (image.pixels[start] <= 0.0F || component[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    std::size_t size = 0;
    component[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      ++size;
      const long r = static_cast<long>(idx / w);
      const long c = static_cast<long>(idx % w);
      for (long dr = -1; dr <= 1; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          const long rr = r + dr;
          const long cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
          const std::size_t n = static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc);
          if (image.pixels[n] > 0.0F && component[n] < 0) {
            component[n] = id;
            stack.push_back(n);
          }
        }
      }
    }
    sizes.push_back(size);
  }
  Image out(h, w);
  if (sizes.empty()) return out;
  const std::size_t largest = *std::max_element(sizes.begin(), sizes.end());
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    if (component[i] >= 0 && sizes[static_cast<std::size_t>(component[i])] == largest) out.pixels[i] = image.pixels[i];
  }
  return out;
}

Image crop_to_foreground(const Image& image) {
  std::size_t top = image.height, bottom = 0, left = image.width, right = 0;
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      if (image.at(r, c) <= 0.0F) continue;
      top = std::min(top, r);
      bottom = std::max(bottom, r);
      left = std::min(left, c);
      right = std::max(right, c);
    }
  }
  if (top > bottom) throw DataError("image has no foreground");
  Image out(bottom - top + 1, right - left + 1);
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) out.at(r, c) = image.at(top + r, left + c);
  }
  return out;
}

bool needs_mirror(const Image& image) {
  const std::size_t w = image.width;
  std::vector<double> cols(w, 0.0);
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < w; ++c) cols[c] += image.at(r, c);
  }
  // Both halves are summed outermost column first, so mirroring the image
  // swaps the two sums exactly.
  double left = 0.0, right = 0.0;
  for (std::size_t i = 0; i < w / 2; ++i) {
    left += cols[i];
    right += cols[w - 1 - i];
  }
  if (left != right) return left > right;
  for (std::size_t i = 0; i < w / 2; ++i) {
    for (std::size_t r = 0; r < image.height; ++r) {
      const float a = image.at(r, i);
      const float b = image.at(r, w - 1 - i);
      if (a != b) return a > b;
    }
  }
  return false;
}

Image pad_to_aspect(const Image& image, std::size_t target_h, std::size_t target_w) {
  const std::size_t h = image.height;
  const std::size_t w = image.width;
  std::size_t new_h = h;
  std::size_t new_w = w;
  if (h * target_w < w * target_h) {
    new_h = (w * target_h + target_w - 1) / target_w;
  } else {
    new_w = (h * target_w + target_h - 1) / target_h;
  }
  // Content stays anchored to the top-right corner.
  Image out(new_h, new_w);
  const std::size_t offset = new_w - w;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) out.at(r, offset + c) = image.at(r, c);
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t h, std::size_t w) {
  if (image.height == h && image.width == w) return image;
  Image out(h, w);
  const double sy = static_cast<double>(image.height) / static_cast<double>(h);
  const double sx = static_cast<double>(image.width) / static_cast<double>(w);
  auto source = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& t) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    t = pos - static_cast<double>(i0);
  };
  for (std::size_t r = 0; r < h; ++r) {
    std::size_t r0, r1;
    double ty;
    source((static_cast<double>(r) + 0.5) * sy - 0.5, image.height, r0, r1, ty);
    for (std::size_t c = 0; c < w; ++c) {
      std::size_t c0, c1;
      double tx;
      source((static_cast<double>(c) + 0.5) * sx - 0.5, image.width, c0, c1, tx);
      const double top = image.at(r0, c0) * (1.0 - tx) + image.at(r0, c1) * tx;
      const double bottom = image.at(r1, c0) * (1.0 - tx) + image.at(r1, c1) * tx;
      out.at(r, c) = static_cast<float>(top * (1.0 - ty) + bottom * ty);
    }
  }
  return out;
}

}  // namespace stages

namespace {

Image clean(const Image& image) { return stages::keep_largest_components(stages::threshold_background(image)); }

Image single_pass(const Image& raw, std::size_t target_h, std::size_t target_w) {
  Image img = stages::crop_to_foreground(clean(raw));
  if (stages::needs_mirror(img)) img = mirror_horizontal(img);
  img = stages::resize_bilinear(stages::pad_to_aspect(img, target_h, target_w), target_h, target_w);
  return clean(img);
}

constexpr int kMaxPasses = 6;

}  // namespace

Image preprocess(const Image& raw, std::size_t target_h, std::size_t target_w) {
  if (raw.empty()) throw DataError("preprocess: empty image");
  if (target_h == 0 || target_w == 0) throw ConfigError("preprocess: zero target size");
  Image current = single_pass(raw, target_h, target_w);
  for (int pass = 1; pass < kMaxPasses; ++pass) {
    Image next = single_pass(current, target_h, target_w);
    if (next == current) break;
    current = std::move(next);
  }
  return current;
}

AugmentDraw sample_augment(std::mt19937_64& rng, std::size_t height, std::size_t width) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto shift = [&](std::size_t extent) {
    const int limit = static_cast<int>(std::floor(0.05 * static_cast<double>(extent)));
    return std::uniform_int_distribution<int>(-limit, limit)(rng);
  };
  AugmentDraw draw;
  draw.flip = unit(rng) < 0.5;
  draw.shift_rows = shift(height);
  draw.shift_cols = shift(width);
  draw.rotation_deg = std::uniform_real_distribution<double>(-5.0, 5.0)(rng);
  return draw;
}

Image apply_augment(const Image& image, const AugmentDraw& draw) {
  const Image src = draw.flip ? flip_vertical(image) : image;
  if (draw.shift_rows == 0 && draw.shift_cols == 0 && draw.rotation_deg == 0.0) return src;
  Image out(src.height, src.width);
  const double theta = draw.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cy = (static_cast<double>(src.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(src.width) - 1.0) / 2.0;
  for (std::size_t r = 0; r < out.height; ++r) {
    for (std::size_t c = 0; c < out.width; ++c) {
      // Inverse map: undo the translation, then rotate back about the centre.
      const double y = static_cast<double>(r) - draw.shift_rows - cy;
      const double x = static_cast<double>(c) - draw.shift_cols - cx;
      const double sy = cos_t * y + sin_t * x + cy;
      const double sx = -sin_t * y + cos_t * x + cx;
      const long ri = std::lround(sy);
      const long ci = std::lround(sx);
      if (ri < 0 || ci < 0 || ri >= static_cast<long>(src.height) || ci >= static_cast<long>(src.width)) continue;
      out.at(r, c) = src.at(static_cast<std::size_t>(ri), static_cast<std::size_t>(ci));
    }
  }
  return out;
}

ViewPair augment(const ViewPair& pair, const AugmentDraw& draw) {
  ViewPair out = pair;
  out.main = apply_augment(pair.main, draw);
  out.aux = apply_augment(pair.aux, draw);
  return out;
}

}  // namespace mvccl
