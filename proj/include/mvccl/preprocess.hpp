#pragma once

#include <cstddef>
#include <random>

#include "mvccl/image.hpp"

namespace mvccl {

inline constexpr float kBackgroundFraction = 0.05F;

/// Raw image → canonical target-size image:
///   1. zero pixels below 5% of the maximum, keep the largest 8-connected
///      foreground component (all components of that size on ties);
///   2. crop to the foreground bounding box;
///   3. mirror when the left half outweighs the right half;
///   4. zero-pad to the target aspect ratio and resize bilinearly.
/// The result is cleaned again (threshold + component keep) and the pipeline
/// is repeated until its output no longer changes, so the returned image is a
/// fixed point. Throws DataError when no foreground survives.
Image preprocess(const Image& raw, std::size_t target_h, std::size_t target_w);

namespace stages {

/// Pixels below fraction·max set to zero.
Image threshold_background(const Image& image, float fraction = kBackgroundFraction);
Image keep_largest_components(const Image& image);
Image crop_to_foreground(const Image& image);
/// True when the image would be mirrored by the orientation rule. Exact
/// under mirroring: needs_mirror(mirror(x)) == !needs_mirror(x) unless x is
/// mirror-symmetric.
bool needs_mirror(const Image& image);
/// Pads with zeros on the left or bottom so that h:w matches target_h:target_w.
Image pad_to_aspect(const Image& image, std::size_t target_h, std::size_t target_w);
/// Half-pixel-centre bilinear resampling with edge clamping.
Image resize_bilinear(const Image& image, std::size_t h, std::size_t w);

}  // namespace stages

struct AugmentDraw {
  bool flip = false;
  int shift_rows = 0;
  int shift_cols = 0;
  double rotation_deg = 0.0;

  bool is_identity() const { return !flip && shift_rows == 0 && shift_cols == 0 && rotation_deg == 0.0; }
};

/// Vertical flip with p = 0.5, integer translation up to ±5% of each
/// dimension, rotation in [−5°, 5°].
AugmentDraw sample_augment(std::mt19937_64& rng, std::size_t height, std::size_t width);

/// Applies the same draw to both views (nearest-neighbour, zero fill).
ViewPair augment(const ViewPair& pair, const AugmentDraw& draw);
Image apply_augment(const Image& image, const AugmentDraw& draw);

}  // namespace mvccl
