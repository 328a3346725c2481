#pragma once

// Synthetic paired-view generator. Each episode is one breast with a CC and
// an MLO view. Positives carry a Gaussian lesion in both views at matching
// heights; negatives carry, with probability distractor_rate, the same
// lesion in exactly one view.

#include <cstdint>
#include <string>
#include <vector>

#include "mvccl/dataset.hpp"

namespace mvccl {

struct SynthConfig {
  std::size_t n_episodes = 600;
  std::size_t height = 112;  // raw image size, before preprocessing
  std::size_t width = 64;
  double lesion_radius_min = 6.0;
  double lesion_radius_max = 9.0;
  double lesion_contrast = 0.35;
  double cross_view_jitter = 4.0;
  double distractor_rate = 0.8;
  double noise_sigma = 0.02;
  double positive_rate = 0.5;
  double annotation_rate = 0.5;  // chance of a bright text-like tag in a corner
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthEpisode {
  BreastRecord breast;  // raw images; side 'L' images are mirrored
  bool lesion_cc = false;
  bool lesion_mlo = false;
  double lesion_row_cc = -1.0;
  double lesion_row_mlo = -1.0;
};

/// Episode i draws from its own generator seeded with seed + i.
std::vector<SynthEpisode> synth_generate(const SynthConfig& config);

/// Preprocessed in-memory breasts (same pipeline as load_manifest, without
/// the 16-bit PNG round trip).
std::vector<BreastRecord> preprocess_episodes(const std::vector<SynthEpisode>& episodes, std::size_t target_h,
                                              std::size_t target_w);

/// Writes images/<episode>_<side>_<view>.png and manifest.csv under `dir`.
/// Returns the manifest path.
std::string write_synth_dataset(const std::vector<SynthEpisode>& episodes, const std::string& dir);

enum class BlobOracle { main_view, either_view, both_views };

/// Ground-truth lesion indicator per ViewPair, in make_pairs order
/// (CC-as-main, then MLO-as-main for each episode).
struct OracleScores {
  std::vector<double> scores;
  std::vector<int> labels;
};
OracleScores blob_oracle(const std::vector<SynthEpisode>& episodes, BlobOracle kind);

}  // namespace mvccl
