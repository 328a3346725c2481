#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvccl/image.hpp"

namespace mvccl {

/// Both ipsilateral views of one breast.
struct BreastRecord {
  std::string episode_id;
  char side = 'L';
  int label = 0;
  Image cc;
  Image mlo;
};

/// CC-as-main followed by MLO-as-main.
std::vector<ViewPair> make_pairs(const BreastRecord& breast);
std::vector<ViewPair> make_pairs(const std::vector<BreastRecord>& breasts);

struct ManifestRow {
  std::string episode_id;
  char side = 'L';
  ViewRole view = ViewRole::cc;
  int label = 0;
  std::string path;
};

inline constexpr const char* kManifestHeader = "episode_id,side,view,label,path";

/// Parses the CSV body. Errors name the 1-based line number.
std::vector<ManifestRow> parse_manifest(const std::string& text);
std::vector<ManifestRow> read_manifest_rows(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows);

struct ManifestLoad {
  std::vector<BreastRecord> breasts;  // in order of first appearance
  std::size_t skipped = 0;            // (episode, side) groups missing a view
};

/// Loads, pairs and preprocesses every image listed in the manifest. Image
/// paths are relative to the manifest's directory.
ManifestLoad load_manifest(const std::string& path, std::size_t target_h, std::size_t target_w);

struct Split {
  std::vector<BreastRecord> train;
  std::vector<BreastRecord> val;
  std::vector<BreastRecord> test;
};

/// Episode-level split: all breasts of an episode land in one part. Episodes
/// are shuffled with `seed`, then the first round(n·train_fraction) go to
/// train and the next round(n·val_fraction) to validation.
Split split_by_episode(const std::vector<BreastRecord>& breasts, double train_fraction, double val_fraction,
                       std::uint64_t seed);

}  // namespace mvccl
