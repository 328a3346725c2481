#include "mvccl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "mvccl/errors.hpp"
#include "mvccl/png_io.hpp"
#include "mvccl/preprocess.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

std::vector<ViewPair> make_pairs(const BreastRecord& breast) {
  ViewPair cc_main{breast.cc, breast.mlo, breast.label, breast.episode_id, breast.side, ViewRole::cc};
  ViewPair mlo_main{breast.mlo, breast.cc, breast.label, breast.episode_id, breast.side, ViewRole::mlo};
  return {std::move(cc_main), std::move(mlo_main)};
}

std::vector<ViewPair> make_pairs(const std::vector<BreastRecord>& breasts) {
  std::vector<ViewPair> pairs;
  pairs.reserve(2 * breasts.size());
  for (const auto& b : breasts) {
    for (auto& p : make_pairs(b)) pairs.push_back(std::move(p));
  }
  return pairs;
}

namespace {

std::string line_error(std::size_t line, const std::string& what) {
  return "manifest line " + std::to_string(line) + ": " + what;
}

}  // namespace

std::vector<ManifestRow> parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  bool header_seen = false;
  std::vector<ManifestRow> rows;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view trimmed = text::trim(line);
    if (trimmed.empty()) continue;
    if (!header_seen) {
      if (trimmed != kManifestHeader) {
        throw DataError(line_error(number, "expected header '" + std::string(kManifestHeader) + "'"));
      }
      header_seen = true;
      continue;
    }
    const auto fields = text::split(trimmed, ',');
    if (fields.size() != 5) {
      throw DataError(line_error(number, "expected 5 fields, got " + std::to_string(fields.size())));
    }
    ManifestRow row;
    row.episode_id = std::string(text::trim(fields[0]));
    if (row.episode_id.empty()) throw DataError(line_error(number, "empty episode_id"));
    const auto side = text::trim(fields[1]);
    if (side != "L" && side != "R") throw DataError(line_error(number, "side must be L or R"));
    row.side = side[0];
    try {
      row.view = parse_view_role(std::string(text::trim(fields[2])));
    } catch (const DataError& e) {
      throw DataError(line_error(number, e.what()));
    }
    const auto label = text::trim(fields[3]);
    if (label != "0" && label != "1") throw DataError(line_error(number, "label must be 0 or 1"));
    row.label = label == "1" ? 1 : 0;
    row.path = std::string(text::trim(fields[4]));
    if (row.path.empty()) throw DataError(line_error(number, "empty path"));
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw DataError("manifest is empty");
  return rows;
}

std::vector<ManifestRow> read_manifest_rows(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_manifest(buffer.str());
}

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest '" + path + "'");
  out << kManifestHeader << '\n';
  for (const auto& r : rows) {
    out << r.episode_id << ',' << r.side << ',' << to_string(r.view) << ',' << r.label << ',' << r.path << '\n';
  }
  if (!out) throw IoError("failed writing manifest '" + path + "'");
}

ManifestLoad load_manifest(const std::string& path, std::size_t target_h, std::size_t target_w) {
  const auto rows = read_manifest_rows(path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();

  struct Group {
    const ManifestRow* cc = nullptr;
    const ManifestRow* mlo = nullptr;
  };
  std::map<std::pair<std::string, char>, std::size_t> index;
  std::vector<Group> groups;
  for (const auto& row : rows) {
    const auto key = std::make_pair(row.episode_id, row.side);
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) groups.emplace_back();
    Group& g = groups[it->second];
    const ManifestRow*& slot = row.view == ViewRole::cc ? g.cc : g.mlo;
    if (slot) {
      throw DataError("duplicate " + to_string(row.view) + " view for " + row.episode_id + "/" + row.side);
    }
    slot = &row;
  }

  ManifestLoad result;
  for (const auto& g : groups) {
    if (!g.cc || !g.mlo) {
      ++result.skipped;
      continue;
    }
    if (g.cc->label != g.mlo->label) {
      throw DataError("conflicting labels for " + g.cc->episode_id + "/" + g.cc->side);
    }
    auto load = [&](const ManifestRow& r) {
      const std::filesystem::path rel(r.path);
      const std::filesystem::path p = rel.is_absolute() ? rel : base / rel;
      return preprocess(read_png(p.string()), target_h, target_w);
    };
    BreastRecord b;
    b.episode_id = g.cc->episode_id;
    b.side = g.cc->side;
    b.label = g.cc->label;
    b.cc = load(*g.cc);
    b.mlo = load(*g.mlo);
    result.breasts.push_back(std::move(b));
  }
  return result;
}

Split split_by_episode(const std::vector<BreastRecord>& breasts, double train_fraction, double val_fraction,
                       std::uint64_t seed) {
  if (train_fraction < 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::string> episodes;
  for (const auto& b : breasts) {
    if (std::find(episodes.begin(), episodes.end(), b.episode_id) == episodes.end()) episodes.push_back(b.episode_id);
  }
  std::sort(episodes.begin(), episodes.end());
  std::mt19937_64 rng(seed);
  std::shuffle(episodes.begin(), episodes.end(), rng);
  const double n = static_cast<double>(episodes.size());
  const auto n_train = static_cast<std::size_t>(std::llround(n * train_fraction));
  const auto n_val = std::min(episodes.size() - n_train, static_cast<std::size_t>(std::llround(n * val_fraction)));
  std::map<std::string, int> part;
  for (std::size_t i = 0; i < episodes.size(); ++i) part[episodes[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);

  Split split;
  for (const auto& b : breasts) {
    switch (part[b.episode_id]) {
      case 0: split.train.push_back(b); break;
      case 1: split.val.push_back(b); break;
      default: split.test.push_back(b); break;
    }
  }
  return split;
}

}  // namespace mvccl
