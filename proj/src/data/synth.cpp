#include "mvccl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <random>

#include "mvccl/errors.hpp"
#include "mvccl/png_io.hpp"
#include "mvccl/preprocess.hpp"

namespace mvccl {

void SynthConfig::validate() const {
  if (n_episodes == 0) throw ConfigError("synth: n_episodes must be positive");
  if (height < 16 || width < 16) throw ConfigError("synth: images must be at least 16x16");
  if (!(positive_rate > 0.0 && positive_rate < 1.0)) throw ConfigError("synth: positive_rate must be in (0, 1)");
  if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) throw ConfigError("synth: distractor_rate must be in [0, 1]");
  if (!(annotation_rate >= 0.0 && annotation_rate <= 1.0)) throw ConfigError("synth: annotation_rate must be in [0, 1]");
  if (!(cross_view_jitter >= 0.0 && cross_view_jitter < static_cast<double>(height))) {
    throw ConfigError("synth: cross_view_jitter must be in [0, height)");
  }
  if (!(lesion_radius_min > 0.0 && lesion_radius_max >= lesion_radius_min)) {
    throw ConfigError("synth: invalid lesion radius range");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be non-negative");
}

namespace {

// Breast silhouette: half-ellipse against the right edge (chest wall),
// taller than the canvas so every view spans the full height.
struct Silhouette {
  double center_row;
  double center_col;
  double semi_rows;
  double semi_cols;

  double radius2(double r, double c) const {
    const double y = (r - center_row) / semi_rows;
    const double x = (c - center_col) / semi_cols;
    return x * x + y * y;
  }
  double half_width(double r) const {
    const double y = (r - center_row) / semi_rows;
    return semi_cols * std::sqrt(std::max(0.0, 1.0 - y * y));
  }
};

Silhouette draw_silhouette(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = static_cast<double>(cfg.height);
  const double w = static_cast<double>(cfg.width);
  return {h / 2.0 + (u(rng) - 0.5) * 0.06 * h, w - 1.0, h * (0.55 + 0.1 * u(rng)), w * (0.75 + 0.1 * u(rng))};
}

struct Lesion {
  double row;
  double col;
  double radius;
};

Image render(const SynthConfig& cfg, const Silhouette& s, const Lesion* lesion, std::mt19937_64& rng) {
  Image img(cfg.height, cfg.width);
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0.0 ? cfg.noise_sigma : 1.0);
  for (std::size_t r = 0; r < cfg.height; ++r) {
    for (std::size_t c = 0; c < cfg.width; ++c) {
      const double rho2 = s.radius2(static_cast<double>(r), static_cast<double>(c));
      double v = rho2 < 1.0 ? 0.25 + 0.4 * std::sqrt(1.0 - rho2) : 0.0;
      if (lesion) {
        const double dy = static_cast<double>(r) - lesion->row;
        const double dx = static_cast<double>(c) - lesion->col;
        const double sigma = lesion->radius / 2.0;
        v += cfg.lesion_contrast * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
      if (cfg.noise_sigma > 0.0) v += noise(rng);
      img.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

void stamp_annotation(Image& img, std::mt19937_64& rng) {
  // Bright tag near the far-left corner, clear of the silhouette.
  const std::size_t tag_h = std::max<std::size_t>(2, img.height / 24);
  const std::size_t tag_w = std::max<std::size_t>(3, img.width / 5);
  const bool top = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
  const std::size_t r0 = top ? 2 : img.height - 2 - tag_h;
  for (std::size_t r = r0; r < r0 + tag_h; ++r) {
    for (std::size_t c = 2; c < 2 + tag_w; ++c) img.at(r, c) = 0.95F;
  }
}

// Rows where a lesion fits comfortably inside the silhouette.
std::pair<double, double> lesion_rows(const SynthConfig& cfg, const Silhouette& s) {
  const double h = static_cast<double>(cfg.height);
  return {std::max(0.2 * h, s.center_row - 0.6 * s.semi_rows), std::min(0.8 * h, s.center_row + 0.6 * s.semi_rows)};
}

double lesion_col(const Silhouette& s, double row, double radius, std::mt19937_64& rng) {
  const double hw = s.half_width(row);
  const double lo = s.center_col - 0.8 * hw;
  const double hi = std::max(lo, s.center_col - radius - 1.0);
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

std::vector<SynthEpisode> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthEpisode> episodes;
  episodes.reserve(cfg.n_episodes);
  for (std::size_t i = 0; i < cfg.n_episodes; ++i) {
    std::mt19937_64 rng(cfg.seed + i);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SynthEpisode ep;
    char id[32];
    std::snprintf(id, sizeof(id), "ep%05zu", i);
    ep.breast.episode_id = id;
    // Exact balance: positives spread evenly through the episode sequence.
    const double p = cfg.positive_rate;
    ep.breast.label = static_cast<int>(std::floor((i + 1) * p) - std::floor(i * p));
    ep.breast.side = u(rng) < 0.5 ? 'L' : 'R';

    const Silhouette cc = draw_silhouette(cfg, rng);
    const Silhouette mlo = draw_silhouette(cfg, rng);
    const double radius = cfg.lesion_radius_min + (cfg.lesion_radius_max - cfg.lesion_radius_min) * u(rng);

    std::optional<Lesion> lesion_cc;
    std::optional<Lesion> lesion_mlo;
    if (ep.breast.label == 1) {
      const auto [lo_c, hi_c] = lesion_rows(cfg, cc);
      const auto [lo_m, hi_m] = lesion_rows(cfg, mlo);
      const double lo = std::max(lo_c, lo_m);
      const double hi = std::max(lo, std::min(hi_c, hi_m));
      const double row = std::uniform_real_distribution<double>(lo, hi)(rng);
      const double j = cfg.cross_view_jitter;
      const double row_m = std::uniform_real_distribution<double>(std::max(lo_m, row - j),
                                                                  std::max(std::max(lo_m, row - j),
                                                                           std::min(hi_m, row + j)))(rng);
      lesion_cc = Lesion{row, lesion_col(cc, row, radius, rng), radius};
      lesion_mlo = Lesion{row_m, lesion_col(mlo, row_m, radius, rng), radius};
    } else if (u(rng) < cfg.distractor_rate) {
      const bool in_cc = u(rng) < 0.5;
      const Silhouette& s = in_cc ? cc : mlo;
      const auto [lo, hi] = lesion_rows(cfg, s);
      const double row = std::uniform_real_distribution<double>(lo, hi)(rng);
      (in_cc ? lesion_cc : lesion_mlo) = Lesion{row, lesion_col(s, row, radius, rng), radius};
    }

    auto view = [&](const Silhouette& s, const std::optional<Lesion>& lesion) {
      Image img = render(cfg, s, lesion ? &*lesion : nullptr, rng);
      if (u(rng) < cfg.annotation_rate) stamp_annotation(img, rng);
      return ep.breast.side == 'L' ? mirror_horizontal(img) : img;
    };
    ep.breast.cc = view(cc, lesion_cc);
    ep.breast.mlo = view(mlo, lesion_mlo);
    ep.lesion_cc = lesion_cc.has_value();
    ep.lesion_mlo = lesion_mlo.has_value();
    if (lesion_cc) ep.lesion_row_cc = lesion_cc->row;
    if (lesion_mlo) ep.lesion_row_mlo = lesion_mlo->row;
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

std::string write_synth_dataset(const std::vector<SynthEpisode>& episodes, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  if (ec) throw IoError("cannot create '" + (fs::path(dir) / "images").string() + "': " + ec.message());
  std::vector<ManifestRow> rows;
  for (const auto& ep : episodes) {
    const auto& b = ep.breast;
    for (const ViewRole role : {ViewRole::cc, ViewRole::mlo}) {
      const std::string rel = "images/" + b.episode_id + "_" + b.side + "_" + to_string(role) + ".png";
      write_png16((fs::path(dir) / rel).string(), role == ViewRole::cc ? b.cc : b.mlo);
      rows.push_back({b.episode_id, b.side, role, b.label, rel});
    }
  }
  const std::string manifest = (fs::path(dir) / "manifest.csv").string();
  write_manifest(manifest, rows);
  return manifest;
}

OracleScores blob_oracle(const std::vector<SynthEpisode>& episodes, BlobOracle kind) {
  OracleScores out;
  for (const auto& ep : episodes) {
    for (const bool cc_main : {true, false}) {
      const bool main = cc_main ? ep.lesion_cc : ep.lesion_mlo;
      bool hit = main;
      if (kind == BlobOracle::either_view) hit = ep.lesion_cc || ep.lesion_mlo;
      if (kind == BlobOracle::both_views) hit = ep.lesion_cc && ep.lesion_mlo;
      out.scores.push_back(hit ? 1.0 : 0.0);
      out.labels.push_back(ep.breast.label);
    }
  }
  return out;
}

std::vector<BreastRecord> preprocess_episodes(const std::vector<SynthEpisode>& episodes, std::size_t target_h,
                                              std::size_t target_w) {
  std::vector<BreastRecord> out;
  out.reserve(episodes.size());
  for (const auto& ep : episodes) {
    BreastRecord b = ep.breast;
    b.cc = preprocess(ep.breast.cc, target_h, target_w);
    b.mlo = preprocess(ep.breast.mlo, target_h, target_w);
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace mvccl
