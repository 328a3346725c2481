// mvccl: synthetic data, training, evaluation, ablation and gradient checks.
//
// Exit codes: 0 success, 1 usage/config error, 2 data or I/O error,
// 3 numerical failure (divergence, failed gradient check).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "mvccl/ablation.hpp"
#include "mvccl/errors.hpp"
#include "mvccl/metrics.hpp"
#include "mvccl/model_gradcheck.hpp"
#include "mvccl/run_config.hpp"
#include "mvccl/synth.hpp"
#include "mvccl/text_util.hpp"
#include "mvccl/train.hpp"

namespace fs = std::filesystem;
using namespace mvccl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::string> parse_variants(const std::string& text) {
  if (text == "all") return ablation_variant_names();
  std::vector<std::string> out;
  for (const auto& v : text::split(text, ',')) {
    const auto name = std::string(text::trim(v));
    out.push_back(variant_name(variant_flags(name)));
  }
  return out;
}

std::string fmt(double v) { return std::isnan(v) ? std::string("nan") : text::format_double(v); }

// ---------------------------------------------------------------- synth

struct SynthArgs {
  SynthConfig config;
  std::string out;
};

int run_synth(const SynthArgs& args) {
  const auto& sc = args.config;
  sc.validate();
  ensure_dir(args.out);
  const auto episodes = synth_generate(sc);
  const auto manifest = write_synth_dataset(episodes, args.out);

  std::ostringstream echo;
  echo << "synth.n_episodes=" << sc.n_episodes << '\n'
       << "synth.height=" << sc.height << '\n'
       << "synth.width=" << sc.width << '\n'
       << "synth.lesion_radius_min=" << text::format_double(sc.lesion_radius_min) << '\n'
       << "synth.lesion_radius_max=" << text::format_double(sc.lesion_radius_max) << '\n'
       << "synth.lesion_contrast=" << text::format_double(sc.lesion_contrast) << '\n'
       << "synth.cross_view_jitter=" << text::format_double(sc.cross_view_jitter) << '\n'
       << "synth.distractor_rate=" << text::format_double(sc.distractor_rate) << '\n'
       << "synth.noise_sigma=" << text::format_double(sc.noise_sigma) << '\n'
       << "synth.positive_rate=" << text::format_double(sc.positive_rate) << '\n'
       << "synth.annotation_rate=" << text::format_double(sc.annotation_rate) << '\n'
       << "synth.seed=" << sc.seed << '\n';
  write_file(fs::path(args.out) / "config.echo", echo.str());

  std::size_t positives = 0;
  for (const auto& ep : episodes) positives += ep.breast.label == 1;
  std::cout << "episodes: " << episodes.size() << " (" << positives << " positive)\n"
            << "pairs: " << 2 * episodes.size() << '\n'
            << "manifest: " << manifest << '\n';
  const std::pair<const char*, BlobOracle> oracles[] = {{"main_view", BlobOracle::main_view},
                                                        {"either_view", BlobOracle::either_view},
                                                        {"both_views", BlobOracle::both_views}};
  for (const auto& [name, kind] : oracles) {
    const auto o = blob_oracle(episodes, kind);
    double auc = std::numeric_limits<double>::quiet_NaN();
    try {
      auc = auc_roc(o.scores, o.labels);
    } catch (const UndefinedMetricError&) {
    }
    std::cout << "oracle_auc." << name << ": " << fmt(auc) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> resume;
};

/// The split settings travel with the checkpoint so eval can find the test split.
Checkpoint with_data_keys(Checkpoint ckpt, const DataConfig& data) {
  if (!ckpt.has_state("data.split_seed")) {
    for (auto& kv : to_key_values(data)) ckpt.state.push_back(std::move(kv));
  }
  return ckpt;
}

/// Previous rows up to and including `epochs_done`, so a resumed run keeps one
/// continuous log.
std::vector<std::string> previous_metric_rows(const fs::path& path, std::size_t epochs_done) {
  std::vector<std::string> rows;
  if (!fs::exists(path)) return rows;
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto epoch = text::parse_size(line.substr(0, line.find(',')), "metrics epoch");
    if (epoch <= epochs_done) rows.push_back(line);
  }
  return rows;
}

template <typename T>
int train_with(const RunConfig& cfg, const TrainArgs& args, const Split& split, const std::optional<Checkpoint>& resume,
               const std::optional<Checkpoint>& resume_best) {
  MvcclModel<T> model(cfg.model, cfg.train.seed);
  FitOptions options;
  if (resume) options.resume_from = &*resume;
  if (resume_best) options.resume_best = &*resume_best;
  options.on_epoch = [](const EpochLog& e) {
    std::cout << "epoch " << e.epoch << ": train_loss=" << fmt(e.train_loss) << " val_bce=" << fmt(e.val_bce)
              << " val_auc=" << fmt(e.val_auc) << " lr=" << fmt(e.lr) << std::endl;
  };
  const auto result = fit(model, split.train, split.val, cfg.train, options);

  const fs::path out(args.out);
  with_data_keys(result.best, cfg.data).save((out / "checkpoint.bin").string());
  with_data_keys(result.last, cfg.data).save((out / "last.bin").string());

  std::ostringstream metrics;
  write_metrics_csv(metrics, result.log);
  std::string text = metrics.str();
  if (resume) {
    const auto done = text::parse_size(resume->state_value("epochs_done"), "epochs_done");
    std::string merged = std::string(kMetricsHeader) + "\n";
    for (const auto& row : previous_metric_rows(out / "metrics.csv", done)) merged += row + "\n";
    merged += text.substr(text.find('\n') + 1);
    text = merged;
  }
  write_file(out / "metrics.csv", text);

  if (result.best.state_value("best_epoch") == "0") {
    std::cout << "best_val_auc: none (no epoch completed; checkpoint holds the initial weights)\n";
  } else {
    std::cout << "best_val_auc: " << result.best.state_value("best_val_auc") << " (epoch "
              << result.best.state_value("best_epoch") << ")\n";
  }
  if (result.diverged) {
    std::cerr << "training diverged: " << result.divergence << "; last finite state saved to last.bin\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int run_train(const TrainArgs& args) {
  RunConfig cfg = load_run_config(RunConfig{}, args.config, args.sets);
  if (args.seed) cfg.train.seed = *args.seed;

  std::optional<Checkpoint> resume;
  std::optional<Checkpoint> resume_best;
  if (args.resume) {
    resume = Checkpoint::load(*args.resume);
    cfg.model = model_config_from(*resume);
    cfg.train.precision = precision_of(*resume);
    const auto best_path = fs::path(args.out) / "checkpoint.bin";
    if (fs::exists(best_path)) resume_best = Checkpoint::load(best_path.string());
  }

  ensure_dir(args.out);
  write_file(fs::path(args.out) / "config.echo", echo_config(cfg));

  const auto loaded = load_manifest(args.data, cfg.model.input_height, cfg.model.input_width);
  const auto split =
      split_by_episode(loaded.breasts, cfg.data.train_fraction, cfg.data.val_fraction, cfg.data.split_seed);
  std::cout << "breasts: " << loaded.breasts.size() << " (skipped " << loaded.skipped << " incomplete)\n"
            << "split: train " << split.train.size() << ", val " << split.val.size() << ", test "
            << split.test.size() << '\n';

  return cfg.train.precision == Precision::f32 ? train_with<float>(cfg, args, split, resume, resume_best)
                                               : train_with<double>(cfg, args, split, resume, resume_best);
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string level = "image";
  std::string split = "test";
  std::size_t bootstrap = 2000;
  std::uint64_t seed = 0;
  std::vector<std::string> sets;
};

int run_eval(const EvalArgs& args) {
  if (args.level != "image" && args.level != "breast") throw UsageError("--level must be image or breast");
  const auto ckpt = Checkpoint::load(args.checkpoint);
  RunConfig cfg;
  cfg.model = model_config_from(ckpt);
  for (const auto& [k, v] : ckpt.state) {
    if (k.starts_with("data.")) apply_setting(cfg, k, v);
  }
  for (const auto& s : args.sets) {
    const auto [k, v] = split_setting(s);
    if (k.starts_with("model.")) {
      // The checkpoint fixes the model; a conflicting override is a mismatch.
      ModelConfig requested = cfg.model;
      apply_key_value(requested, k, v);
      if (!(requested == cfg.model)) {
        throw ConfigError("checkpoint model (" + std::to_string(cfg.model.input_height) + "x" +
                          std::to_string(cfg.model.input_width) + ", D=" + std::to_string(cfg.model.feature_width) +
                          ") does not match requested " + k + "=" + v);
      }
      continue;
    }
    apply_setting(cfg, k, v);
  }
  cfg.data.validate();

  ensure_dir(args.out);
  std::string echo = echo_config(cfg);
  echo += "eval.checkpoint=" + args.checkpoint + "\neval.level=" + args.level + "\neval.split=" + args.split +
          "\neval.bootstrap=" + std::to_string(args.bootstrap) + "\neval.seed=" + std::to_string(args.seed) + "\n";
  write_file(fs::path(args.out) / "config.echo", echo);

  const auto loaded = load_manifest(args.data, cfg.model.input_height, cfg.model.input_width);
  std::vector<BreastRecord> selected;
  if (args.split == "all") {
    selected = loaded.breasts;
  } else {
    auto split =
        split_by_episode(loaded.breasts, cfg.data.train_fraction, cfg.data.val_fraction, cfg.data.split_seed);
    if (args.split == "train") {
      selected = std::move(split.train);
    } else if (args.split == "val") {
      selected = std::move(split.val);
    } else if (args.split == "test") {
      selected = std::move(split.test);
    } else {
      throw UsageError("--split must be all, train, val or test");
    }
  }
  const auto pairs = make_pairs(selected);
  if (pairs.empty()) throw DataError("no pairs in the selected split '" + args.split + "'");

  ScoredSet scored = precision_of(ckpt) == Precision::f32
                         ? score_pairs(load_model<float>(ckpt), std::span<const ViewPair>(pairs))
                         : score_pairs(load_model<double>(ckpt), std::span<const ViewPair>(pairs));
  if (args.level == "breast") scored = breast_level(scored);

  const auto scores = scores_of(scored);
  const auto labels = labels_of(scored);
  std::vector<std::pair<std::string, EvalReport>> rows;
  for (const Metric m : {Metric::auc_roc, Metric::auc_pr}) {
    rows.emplace_back(args.level, bootstrap_ci(scores, labels, m, args.bootstrap, 0.95, args.seed));
  }
  std::ostringstream csv;
  write_reports_csv(csv,
                    rows,
                    "split=" + args.split + " examples=" + std::to_string(scored.size()) +
                        " replicates=" + std::to_string(args.bootstrap) + " seed=" + std::to_string(args.seed) +
                        " level=0.95");
  write_file(fs::path(args.out) / "eval.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::string data;
  std::string out;
  std::string variants = "all";
  std::size_t seeds = 3;
  std::optional<std::uint64_t> seed;
};

int run_ablate(const AblateArgs& args) {
  RunConfig cfg = load_run_config(RunConfig{}, args.config, args.sets);
  if (args.seed) cfg.train.seed = *args.seed;
  const auto variants = parse_variants(args.variants);
  if (args.seeds == 0) throw UsageError("--seeds must be >= 1");

  ensure_dir(args.out);
  std::string echo = echo_config(cfg);
  echo += "ablate.variants=" + args.variants + "\nablate.seeds=" + std::to_string(args.seeds) + "\n";
  write_file(fs::path(args.out) / "config.echo", echo);

  const auto loaded = load_manifest(args.data, cfg.model.input_height, cfg.model.input_width);
  const auto split =
      split_by_episode(loaded.breasts, cfg.data.train_fraction, cfg.data.val_fraction, cfg.data.split_seed);
  std::cout << "split: train " << split.train.size() << ", val " << split.val.size() << ", test "
            << split.test.size() << '\n';

  std::vector<AblationRow> rows;
  bool diverged = false;
  for (std::size_t s = 0; s < args.seeds; ++s) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.train.seed + s;
    const auto part = ablation_run(split, cfg.model, variants, tc, [](const AblationRow& r) {
      std::cout << r.variant << " seed " << r.seed << ": test_auc=" << fmt(r.test_auc)
                << " best_val_auc=" << fmt(r.best_val_auc) << (r.diverged ? " (diverged)" : "") << std::endl;
    });
    for (const auto& r : part) diverged = diverged || r.diverged;
    rows.insert(rows.end(), part.begin(), part.end());
  }

  const std::string comment = "image-level test AUC-ROC; seeds " + std::to_string(cfg.train.seed) + ".." +
                              std::to_string(cfg.train.seed + args.seeds - 1) + "; epochs " +
                              std::to_string(cfg.train.epochs);
  std::ostringstream runs;
  write_ablation_runs_csv(runs, rows, comment);
  write_file(fs::path(args.out) / "ablation_runs.csv", runs.str());
  std::ostringstream table;
  write_ablation_csv(table, summarize_ablation(rows), comment);
  write_file(fs::path(args.out) / "ablation.csv", table.str());
  std::cout << table.str();
  return diverged ? kExitNumerical : kExitOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::optional<std::string> config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  double step = 1e-5;
  std::string variants = "all";
  std::optional<std::string> out;
};

int run_gradcheck(const GradcheckArgs& args) {
  RunConfig base;
  base.model = tiny_gradcheck_config();
  const RunConfig cfg = load_run_config(base, args.config, args.sets);
  std::vector<ModelGradCheck> checks;
  for (const auto& v : parse_variants(args.variants)) {
    ModelConfig mc = cfg.model;
    mc.enabled = variant_flags(v);
    checks.push_back(model_gradcheck(mc, args.seed, args.step, args.tol));
  }
  std::ostringstream csv;
  write_gradcheck_csv(csv, checks, args.tol);
  if (args.out) {
    ensure_dir(*args.out);
    write_file(fs::path(*args.out) / "config.echo", echo_config(cfg));
    write_file(fs::path(*args.out) / "gradcheck.csv", csv.str());
  }
  std::cout << csv.str();
  bool ok = true;
  for (const auto& c : checks) ok = ok && c.passed();
  std::cout << (ok ? "gradcheck: pass" : "gradcheck: FAIL") << '\n';
  return ok ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-view classifier with cross-view consistency and co-occurrence learning"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic paired-view dataset");
  synth_cmd->add_option("--n", synth.config.n_episodes, "Episodes (one breast each)");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth.config.seed, "Generator seed");
  synth_cmd->add_option("--distractor-rate", synth.config.distractor_rate, "Single-view blob rate in negatives");
  synth_cmd->add_option("--positive-rate", synth.config.positive_rate, "Fraction of positive episodes");
  synth_cmd->add_option("--jitter", synth.config.cross_view_jitter, "Cross-view row jitter (pixels)");
  synth_cmd->add_option("--noise-sigma", synth.config.noise_sigma, "Gaussian noise sigma");
  synth_cmd->add_option("--contrast", synth.config.lesion_contrast, "Lesion peak contrast");
  synth_cmd->add_option("--radius-min", synth.config.lesion_radius_min, "Smallest lesion radius (pixels)");
  synth_cmd->add_option("--radius-max", synth.config.lesion_radius_max, "Largest lesion radius (pixels)");
  synth_cmd->add_option("--annotation-rate", synth.config.annotation_rate, "Chance of a corner text tag");
  synth_cmd->add_option("--height", synth.config.height, "Raw image height");
  synth_cmd->add_option("--width", synth.config.width, "Raw image width");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train on a manifest");
  train_cmd->add_option("--config", train.config, "key=value config file");
  train_cmd->add_option("--set", train.sets, "Override key=value (repeatable)");
  train_cmd->add_option("--data", train.data, "Manifest CSV")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--seed", train.seed, "Training seed (overrides train.seed)");
  train_cmd->add_option("--resume", train.resume, "Continue from a last.bin checkpoint");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score a split and bootstrap AUC-ROC / AUC-PR");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data, "Manifest CSV")->required();
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  eval_cmd->add_option("--level", eval.level, "image or breast");
  eval_cmd->add_option("--split", eval.split, "all, train, val or test");
  eval_cmd->add_option("--bootstrap", eval.bootstrap, "Bootstrap replicates (0: point estimates only)");
  eval_cmd->add_option("--seed", eval.seed, "Bootstrap seed");
  eval_cmd->add_option("--set", eval.sets, "Override data.* key=value (repeatable)");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "Train and test each module combination");
  ablate_cmd->add_option("--config", ablate.config, "key=value config file");
  ablate_cmd->add_option("--set", ablate.sets, "Override key=value (repeatable)");
  ablate_cmd->add_option("--data", ablate.data, "Manifest CSV")->required();
  ablate_cmd->add_option("--out", ablate.out, "Output directory")->required();
  ablate_cmd->add_option("--variants", ablate.variants, "Comma list of variants, or all");
  ablate_cmd->add_option("--seeds", ablate.seeds, "Number of consecutive seeds");
  ablate_cmd->add_option("--seed", ablate.seed, "First seed (overrides train.seed)");

  GradcheckArgs gradcheck;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  gradcheck_cmd->add_option("--config", gradcheck.config, "key=value config file");
  gradcheck_cmd->add_option("--set", gradcheck.sets, "Override key=value (repeatable)");
  gradcheck_cmd->add_option("--seed", gradcheck.seed, "Seed for weights and inputs");
  gradcheck_cmd->add_option("--tol", gradcheck.tol, "Max relative error");
  gradcheck_cmd->add_option("--step", gradcheck.step, "Central-difference step");
  gradcheck_cmd->add_option("--variants", gradcheck.variants, "Comma list of variants, or all");
  gradcheck_cmd->add_option("--out", gradcheck.out, "Optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train);
    if (*eval_cmd) return run_eval(eval);
    if (*ablate_cmd) return run_ablate(ablate);
    if (*gradcheck_cmd) return run_gradcheck(gradcheck);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const OracleInvalidError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
