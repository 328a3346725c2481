#include "mvccl/model_gradcheck.hpp"

#include <functional>
#include <map>
#include <ostream>
#include <random>

#include "mvccl/model.hpp"
#include "mvccl/text_util.hpp"

namespace mvccl {

namespace {

using TensorD = Tensor<double>;

TensorD random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return TensorD::from_data(std::move(shape), std::move(v));
}

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dist(0.0F, 1.0F);
  Image img(h, w);
  for (auto& p : img.pixels) p = dist(rng);
  return img;
}

std::string group_of(const std::string& name) { return name.substr(0, name.find('.')); }

/// Σ w ⊙ x for a fixed random w, so every output element carries gradient.
TensorD readout(const TensorD& x, std::mt19937_64& rng) { return sum(mul(x, random_tensor(x.shape(), rng, -1, 1))); }

std::vector<NamedTensor<double>> with_prefix(const std::vector<NamedTensor<double>>& all, const std::string& prefix) {
  std::vector<NamedTensor<double>> out;
  for (const auto& p : all) {
    if (p.name.starts_with(prefix)) out.push_back(p);
  }
  return out;
}

void add_rows(const std::string& scope, const GradCheckReport& report, std::vector<GroupCheck>& rows) {
  std::map<std::string, GroupCheck> groups;
  std::vector<std::string> order;
  for (const auto& e : report.entries) {
    const auto g = group_of(e.name);
    auto [it, inserted] = groups.try_emplace(g);
    if (inserted) {
      order.push_back(g);
      it->second.scope = scope;
      it->second.group = g;
    }
    auto& row = it->second;
    ++row.params;
    row.checked += e.checked;
    row.skipped_kinks += e.skipped_kinks;
    row.max_rel_error = std::max(row.max_rel_error, e.max_rel_error);
    // A parameter with every element on a kink was not checked at all.
    row.passed = row.passed && e.passed && e.checked > 0;
  }
  for (const auto& g : order) rows.push_back(groups.at(g));
}

}  // namespace

ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.input_height = 16;
  c.input_width = 8;
  c.backbone_stages = 2;
  c.backbone_base_width = 3;
  c.backbone_max_width = 4;
  c.feature_width = 4;
  c.attention_width = 4;
  c.heads = 2;
  c.classifier_hidden = 5;
  return c;
}

bool ModelGradCheck::passed() const {
  for (const auto& r : rows) {
    if (!r.passed) return false;
  }
  return !rows.empty();
}

ModelGradCheck model_gradcheck(const ModelConfig& config, std::uint64_t seed, double step, double tol) {
  config.validate();
  std::mt19937_64 rng(seed);
  MvcclModel<double> model(config, seed);
  for (auto& [name, t] : model.parameters()) {
    if (!name.ends_with("bias")) continue;
    auto tensor = t;
    std::uniform_real_distribution<double> dist(-0.3, 0.3);
    for (auto& x : tensor.mutable_data()) x = dist(rng);
  }
  const auto all = model.parameters();
  ModelGradCheck result;
  result.variant = variant_name(config.enabled);

  auto check = [&](const std::string& scope, const std::function<TensorD()>& objective,
                   const std::vector<NamedTensor<double>>& params) {
    const auto report =
        finite_diff_check<double>(objective, std::span<const NamedTensor<double>>(params), step, tol);
    add_rows(scope, report, result.rows);
  };

  const Shape fmap{config.feature_height(), config.feature_cols(), config.feature_width};
  const auto x = image_tensor<double>(random_image(config.input_height, config.input_width, rng));
  const auto u_m = random_tensor(fmap, rng, -1, 1);
  const auto u_a = random_tensor(fmap, rng, -1, 1);

  {
    const auto w = random_tensor(fmap, rng, -1, 1);
    check("backbone", [&] { return sum(mul(model.backbone_forward(x), w)); }, with_prefix(all, "backbone."));
  }
  if (config.enabled.gcm) {
    const std::uint64_t s = rng();
    check(
        "gcm",
        [&] {
          std::mt19937_64 r(s);
          const auto out = model.gcm_forward(u_m, u_a);
          const auto sim =
              consistency_loss(out.g_m, out.g_a, out.g_tilde_m, out.g_tilde_a, config.epsilon);
          return add(readout(out.z_g, r), sim);
        },
        with_prefix(all, "gcm."));
  }
  if (config.has_local_branch()) {
    const std::uint64_t s = rng();
    const bool lcm = config.enabled.lcm;
    check(
        lcm ? "lcm" : "sa",
        [&] {
          std::mt19937_64 r(s);
          const auto out = lcm ? model.lcm_forward(u_m, u_a) : model.sa_forward(u_m, u_a);
          return add(readout(out.z_m, r), readout(out.z_a, r));
        },
        with_prefix(all, lcm ? "lcm." : "sa."));
  }
  {
    const auto features = random_tensor({config.classifier_input_width()}, rng, -1, 1);
    check("classifier", [&] { return model.fusion_classify({features}); }, with_prefix(all, "classifier."));
  }
  {
    std::vector<ViewPair> batch(2);
    for (int label = 0; label < 2; ++label) {
      batch[label].main = random_image(config.input_height, config.input_width, rng);
      batch[label].aux = random_image(config.input_height, config.input_width, rng);
      batch[label].label = 1 - label;
    }
    check("total_loss", [&] { return total_loss(model, std::span<const ViewPair>(batch)).total; }, all);
  }
  return result;
}

void write_gradcheck_csv(std::ostream& out, const std::vector<ModelGradCheck>& checks, double tol) {
  out << "# finite-difference gradient check, tolerance " << text::format_double(tol) << '\n';
  out << "variant,scope,group,params,checked,skipped_kinks,max_rel_error,passed\n";
  for (const auto& c : checks) {
    for (const auto& r : c.rows) {
      out << c.variant << ',' << r.scope << ',' << r.group << ',' << r.params << ',' << r.checked << ','
          << r.skipped_kinks << ',' << text::format_double(r.max_rel_error) << ',' << (r.passed ? "pass" : "fail")
          << '\n';
    }
  }
}

}  // namespace mvccl
