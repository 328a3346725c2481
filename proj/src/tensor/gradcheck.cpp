#include "mvccl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "mvccl/errors.hpp"

namespace mvccl {

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Probe {
  double value;
  std::uint64_t fingerprint;
};

template <typename T>
Probe evaluate(const std::function<Tensor<T>()>& objective) {
  NoGradGuard no_grad;
  KinkProbe probe;
  const Tensor<T> out = objective();
  if (out.numel() != 1) throw UsageError("finite_diff_check objective must return a scalar");
  return {static_cast<double>(out.item()), probe.fingerprint()};
}

}  // namespace

template <typename T>
GradCheckReport finite_diff_check(const std::function<Tensor<T>()>& objective, std::span<const NamedTensor<T>> params,
                                  double step, double tol) {
  if (!(step > 0.0)) throw UsageError("finite_diff_check step must be positive");

  const Probe base = evaluate(objective);
  const Probe again = evaluate(objective);
  if (base.value != again.value || base.fingerprint != again.fingerprint) {
    throw OracleInvalidError("objective is not deterministic: " + std::to_string(base.value) + " vs " +
                             std::to_string(again.value));
  }

  for (const auto& p : params) p.tensor.node().grad.clear();
  {
    const Tensor<T> loss = objective();
    backward(loss);
  }

  GradCheckReport report;
  report.step = step;
  report.tolerance = tol;
  for (const auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    Tensor<T> param = p.tensor;
    std::vector<double> analytic(param.numel(), 0.0);
    if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), analytic.begin());
    auto values = param.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      values[i] = original + static_cast<T>(step);
      const Probe plus = evaluate(objective);
      values[i] = original - static_cast<T>(step);
      const Probe minus = evaluate(objective);
      values[i] = original;
      if (plus.fingerprint != base.fingerprint || minus.fingerprint != base.fingerprint) {
        ++entry.skipped_kinks;
        continue;
      }
      // Divide by the step actually realised in T, not the nominal one.
      const double realised = static_cast<double>(static_cast<T>(original + static_cast<T>(step))) -
                              static_cast<double>(static_cast<T>(original - static_cast<T>(step)));
      const double numeric = (plus.value - minus.value) / realised;
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(analytic[i] - numeric));
      ++entry.checked;
    }
    entry.passed = entry.max_rel_error < tol;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

template GradCheckReport finite_diff_check<float>(const std::function<Tensor<float>()>&,
                                                  std::span<const NamedTensor<float>>, double, double);
template GradCheckReport finite_diff_check<double>(const std::function<Tensor<double>()>&,
                                                   std::span<const NamedTensor<double>>, double, double);

}  // namespace mvccl
