#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvccl/tensor.hpp"

namespace mvccl {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  /// Elements whose ±step perturbation crossed a relu/max/clamp branch.
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  double step = 0.0;
  double tolerance = 0.0;
  std::vector<GradCheckEntry> entries;

  double max_rel_error() const;
  bool passed() const;
};

/// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares the reverse-mode gradient of `objective` against central
/// differences (f(θ+h) − f(θ−h)) / 2h for every scalar of every parameter.
/// `objective` must rebuild its graph from the current parameter values on
/// each call. Perturbations that change a branch decision are excluded and
/// counted. A parameter passes when its max relative error is below `tol`
/// (strictly). Throws OracleInvalidError if two evaluations at the same point
/// disagree.
template <typename T>
GradCheckReport finite_diff_check(const std::function<Tensor<T>()>& objective, std::span<const NamedTensor<T>> params,
                                  double step, double tol);

extern template GradCheckReport finite_diff_check<float>(const std::function<Tensor<float>()>&,
                                                         std::span<const NamedTensor<float>>, double, double);
extern template GradCheckReport finite_diff_check<double>(const std::function<Tensor<double>()>&,
                                                          std::span<const NamedTensor<double>>, double, double);

}  // namespace mvccl
