#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvccl/gradcheck.hpp"
#include "mvccl/model_config.hpp"

namespace mvccl {

/// 16×8 input, two narrow stages, D = D' = 4, two heads.
ModelConfig tiny_gradcheck_config();

struct GroupCheck {
  std::string scope;  // "backbone", "gcm", "lcm", "sa", "classifier" or "total_loss"
  std::string group;  // parameter group (first name component)
  std::size_t params = 0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct ModelGradCheck {
  std::string variant;
  std::vector<GroupCheck> rows;
  bool passed() const;
};

/// Double-precision finite-difference check of every enabled submodule in
/// isolation (random inputs, random linear read-out) and of total_loss end
/// to end on a two-pair batch. Biases are drawn away from zero first so no
/// mapped global feature sits at the origin, where the cosine has no
/// derivative.
ModelGradCheck model_gradcheck(const ModelConfig& config, std::uint64_t seed, double step, double tol);

/// "variant,scope,group,params,checked,skipped_kinks,max_rel_error,passed"
void write_gradcheck_csv(std::ostream& out, const std::vector<ModelGradCheck>& checks, double tol);

}  // namespace mvccl
