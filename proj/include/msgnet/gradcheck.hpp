#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msgnet/tensor.hpp"

namespace msgnet {

struct GradCheckOptions {
  double step = 1e-6;
  // 0 checks every element; otherwise a seeded subset of this many entries
  // per tensor.
  std::size_t max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::vector<double> per_tensor;
};

// Compares tape gradients of `loss_fn` with central differences over every
// tensor in `wrt`. Relative error per tensor is
// max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-6).
GradCheckResult check_gradients(const std::function<Tensord()>& loss_fn,
                                std::vector<Tensord> wrt,
                                const GradCheckOptions& options = {});

}  // namespace msgnet
