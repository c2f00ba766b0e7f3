#include "msgnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace msgnet {

GradCheckResult check_gradients(const std::function<Tensord()>& loss_fn,
                                std::vector<Tensord> wrt, const GradCheckOptions& options) {
  auto& tape = Tape<double>::current();
  tape.reset();
  for (auto& t : wrt) {
    if (!t.requires_grad()) t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tensord loss = loss_fn();
    tape.backward(loss);
  }
  tape.reset();

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  NoGradGuard no_grad;
  for (auto& t : wrt) {
    std::vector<std::size_t> entries(t.numel());
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_tensor && entries.size() > options.max_entries_per_tensor) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(options.max_entries_per_tensor);
    }
    double max_diff = 0.0, max_a = 0.0, max_n = 0.0;
    auto data = t.mutable_data();
    for (std::size_t i : entries) {
      const double saved = data[i];
      data[i] = saved + options.step;
      const double up = loss_fn().item();
      data[i] = saved - options.step;
      const double down = loss_fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = t.grad()[i];
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
      max_a = std::max(max_a, std::abs(analytic));
      max_n = std::max(max_n, std::abs(numeric));
    }
    const double rel = max_diff / std::max({max_a, max_n, 1e-6});
    result.per_tensor.push_back(rel);
    result.max_rel_error = std::max(result.max_rel_error, rel);
  }
  return result;
}

}  // namespace msgnet
