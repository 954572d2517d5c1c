#include "isample/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace isample::nn {

GradCheckReport check_gradients(const std::function<double()>& loss,
                                const std::vector<GradTarget>& targets,
                                const GradCheckOptions& options) {
  GradCheckReport report;
  Rng rng(options.seed);
  for (const auto& t : targets) {
    std::vector<std::size_t> idx(t.values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.samples_per_target && options.samples_per_target < idx.size()) {
      for (std::size_t i = 0; i < options.samples_per_target; ++i)
        std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
      idx.resize(options.samples_per_target);
    }
    for (std::size_t i : idx) {
      const double saved = t.values[i];
      t.values[i] = saved + options.step;
      const double up = loss();
      t.values[i] = saved - options.step;
      const double down = loss();
      t.values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = t.analytic[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), options.floor});
      ++report.checked;
      if (rel > report.max_relative_error || !std::isfinite(rel)) {
        report.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst = t.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace isample::nn
