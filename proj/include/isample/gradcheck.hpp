#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "isample/rng.hpp"

namespace isample::nn {

/// One array to perturb plus the analytic gradient claimed for it.
struct GradTarget {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  ///< "name[index]" of the worst entry
};

struct GradCheckOptions {
  double step = 1e-4;
  /// Entries per target; 0 checks all of them.
  std::size_t samples_per_target = 0;
  /// Denominator floor so exact zeros do not blow up the ratio.
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

/// Central finite differences of `loss` against the analytic gradients.
/// relative error = |a − n| / max(|a|, |n|, floor).
GradCheckReport check_gradients(const std::function<double()>& loss,
                                const std::vector<GradTarget>& targets,
                                const GradCheckOptions& options = {});

}  // namespace isample::nn
