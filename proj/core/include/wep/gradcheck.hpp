#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace wep {

/// |a - b| / max(1, |a|, |b|).
double relative_error(double a, double b);

/// One scalar parameter to perturb in place, with its claimed derivative.
struct GradientProbe {
  double* value = nullptr;
  double analytic = 0.0;
  std::string label;
};

struct FiniteDiffReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::string worst_label;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central differences (f(p + step) - f(p - step)) / (2 step) for every probe;
/// each parameter is restored before moving to the next.
FiniteDiffReport finite_diff_probe(const std::vector<GradientProbe>& probes,
                                   const std::function<double()>& loss, double step);

}  // namespace wep
