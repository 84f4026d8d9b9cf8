#include "wep/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "wep/error.hpp"

namespace wep {

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

FiniteDiffReport finite_diff_probe(const std::vector<GradientProbe>& probes,
                                   const std::function<double()>& loss, double step) {
  if (!(step > 0.0)) throw DomainError("finite difference step must be positive");
  FiniteDiffReport report;
  for (const auto& probe : probes) {
    double& p = *probe.value;
    const double saved = p;
    p = saved + step;
    const double plus = loss();
    p = saved - step;
    const double minus = loss();
    p = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double err = relative_error(probe.analytic, numeric);
    ++report.checked;
    if (err > report.max_relative_error || report.checked == 1) {
      report.max_relative_error = err;
      report.worst_label = probe.label;
      report.worst_analytic = probe.analytic;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace wep
