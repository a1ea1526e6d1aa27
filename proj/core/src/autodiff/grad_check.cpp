#include "gstvla/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace gstvla::ad {

bool GradCheckReport::pass() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.pass; });
}

std::string GradCheckReport::table() const {
  std::ostringstream os;
  os << "param\telements\tmax_rel_err\tmax_abs_err\tnon_finite\tresult\n";
  for (const auto& e : entries) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%.3e\t%.3e\t%zu\t%s\n", e.name.c_str(), e.elements, e.max_rel_error,
                  e.max_abs_error, e.non_finite, e.pass ? "pass" : "FAIL");
    os << buf;
  }
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           const GradCheckOptions& opts) {
  if (opts.step < 1e-7 || opts.step > 1e-3) {
    throw std::invalid_argument("grad_check: step must lie in [1e-7, 1e-3]");
  }
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  // Analytic pass.
  Tape& tape = Tape::current();
  tape.reset();
  for (auto [name, p] : params) p.zero_grad();
  Tensor loss = f();
  if (loss.requires_grad()) backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& [name, p] : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  tape.reset();

  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k].second;
    GradCheckEntry e;
    e.name = params[k].first;
    e.elements = p.numel();
    auto vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + opts.step;
      const double fp = f().item();
      vals[i] = orig - opts.step;
      const double fm = f().item();
      vals[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        ++e.non_finite;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
      e.max_abs_error = std::max(e.max_abs_error, abs_err);
      e.max_rel_error = std::max(e.max_rel_error, abs_err / denom);
    }
    e.pass = e.non_finite == 0 && e.max_rel_error < opts.tolerance;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace gstvla::ad
