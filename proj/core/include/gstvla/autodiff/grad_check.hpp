#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gstvla/autodiff/tensor.hpp"

namespace gstvla::ad {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t elements = 0;
  // Set when f was non-finite at a perturbed point; such elements are
  // excluded from the error maxima.
  std::size_t non_finite = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  bool pass() const;
  std::string table() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-7;
};

/// Compares reverse-mode gradients of the scalar `f` against central finite
/// differences for every element of each named parameter. `f` must rebuild
/// its graph from the current parameter values on every call.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           const GradCheckOptions& opts = {});

}  // namespace gstvla::ad
