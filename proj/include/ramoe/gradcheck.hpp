#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ramoe/tensor.hpp"

namespace ramoe {

// Rebuilds a scalar loss from scratch at the given leaves. Must be pure:
// same points in, same value out.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_coord = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central-difference check of reverse-mode gradients at `points`.
// rel err per coordinate: |a - n| / (|a| + |n| + 1e-8).
GradCheckResult finite_difference_check(const ScalarFn& f,
                                        const std::vector<Tensor>& points,
                                        double step = 1e-5);

// Checks the gradient of the directional derivative <grad f, v> — i.e. a
// Hessian-vector product — against central differences of that inner
// product. Exercises backward-through-backward.
GradCheckResult second_order_fd_check(const ScalarFn& f,
                                      const std::vector<Tensor>& points,
                                      const std::vector<std::vector<double>>& v,
                                      double step = 1e-5);

}  // namespace ramoe
