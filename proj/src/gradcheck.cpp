#include "ramoe/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace ramoe {

namespace {

std::vector<Tensor> clone_points(const std::vector<Tensor>& points) {
  std::vector<Tensor> out;
  out.reserve(points.size());
  for (const Tensor& p : points)
    out.push_back(Tensor::leaf(p.shape(), p.values(), true));
  return out;
}

double eval_at(const ScalarFn& f, const std::vector<Tensor>& points,
               std::size_t ti, std::size_t ci, double delta) {
  std::vector<Tensor> moved;
  moved.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i == ti) {
      auto vals = points[i].values();
      vals[ci] += delta;
      moved.push_back(Tensor::leaf(points[i].shape(), std::move(vals), true));
    } else {
      moved.push_back(points[i]);
    }
  }
  return f(moved).item();
}

void record(GradCheckResult& r, double a, double n, std::size_t ti,
            std::size_t ci) {
  const double abs_err = std::abs(a - n);
  const double rel_err = abs_err / (std::abs(a) + std::abs(n) + 1e-8);
  if (rel_err > r.max_rel_err) {
    r.max_rel_err = rel_err;
    r.max_abs_err = abs_err;
    r.worst_tensor = ti;
    r.worst_coord = ci;
    r.analytic_at_worst = a;
    r.numeric_at_worst = n;
  }
}

}  // namespace

GradCheckResult finite_difference_check(const ScalarFn& f,
                                        const std::vector<Tensor>& points,
                                        double step) {
  auto pts = clone_points(points);
  std::vector<Tensor> grads = backward(f(pts), pts, false);

  GradCheckResult r;
  for (std::size_t ti = 0; ti < pts.size(); ++ti) {
    for (std::size_t ci = 0; ci < pts[ti].numel(); ++ci) {
      const double up = eval_at(f, pts, ti, ci, step);
      const double dn = eval_at(f, pts, ti, ci, -step);
      record(r, grads[ti].values()[ci], (up - dn) / (2.0 * step), ti, ci);
    }
  }
  return r;
}

GradCheckResult second_order_fd_check(const ScalarFn& f,
                                      const std::vector<Tensor>& points,
                                      const std::vector<std::vector<double>>& v,
                                      double step) {
  if (v.size() != points.size())
    throw std::invalid_argument("second_order_fd_check: one direction per point");
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i].size() != points[i].numel())
      throw std::invalid_argument("second_order_fd_check: direction size mismatch");

  // <grad f(x), v> as a recorded scalar, then one more backward for the
  // analytic Hessian-vector product.
  auto pts = clone_points(points);
  std::vector<Tensor> grads = backward(f(pts), pts, true);
  Tensor dot;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    Tensor term = sum(mul(grads[i], Tensor::constant(pts[i].shape(), v[i])));
    dot = dot.defined() ? add(dot, term) : term;
  }
  std::vector<Tensor> hvp = backward(dot, pts, false);

  // Numeric side: central differences of the same inner product.
  auto grad_dot_v = [&](const std::vector<Tensor>& at) {
    std::vector<Tensor> g = backward(f(at), at, false);
    double acc = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i)
      for (std::size_t c = 0; c < g[i].numel(); ++c)
        acc += g[i].values()[c] * v[i][c];
    return acc;
  };

  GradCheckResult r;
  for (std::size_t ti = 0; ti < pts.size(); ++ti) {
    for (std::size_t ci = 0; ci < pts[ti].numel(); ++ci) {
      auto moved = [&](double delta) {
        std::vector<Tensor> m;
        m.reserve(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i) {
          if (i == ti) {
            auto vals = pts[i].values();
            vals[ci] += delta;
            m.push_back(Tensor::leaf(pts[i].shape(), std::move(vals), true));
          } else {
            m.push_back(clone_points({pts[i]})[0]);
          }
        }
        return m;
      };
      const double up = grad_dot_v(moved(step));
      const double dn = grad_dot_v(moved(-step));
      record(r, hvp[ti].values()[ci], (up - dn) / (2.0 * step), ti, ci);
    }
  }
  return r;
}

}  // namespace ramoe
