#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

#include "ramoe/kernels.hpp"
#include "ramoe/tensor.hpp"
#include "tensor_detail.hpp"

namespace ramoe {

namespace {

using detail::make_node;

template <class F>
std::vector<double> broadcast_apply(const Tensor& a, const Tensor& b,
                                    const Shape& os, F&& f) {
  const auto sa = detail::broadcast_strides(a.shape(), os);
  const auto sb = detail::broadcast_strides(b.shape(), os);
  const std::size_t n = shape_numel(os);
  const std::size_t r = os.size();
  const auto& va = a.values();
  const auto& vb = b.values();
  std::vector<double> out(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(va[ia], vb[ib]);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < os[ax]) break;
      idx[ax] = 0;
      ia -= sa[ax] * os[ax];
      ib -= sb[ax] * os[ax];
    }
  }
  return out;
}

template <class F>
std::vector<double> unary_apply(const Tensor& a, F&& f) {
  std::vector<double> out(a.numel());
  const auto& v = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
  return out;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Shape squeeze_axis(const Shape& s, std::size_t axis) {
  Shape out = s;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

// Row maxima along the last axis, detached. Shifting by a constant leaves
// softmax/logsumexp values and gradients intact while preventing overflow.
Tensor rowmax_const(const Tensor& a, bool keepdim) {
  require(a.rank() >= 1, "rowmax: rank-0 input");
  const std::size_t last = a.shape().back();
  const std::size_t rows = a.numel() / last;
  std::vector<double> m(rows);
  const auto& v = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double best = v[r * last];
    for (std::size_t j = 1; j < last; ++j)
      best = std::max(best, v[r * last + j]);
    m[r] = best;
  }
  Shape ms = a.shape();
  if (keepdim)
    ms.back() = 1;
  else
    ms.pop_back();
  return Tensor::constant(std::move(ms), std::move(m));
}

}  // namespace

// ---- primitives ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  Shape os = detail::broadcast_shape("add", a.shape(), b.shape());
  auto vals = broadcast_apply(a, b, os, [](double x, double y) { return x + y; });
  const Shape as = a.shape(), bs = b.shape();
  return make_node("add", std::move(os), std::move(vals), {a, b},
                   [as, bs](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{reduce_to_shape(g, as),
                                                reduce_to_shape(g, bs)};
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Shape os = detail::broadcast_shape("mul", a.shape(), b.shape());
  auto vals = broadcast_apply(a, b, os, [](double x, double y) { return x * y; });
  const Shape as = a.shape(), bs = b.shape();
  return make_node("mul", std::move(os), std::move(vals), {a, b},
                   [a, b, as, bs](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{
                         reduce_to_shape(mul(g, b), as),
                         reduce_to_shape(mul(g, a), bs)};
                   });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Shape os = detail::broadcast_shape("div", a.shape(), b.shape());
  auto vals = broadcast_apply(a, b, os, [](double x, double y) { return x / y; });
  const Shape as = a.shape(), bs = b.shape();
  return make_node("div", std::move(os), std::move(vals), {a, b},
                   [b, as, bs](const Tensor& g, const Tensor& out) {
                     // d(a/b)/db = -out/b
                     return std::vector<Tensor>{
                         reduce_to_shape(div(g, b), as),
                         reduce_to_shape(mul(g, div(neg(out), b)), bs)};
                   });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: both inputs must be rank-2");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  require(b.size(0) == k, "matmul: inner dimensions " + shape_str(a.shape()) +
                              " x " + shape_str(b.shape()) + " disagree");
  std::vector<double> vals(m * n);
  kernels::matmul(a.values().data(), b.values().data(), vals.data(), m, k, n);
  return make_node("matmul", {m, n}, std::move(vals), {a, b},
                   [a, b](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{matmul(g, transpose(b)),
                                                matmul(transpose(a), g)};
                   });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose: input must be rank-2");
  const std::size_t m = a.size(0), n = a.size(1);
  std::vector<double> vals(m * n);
  kernels::transpose(a.values().data(), vals.data(), m, n);
  return make_node("transpose", {n, m}, std::move(vals), {a},
                   [](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{transpose(g)};
                   });
}

Tensor reshape(const Tensor& a, Shape s) {
  require(shape_numel(s) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(s) +
              " changes element count");
  const Shape as = a.shape();
  return make_node("reshape", std::move(s), a.values(), {a},
                   [as](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{reshape(g, as)};
                   });
}

Tensor relu(const Tensor& a) {
  std::vector<double> mask(a.numel());
  std::vector<double> vals(a.numel());
  const auto& v = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    mask[i] = v[i] > 0.0 ? 1.0 : 0.0;
    vals[i] = v[i] > 0.0 ? v[i] : 0.0;
  }
  Tensor m = Tensor::constant(a.shape(), std::move(mask));
  return make_node("relu", a.shape(), std::move(vals), {a},
                   [m](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{mul(g, m)};
                   });
}

Tensor exp(const Tensor& a) {
  auto vals = unary_apply(a, [](double x) { return std::exp(x); });
  return make_node("exp", a.shape(), std::move(vals), {a},
                   [](const Tensor& g, const Tensor& out) {
                     return std::vector<Tensor>{mul(g, out)};
                   });
}

Tensor log(const Tensor& a) {
  auto vals = unary_apply(a, [](double x) { return std::log(x); });
  return make_node("log", a.shape(), std::move(vals), {a},
                   [a](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{div(g, a)};
                   });
}

Tensor sqrt(const Tensor& a) {
  auto vals = unary_apply(a, [](double x) { return std::sqrt(x); });
  return make_node("sqrt", a.shape(), std::move(vals), {a},
                   [](const Tensor& g, const Tensor& out) {
                     return std::vector<Tensor>{div(scale(g, 0.5), out)};
                   });
}

Tensor sigmoid(const Tensor& a) {
  // Branch on sign so neither exp() overflows.
  auto vals = unary_apply(a, [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_node("sigmoid", a.shape(), std::move(vals), {a},
                   [](const Tensor& g, const Tensor& out) {
                     return std::vector<Tensor>{
                         mul(g, mul(out, add_const(neg(out), 1.0)))};
                   });
}

Tensor clamp(const Tensor& a, double lo, double hi, long* clamped) {
  require(lo <= hi, "clamp: lo > hi");
  std::vector<double> mask(a.numel());
  std::vector<double> vals(a.numel());
  const auto& v = a.values();
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const bool inside = v[i] >= lo && v[i] <= hi;
    mask[i] = inside ? 1.0 : 0.0;
    vals[i] = std::min(std::max(v[i], lo), hi);
    if (!inside && clamped) ++*clamped;
  }
  Tensor m = Tensor::constant(a.shape(), std::move(mask));
  return make_node("clamp", a.shape(), std::move(vals), {a},
                   [m](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{mul(g, m)};
                   });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.values()) acc += v;
  const Shape as = a.shape();
  return make_node("sum", {}, {acc}, {a},
                   [as](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{mul(Tensor::ones(as), g)};
                   });
}

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  require(axis < a.rank(), "sum_axis: axis out of range");
  const std::size_t len = a.shape()[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
  std::vector<double> vals(outer * inner, 0.0);
  const auto& v = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        vals[o * inner + i] += v[(o * len + l) * inner + i];
  Shape kd = a.shape();
  kd[axis] = 1;
  Shape os = keepdim ? kd : squeeze_axis(a.shape(), axis);
  const Shape as = a.shape();
  return make_node("sum_axis", std::move(os), std::move(vals), {a},
                   [as, kd, keepdim](const Tensor& g, const Tensor&) {
                     Tensor gk = keepdim ? g : reshape(g, kd);
                     return std::vector<Tensor>{mul(gk, Tensor::ones(as))};
                   });
}

Tensor gather_flat(const Tensor& a, std::vector<std::size_t> idx) {
  const auto& v = a.values();
  std::vector<double> vals(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < v.size(), "gather_flat: index out of range");
    vals[i] = v[idx[i]];
  }
  const Shape as = a.shape();
  const std::size_t n = a.numel();
  Shape os{idx.size()};
  return make_node("gather_flat", std::move(os), std::move(vals), {a},
                   [as, n, idx = std::move(idx)](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{
                         reshape(scatter_add_flat(g, idx, n), as)};
                   });
}

Tensor scatter_add_flat(const Tensor& v, std::vector<std::size_t> idx,
                        std::size_t out_numel) {
  require(v.rank() == 1 && v.numel() == idx.size(),
          "scatter_add_flat: values must be rank-1 matching index count");
  std::vector<double> vals(out_numel, 0.0);
  const auto& src = v.values();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] < out_numel, "scatter_add_flat: index out of range");
    vals[idx[i]] += src[i];
  }
  return make_node("scatter_add_flat", {out_numel}, std::move(vals), {v},
                   [idx = std::move(idx)](const Tensor& g, const Tensor&) {
                     return std::vector<Tensor>{gather_flat(g, idx)};
                   });
}

Tensor concat_last(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat_last: no inputs");
  const std::size_t r = xs[0].rank();
  require(r >= 1, "concat_last: rank-0 inputs");
  Shape lead = xs[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> lens(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    require(xs[i].rank() == r, "concat_last: rank mismatch");
    Shape l = xs[i].shape();
    lens[i] = l.back();
    l.pop_back();
    require(l == lead, "concat_last: leading dimensions mismatch");
    total += lens[i];
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> vals(rows * total);
  std::size_t off = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& v = xs[i].values();
    for (std::size_t row = 0; row < rows; ++row)
      std::copy(v.begin() + static_cast<std::ptrdiff_t>(row * lens[i]),
                v.begin() + static_cast<std::ptrdiff_t>((row + 1) * lens[i]),
                vals.begin() + static_cast<std::ptrdiff_t>(row * total + off));
    off += lens[i];
  }
  Shape os = lead;
  os.push_back(total);
  return make_node("concat_last", std::move(os), std::move(vals), xs,
                   [lens](const Tensor& g, const Tensor&) {
                     std::vector<Tensor> gs;
                     gs.reserve(lens.size());
                     std::size_t start = 0;
                     for (std::size_t len : lens) {
                       gs.push_back(slice_last(g, start, len));
                       start += len;
                     }
                     return gs;
                   });
}

Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len) {
  require(a.rank() >= 1, "slice_last: rank-0 input");
  const std::size_t last = a.shape().back();
  require(start + len <= last, "slice_last: range out of bounds");
  const std::size_t rows = a.numel() / last;
  std::vector<double> vals(rows * len);
  const auto& v = a.values();
  for (std::size_t row = 0; row < rows; ++row)
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(row * last + start),
              v.begin() + static_cast<std::ptrdiff_t>(row * last + start + len),
              vals.begin() + static_cast<std::ptrdiff_t>(row * len));
  Shape os = a.shape();
  os.back() = len;
  Shape lead = a.shape();
  lead.pop_back();
  return make_node(
      "slice_last", std::move(os), std::move(vals), {a},
      [lead, start, len, last](const Tensor& g, const Tensor&) {
        std::vector<Tensor> parts;
        if (start > 0) {
          Shape zl = lead;
          zl.push_back(start);
          parts.push_back(Tensor::zeros(zl));
        }
        parts.push_back(g);
        if (start + len < last) {
          Shape zr = lead;
          zr.push_back(last - start - len);
          parts.push_back(Tensor::zeros(zr));
        }
        return std::vector<Tensor>{concat_last(parts)};
      });
}

Tensor pairwise_sqdist(const Tensor& a) {
  require(a.rank() == 2, "pairwise_sqdist: input must be rank-2");
  const std::size_t n = a.size(0), d = a.size(1);
  std::vector<double> vals(n * n);
  kernels::pairwise_sqdist(a.values().data(), vals.data(), n, d);
  return make_node("pairwise_sqdist", {n, n}, std::move(vals), {a},
                   [a](const Tensor& g, const Tensor&) {
                     Tensor s = add(g, transpose(g));
                     Tensor rs = sum_axis(s, 1, true);
                     return std::vector<Tensor>{
                         scale(sub(mul(rs, a), matmul(s, a)), 2.0)};
                   });
}

// ---- composites --------------------------------------------------------

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor scale(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

Tensor add_const(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }

Tensor square(const Tensor& a) { return mul(a, a); }

Tensor mean(const Tensor& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  require(axis < a.rank(), "mean_axis: axis out of range");
  return scale(sum_axis(a, axis, keepdim),
               1.0 / static_cast<double>(a.shape()[axis]));
}

Tensor softmax_last(const Tensor& a) {
  Tensor e = exp(sub(a, rowmax_const(a, true)));
  return div(e, sum_axis(e, a.rank() - 1, true));
}

Tensor logsumexp_last(const Tensor& a, bool keepdim) {
  Tensor m = rowmax_const(a, true);
  Tensor s = log(sum_axis(exp(sub(a, m)), a.rank() - 1, true));
  Tensor out = add(s, m);
  if (!keepdim) out = reshape(out, squeeze_axis(out.shape(), a.rank() - 1));
  return out;
}

Tensor l2_norm_last(const Tensor& a, double eps) {
  return sqrt(add_const(sum_axis(square(a), a.rank() - 1, true), eps));
}

Tensor l2_normalize_last(const Tensor& a, double eps) {
  return div(a, l2_norm_last(a, eps));
}

Tensor pairwise_dist(const Tensor& a, double eps) {
  return sqrt(add_const(pairwise_sqdist(a), eps));
}

Tensor index_select_rows(const Tensor& a, const std::vector<std::size_t>& rows) {
  require(a.rank() == 2, "index_select_rows: input must be rank-2");
  const std::size_t d = a.size(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * d);
  for (std::size_t r : rows) {
    require(r < a.size(0), "index_select_rows: row out of range");
    for (std::size_t j = 0; j < d; ++j) idx.push_back(r * d + j);
  }
  return reshape(gather_flat(a, std::move(idx)), {rows.size(), d});
}

Tensor stack_columns(const std::vector<Tensor>& cols) {
  require(!cols.empty(), "stack_columns: no inputs");
  std::vector<Tensor> shaped;
  shaped.reserve(cols.size());
  for (const Tensor& c : cols) {
    require(c.rank() == 1 || (c.rank() == 2 && c.size(1) == 1),
            "stack_columns: each column must be a vector");
    shaped.push_back(reshape(c, {c.numel(), 1}));
  }
  return concat_last(shaped);
}

Tensor reduce_to_shape(const Tensor& g, const Shape& target) {
  Tensor out = g;
  while (out.rank() > target.size()) out = sum_axis(out, 0, false);
  for (std::size_t i = 0; i < target.size(); ++i)
    if (target[i] == 1 && out.shape()[i] != 1) out = sum_axis(out, i, true);
  return out;
}

}  // namespace ramoe
