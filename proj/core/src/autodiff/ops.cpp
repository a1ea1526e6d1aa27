#include "gstvla/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace gstvla::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;


void require_rank(const Tensor& a, std::size_t r, const char* op) {
  if (a.rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " + shape_str(a.shape()));
  }
}

// Index mapping for a broadcast binary op. Empty index vectors mean the
// operand has the output shape and maps 1:1.
struct Broadcast {
  Shape out;
  std::vector<std::size_t> ia, ib;
};

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc;
  if (a.shape() == b.shape()) {
    bc.out = a.shape();
    return bc;
  }
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const std::size_t r = std::max(sa.size(), sb.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(sa.begin(), sa.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - sa.size()));
  std::copy(sb.begin(), sb.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - sb.size()));
  bc.out.resize(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sa) + " with " + shape_str(sb));
    }
    bc.out[i] = std::max(pa[i], pb[i]);
  }
  auto strides = [&](const Shape& p) {
    std::vector<std::size_t> s(r, 0);
    std::size_t acc = 1;
    for (std::size_t i = r; i-- > 0;) {
      s[i] = p[i] == 1 ? 0 : acc;
      acc *= p[i];
    }
    return s;
  };
  const auto sta = strides(pa);
  const auto stb = strides(pb);
  const std::size_t n = numel_of(bc.out);
  bc.ia.resize(n);
  bc.ib.resize(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t d = 0; d < r; ++d) {
      oa += idx[d] * sta[d];
      ob += idx[d] * stb[d];
    }
    bc.ia[flat] = oa;
    bc.ib[flat] = ob;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < bc.out[d]) break;
      idx[d] = 0;
    }
  }
  if (sa == bc.out) bc.ia.clear();
  if (sb == bc.out) bc.ib.clear();
  return bc;
}

inline std::size_t map_index(const std::vector<std::size_t>& m, std::size_t i) { return m.empty() ? i : m[i]; }

// Shared driver for broadcast binary ops. `f` computes the value; `da`/`db`
// give the partial derivatives at one output element.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  auto bc = broadcast(a, b, op);
  const std::size_t n = numel_of(bc.out);
  std::vector<double> v(n);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) v[i] = f(av[map_index(bc.ia, i)], bv[map_index(bc.ib, i)]);
  return make_op(op, bc.out, std::move(v), {a, b}, [bc, da, db](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    const std::size_t n = self.value.size();
    if (na.requires_grad) {
      auto& g = na.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = map_index(bc.ia, i);
        g[ia] += self.grad[i] * da(na.value[ia], nb.value[map_index(bc.ib, i)], self.value[i]);
      }
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ib = map_index(bc.ib, i);
        g[ib] += self.grad[i] * db(na.value[map_index(bc.ia, i)], nb.value[ib], self.value[i]);
      }
    }
  });
}

// Elementwise unary op; `d(x, y)` is the derivative given input and output.
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  const auto av = a.values();
  std::vector<double> v(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) v[i] = f(av[i]);
  return make_op(op, a.shape(), std::move(v), {a}, [d](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * d(in.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sin(const Tensor& a) {
  return unary("sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

Tensor cos(const Tensor& a) {
  return unary("cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(
      "clamp_min", a, [floor](double x) { return x < floor ? floor : x; },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> v(m * n);
  Map(v.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), k, n);
  return make_op("matmul", {m, n}, std::move(v), {a, b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    MapC g(self.grad.data(), m, n);
    if (na.requires_grad) Map(na.grad_buffer().data(), m, k).noalias() += g * MapC(nb.value.data(), k, n).transpose();
    if (nb.requires_grad) Map(nb.grad_buffer().data(), k, n).noalias() += MapC(na.value.data(), m, k).transpose() * g;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError("matmul_nt: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                     "^T");
  }
  std::vector<double> v(m * n);
  Map(v.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), n, k).transpose();
  return make_op("matmul_nt", {m, n}, std::move(v), {a, b}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    MapC g(self.grad.data(), m, n);
    if (na.requires_grad) Map(na.grad_buffer().data(), m, k).noalias() += g * MapC(nb.value.data(), n, k);
    if (nb.requires_grad) Map(nb.grad_buffer().data(), n, k).noalias() += g.transpose() * MapC(na.value.data(), m, k);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> v(m * n);
  Map(v.data(), n, m) = MapC(a.values().data(), m, n).transpose();
  return make_op("transpose", {n, m}, std::move(v), {a}, [m, n](Node& self) {
    Node& in = *self.inputs[0];
    Map(in.grad_buffer().data(), m, n) += MapC(self.grad.data(), n, m).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> v(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(shape), std::move(v), {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor softmax_lastdim(const Tensor& a) {
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  const auto av = a.values();
  std::vector<double> v(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = v.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= s;
  }
  return make_op("softmax", a.shape(), std::move(v), {a}, [rows, n](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Tensor log_softmax_lastdim(const Tensor& a) {
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.numel() / n;
  const auto av = a.values();
  std::vector<double> v(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) v[r * n + j] = x[j] - lse;
  }
  return make_op("log_softmax", a.shape(), std::move(v), {a}, [rows, n](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double s = 0;
      for (std::size_t j = 0; j < n; ++j) s += gy[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += gy[j] - std::exp(y[j]) * s;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t n = x.shape().back();
  if (gain.numel() != n || bias.numel() != n) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                     " do not match last dim of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / n;
  std::vector<double> v(x.numel());
  // Per-row normalized activations and inverse std, kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * n;
    double mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * rs;
      (*xhat)[r * n + j] = h;
      v[r * n + j] = h * gv[j] + bv[j];
    }
  }
  return make_op("layer_norm", x.shape(), std::move(v), {x, gain, bias}, [rows, n, xhat, rstd](Node& self) {
    Node& nx = *self.inputs[0];
    Node& ng = *self.inputs[1];
    Node& nb = *self.inputs[2];
    if (ng.requires_grad) {
      auto& g = ng.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j] * (*xhat)[r * n + j];
    }
    if (nb.requires_grad) {
      auto& g = nb.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
    }
    if (nx.requires_grad) {
      auto& g = nx.grad_buffer();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double s1 = 0, s2 = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = self.grad[r * n + j] * ng.value[j];
          s1 += dh;
          s2 += dh * (*xhat)[r * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const double dh = self.grad[r * n + j] * ng.value[j];
          g[r * n + j] += (*rstd)[r] * (dh - inv_n * s1 - (*xhat)[r * n + j] * inv_n * s2);
        }
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  double s = 0;
  for (double x : a.values()) s += x;
  return make_op("sum", {1}, {s}, {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor sum(const Tensor& a, int axis) {
  require_rank(a, 2, "sum(axis)");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const auto av = a.values();
  if (axis == 0) {
    std::vector<double> v(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) v[j] += av[i * n + j];
    return make_op("sum0", {n}, std::move(v), {a}, [m, n](Node& self) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j];
    });
  }
  if (axis == 1) {
    std::vector<double> v(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) v[i] += av[i * n + j];
    return make_op("sum1", {m}, std::move(v), {a}, [m, n](Node& self) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
    });
  }
  throw ShapeError("sum: axis must be 0 or 1 for " + shape_str(a.shape()));
}

Tensor mean(const Tensor& a, int axis) {
  require_rank(a, 2, "mean(axis)");
  const double count = static_cast<double>(axis == 0 ? a.dim(0) : a.dim(1));
  return scale(sum(a, axis), 1.0 / count);
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis == 0) {
    const Shape& s0 = parts[0].shape();
    Shape tail(s0.begin() + 1, s0.end());
    std::size_t rows = 0;
    for (const auto& p : parts) {
      if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) {
        throw ShapeError("concat(axis 0): " + shape_str(s0) + " vs " + shape_str(p.shape()));
      }
      rows += p.dim(0);
    }
    Shape out = s0;
    out[0] = rows;
    std::vector<double> v;
    v.reserve(numel_of(out));
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
      offsets.push_back(v.size());
      v.insert(v.end(), p.values().begin(), p.values().end());
    }
    return make_op("concat0", out, std::move(v), parts, [offsets](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        Node& in = *self.inputs[k];
        if (!in.requires_grad) continue;
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[k] + i];
      }
    });
  }
  if (axis == 1) {
    const std::size_t m = parts[0].dim(0);
    std::size_t cols = 0;
    std::vector<std::size_t> widths, offsets;
    for (const auto& p : parts) {
      require_rank(p, 2, "concat(axis 1)");
      if (p.dim(0) != m) {
        throw ShapeError("concat(axis 1): " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
      }
      offsets.push_back(cols);
      widths.push_back(p.dim(1));
      cols += p.dim(1);
    }
    std::vector<double> v(m * cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto pv = parts[k].values();
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(pv.data() + i * widths[k], widths[k], v.data() + i * cols + offsets[k]);
    }
    return make_op("concat1", {m, cols}, std::move(v), parts, [m, cols, widths, offsets](Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        Node& in = *self.inputs[k];
        if (!in.requires_grad) continue;
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) g[i * widths[k] + j] += self.grad[i * cols + offsets[k] + j];
      }
    });
  }
  throw ShapeError("concat: axis must be 0 or 1");
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t extent = a.dim(static_cast<std::size_t>(axis));
  if (begin >= end || end > extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(a.shape()));
  }
  if (axis == 0) {
    const std::size_t row = a.numel() / a.dim(0);
    Shape out = a.shape();
    out[0] = end - begin;
    std::vector<double> v(a.values().begin() + static_cast<std::ptrdiff_t>(begin * row),
                          a.values().begin() + static_cast<std::ptrdiff_t>(end * row));
    const std::size_t off = begin * row;
    return make_op("slice0", out, std::move(v), {a}, [off](Node& self) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
    });
  }
  if (axis == 1) {
    require_rank(a, 2, "slice(axis 1)");
    const std::size_t m = a.dim(0), n = a.dim(1), w = end - begin;
    std::vector<double> v(m * w);
    const auto av = a.values();
    for (std::size_t i = 0; i < m; ++i) std::copy_n(av.data() + i * n + begin, w, v.data() + i * w);
    return make_op("slice1", {m, w}, std::move(v), {a}, [m, n, w, begin](Node& self) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
    });
  }
  throw ShapeError("slice: axis must be 0 or 1");
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
  require_rank(a, 2, "gather_rows");
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  std::vector<double> v(ix.size() * d);
  const auto av = a.values();
  for (std::size_t r = 0; r < ix.size(); ++r) {
    if (ix[r] >= n) throw ShapeError("gather_rows: index " + std::to_string(ix[r]) + " out of " + shape_str(a.shape()));
    std::copy_n(av.data() + ix[r] * d, d, v.data() + r * d);
  }
  return make_op("gather_rows", {ix.size(), d}, std::move(v), {a}, [ix, d](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < ix.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[ix[r] * d + j] += self.grad[r * d + j];
  });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> idx, std::size_t rows) {
  require_rank(a, 2, "scatter_add_rows");
  const std::size_t d = a.dim(1);
  if (idx.size() != a.dim(0)) throw ShapeError("scatter_add_rows: index count does not match " + shape_str(a.shape()));
  std::vector<std::size_t> ix(idx.begin(), idx.end());
  std::vector<double> v(rows * d, 0.0);
  const auto av = a.values();
  for (std::size_t r = 0; r < ix.size(); ++r) {
    if (ix[r] >= rows) throw ShapeError("scatter_add_rows: index out of range");
    for (std::size_t j = 0; j < d; ++j) v[ix[r] * d + j] += av[r * d + j];
  }
  return make_op("scatter_add_rows", {rows, d}, std::move(v), {a}, [ix, d](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < ix.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += self.grad[ix[r] * d + j];
  });
}

Tensor take(const Tensor& a, std::span<const std::size_t> flat_idx) {
  std::vector<std::size_t> ix(flat_idx.begin(), flat_idx.end());
  std::vector<double> v(ix.size());
  for (std::size_t i = 0; i < ix.size(); ++i) {
    if (ix[i] >= a.numel()) throw ShapeError("take: index out of range for " + shape_str(a.shape()));
    v[i] = a.values()[ix[i]];
  }
  return make_op("take", {ix.size()}, std::move(v), {a}, [ix](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < ix.size(); ++i) g[ix[i]] += self.grad[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), n = logits.dim(1);
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_str(logits.shape()));
  }
  std::vector<std::int64_t> tg(targets.begin(), targets.end());
  std::size_t count = 0;
  for (auto t : tg) {
    if (t >= static_cast<std::int64_t>(n)) throw ShapeError("cross_entropy: target id out of vocabulary");
    if (t >= 0) ++count;
  }
  if (count == 0) return Tensor::scalar(0.0);
  auto probs = std::make_shared<std::vector<double>>(rows * n, 0.0);
  const auto lv = logits.values();
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (tg[r] < 0) continue;
    const double* x = lv.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += ((*probs)[r * n + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) (*probs)[r * n + j] /= s;
    total -= x[tg[r]] - mx - std::log(s);
  }
  const double inv = 1.0 / static_cast<double>(count);
  return make_op("cross_entropy", {1}, {total * inv}, {logits}, [probs, tg, rows, n, inv](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const double up = self.grad[0] * inv;
    for (std::size_t r = 0; r < rows; ++r) {
      if (tg[r] < 0) continue;
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += up * (*probs)[r * n + j];
      g[r * n + static_cast<std::size_t>(tg[r])] -= up;
    }
  });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  return mean(square(sub(a, b)));
}

}  // namespace gstvla::ad
