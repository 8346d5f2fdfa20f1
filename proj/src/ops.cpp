#include "timemae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

TIMEMAE_BEGIN_NAMESPACE

namespace {

using detail::Node;

std::size_t norm_axis(int axis, std::size_t rank, const Shape& shape) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  return static_cast<std::size_t>(a);
}

// Flat-index maps from a broadcast output back into each operand.
struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  BroadcastPlan plan;
  std::size_t rank = std::max(a.size(), b.size());
  plan.out.assign(rank, 1);
  std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t k = 0; k < rank; ++k) {
    std::size_t axis = rank - 1 - k;
    std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
    std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    plan.out[axis] = std::max(da, db);
    sa[axis] = da == 1 ? 0 : stride_a;
    sb[axis] = db == 1 ? 0 : stride_b;
    stride_a *= da;
    stride_b *= db;
  }
  std::size_t n = shape_numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.ia[i] = oa;
    plan.ib[i] = ob;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      oa += sa[k];
      ob += sb[k];
      if (counter[k] < plan.out[k]) break;
      oa -= sa[k] * counter[k];
      ob -= sb[k] * counter[k];
      counter[k] = 0;
    }
  }
  return plan;
}

template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F f, DA dfa, DB dfb) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<Real> out(plan.ia.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[plan.ia[i]], bd[plan.ib[i]]);
  auto an = a.node();
  auto bn = b.node();
  auto ia = std::make_shared<std::vector<std::size_t>>(std::move(plan.ia));
  auto ib = std::make_shared<std::vector<std::size_t>>(std::move(plan.ib));
  return make_result(plan.out, std::move(out), {a, b}, name,
                     [an, bn, ia, ib, dfa, dfb](std::span<const Real> g) {
                       const auto& x = an->data;
                       const auto& y = bn->data;
                       if (an->requires_grad) {
                         auto& ga = an->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           ga[(*ia)[i]] += g[i] * dfa(x[(*ia)[i]], y[(*ib)[i]]);
                         }
                       }
                       if (bn->requires_grad) {
                         auto& gb = bn->grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) {
                           gb[(*ib)[i]] += g[i] * dfb(x[(*ia)[i]], y[(*ib)[i]]);
                         }
                       }
                     });
}

// dfx(x, y) receives the input and output values.
template <class F, class DF>
Tensor unary(const Tensor& x, const char* name, F f, DF dfx) {
  auto xd = x.data();
  std::vector<Real> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  auto xn = x.node();
  auto y = std::make_shared<std::vector<Real>>(out);
  return make_result(x.shape(), std::move(out), {x}, name, [xn, y, dfx](std::span<const Real> g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfx(xn->data[i], (*y)[i]);
  });
}

// Splits a shape around one axis into (outer, axis, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

const std::vector<std::string>& op_catalog() {
  static const std::vector<std::string> ops{
      "add",        "sub",           "mul",         "div",          "add_scalar",   "mul_scalar",
      "neg",        "exp",           "log",         "sqrt",         "relu",         "gelu",
      "matmul",     "reshape",       "permute",     "softmax",      "log_softmax",  "layer_norm",
      "dropout",    "conv1d",        "embedding",   "gather_rows",  "sum",          "mean",
      "sum_axis",   "mean_axis",     "concat",      "slice",        "cross_entropy",
      "cross_entropy_soft",          "mse",         "stop_gradient", "straight_through"};
  return ops;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
      [](Real, Real) { return Real(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
      [](Real x, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](Real x, Real y) { return x / y; }, [](Real, Real y) { return Real(1) / y; },
      [](Real x, Real y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& x, Real value) {
  return unary(
      x, "add_scalar", [value](Real v) { return v + value; }, [](Real, Real) { return Real(1); });
}

Tensor mul_scalar(const Tensor& x, Real value) {
  return unary(
      x, "mul_scalar", [value](Real v) { return v * value; }, [value](Real, Real) { return value; });
}

Tensor neg(const Tensor& x) {
  return unary(
      x, "neg", [](Real v) { return -v; }, [](Real, Real) { return Real(-1); });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, "sqrt", [](Real v) { return std::sqrt(v); }, [](Real, Real y) { return Real(0.5) / y; });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](Real v) { return v > 0 ? v : Real(0); },
      [](Real v, Real) { return v > 0 ? Real(1) : Real(0); });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt_2pi = 0.39894228040143267794;
  return unary(
      x, "gelu",
      [](Real v) {
        double d = v;
        return static_cast<Real>(0.5 * d * (1.0 + std::erf(d * inv_sqrt2)));
      },
      [](Real v, Real) {
        double d = v;
        double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * d * d);
        return static_cast<Real>(cdf + d * pdf);
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(as) + " and " +
                         shape_str(bs));
  }
  std::size_t p = as[as.size() - 2], q = as.back();
  std::size_t q2 = bs[bs.size() - 2], r = bs.back();
  if (q != q2) {
    throw DimensionError("matmul inner dimensions differ: " + shape_str(as) + " x " + shape_str(bs));
  }
  Shape ba(as.begin(), as.end() - 2), bb(bs.begin(), bs.end() - 2);
  auto plan = plan_broadcast(ba, bb, "matmul");
  Shape out_shape = plan.out;
  out_shape.push_back(p);
  out_shape.push_back(r);
  std::size_t batches = plan.ia.size();
  std::vector<Real> out(batches * p * r, Real(0));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t n = 0; n < batches; ++n) {
    const Real* A = ad.data() + plan.ia[n] * p * q;
    const Real* B = bd.data() + plan.ib[n] * q * r;
    Real* C = out.data() + n * p * r;
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t k = 0; k < q; ++k) {
        Real av = A[i * q + k];
        const Real* brow = B + k * r;
        Real* crow = C + i * r;
        for (std::size_t j = 0; j < r; ++j) crow[j] += av * brow[j];
      }
    }
  }
  auto an = a.node();
  auto bn = b.node();
  auto ia = std::make_shared<std::vector<std::size_t>>(std::move(plan.ia));
  auto ib = std::make_shared<std::vector<std::size_t>>(std::move(plan.ib));
  return make_result(out_shape, std::move(out), {a, b}, "matmul",
                     [an, bn, ia, ib, p, q, r](std::span<const Real> g) {
                       std::size_t batches = ia->size();
                       for (std::size_t n = 0; n < batches; ++n) {
                         const Real* G = g.data() + n * p * r;
                         const Real* A = an->data.data() + (*ia)[n] * p * q;
                         const Real* B = bn->data.data() + (*ib)[n] * q * r;
                         if (an->requires_grad) {
                           // grad_a = g . b^T
                           Real* GA = an->grad_buffer().data() + (*ia)[n] * p * q;
                           for (std::size_t i = 0; i < p; ++i) {
                             for (std::size_t k = 0; k < q; ++k) {
                               Real acc = 0;
                               for (std::size_t j = 0; j < r; ++j) acc += G[i * r + j] * B[k * r + j];
                               GA[i * q + k] += acc;
                             }
                           }
                         }
                         if (bn->requires_grad) {
                           // grad_b = a^T . g
                           Real* GB = bn->grad_buffer().data() + (*ib)[n] * q * r;
                           for (std::size_t i = 0; i < p; ++i) {
                             for (std::size_t k = 0; k < q; ++k) {
                               Real av = A[i * q + k];
                               for (std::size_t j = 0; j < r; ++j) GB[k * r + j] += av * G[i * r + j];
                             }
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  auto xn = x.node();
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, "reshape",
                     [xn](std::span<const Real> g) { xn->accumulate(g); });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& s = x.shape();
  std::size_t rank = s.size();
  if (axes.size() != rank) throw DimensionError("permute axes do not match shape " + shape_str(s));
  std::vector<bool> used(rank, false);
  for (auto a : axes) {
    if (a >= rank || used[a]) throw DimensionError("permute axes are not a permutation");
    used[a] = true;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t k = rank; k-- > 1;) in_stride[k - 1] = in_stride[k] * s[k];
  Shape out_shape(rank);
  std::vector<std::size_t> stride(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = s[axes[k]];
    stride[k] = in_stride[axes[k]];
  }
  std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*src)[i] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      off += stride[k];
      if (counter[k] < out_shape[k]) break;
      off -= stride[k] * counter[k];
      counter[k] = 0;
    }
  }
  auto xd = x.data();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*src)[i]];
  auto xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {x}, "permute",
                     [xn, src](std::span<const Real> g) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[(*src)[i]] += g[i];
                     });
}

Tensor transpose_last(const Tensor& x) {
  std::size_t rank = x.rank();
  if (rank < 2) throw DimensionError("transpose_last needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(rank);
  for (std::size_t k = 0; k < rank; ++k) axes[k] = k;
  std::swap(axes[rank - 1], axes[rank - 2]);
  return permute(x, axes);
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("softmax of a scalar");
  std::size_t k = x.shape().back();
  std::size_t rows = x.numel() / k;
  auto xd = x.data();
  std::vector<Real> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xd.data() + r * k;
    Real* o = out.data() + r * k;
    Real mx = *std::max_element(in, in + k);
    double total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      double e = std::exp(static_cast<double>(in[j] - mx));
      o[j] = static_cast<Real>(e);
      total += e;
    }
    for (std::size_t j = 0; j < k; ++j) o[j] = static_cast<Real>(o[j] / total);
  }
  auto xn = x.node();
  auto y = std::make_shared<std::vector<Real>>(out);
  return make_result(x.shape(), std::move(out), {x}, "softmax",
                     [xn, y, k, rows](std::span<const Real> g) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const Real* yr = y->data() + r * k;
                         const Real* gr = g.data() + r * k;
                         double dot = 0;
                         for (std::size_t j = 0; j < k; ++j) dot += static_cast<double>(gr[j]) * yr[j];
                         for (std::size_t j = 0; j < k; ++j) {
                           gx[r * k + j] += static_cast<Real>(yr[j] * (gr[j] - dot));
                         }
                       }
                     });
}

namespace {

// Row-wise log-softmax of a [rows, k] buffer.
std::vector<Real> log_softmax_rows(std::span<const Real> x, std::size_t k) {
  std::size_t rows = x.size() / k;
  std::vector<Real> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = x.data() + r * k;
    Real mx = *std::max_element(in, in + k);
    double total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(in[j] - mx));
    double lse = static_cast<double>(mx) + std::log(total);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = static_cast<Real>(in[j] - lse);
  }
  return out;
}

}  // namespace

Tensor log_softmax(const Tensor& x) {
  if (x.rank() == 0) throw DimensionError("log_softmax of a scalar");
  std::size_t k = x.shape().back();
  std::size_t rows = x.numel() / k;
  auto out = log_softmax_rows(x.data(), k);
  auto xn = x.node();
  auto y = std::make_shared<std::vector<Real>>(out);
  return make_result(x.shape(), std::move(out), {x}, "log_softmax",
                     [xn, y, k, rows](std::span<const Real> g) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t r = 0; r < rows; ++r) {
                         double gsum = 0;
                         for (std::size_t j = 0; j < k; ++j) gsum += g[r * k + j];
                         for (std::size_t j = 0; j < k; ++j) {
                           double p = std::exp(static_cast<double>((*y)[r * k + j]));
                           gx[r * k + j] += static_cast<Real>(g[r * k + j] - p * gsum);
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm of a scalar");
  std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm parameters " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match width " + std::to_string(d));
  }
  std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  auto xhat = std::make_shared<std::vector<Real>>(x.numel());
  auto rstd = std::make_shared<std::vector<Real>>(rows);
  std::vector<Real> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* in = xd.data() + r * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += in[j];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      double c = in[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*rstd)[r] = static_cast<Real>(rs);
    for (std::size_t j = 0; j < d; ++j) {
      Real h = static_cast<Real>((in[j] - mu) * rs);
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  auto xn = x.node();
  auto gn = gain.node();
  auto bn = bias.node();
  return make_result(x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
                     [xn, gn, bn, xhat, rstd, d, rows](std::span<const Real> g) {
                       if (gn->requires_grad) {
                         auto& gg = gn->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
                         }
                       }
                       if (bn->requires_grad) {
                         auto& gb = bn->grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                         }
                       }
                       if (xn->requires_grad) {
                         auto& gx = xn->grad_buffer();
                         const auto& gain_v = gn->data;
                         for (std::size_t r = 0; r < rows; ++r) {
                           double m1 = 0, m2 = 0;
                           for (std::size_t j = 0; j < d; ++j) {
                             double gh = static_cast<double>(g[r * d + j]) * gain_v[j];
                             m1 += gh;
                             m2 += gh * (*xhat)[r * d + j];
                           }
                           m1 /= static_cast<double>(d);
                           m2 /= static_cast<double>(d);
                           for (std::size_t j = 0; j < d; ++j) {
                             double gh = static_cast<double>(g[r * d + j]) * gain_v[j];
                             gx[r * d + j] += static_cast<Real>(
                                 (*rstd)[r] * (gh - m1 - (*xhat)[r * d + j] * m2));
                           }
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, Real p, bool training, Rng& rng) {
  if (p < 0 || p >= 1) throw ContractError("dropout rate must lie in [0, 1)");
  if (!training || p == 0) return x;
  auto xd = x.data();
  Real scale = Real(1) / (Real(1) - p);
  auto mask = std::make_shared<std::vector<Real>>(x.numel());
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < static_cast<double>(p) ? Real(0) : scale;
    out[i] = xd[i] * (*mask)[i];
  }
  auto xn = x.node();
  return make_result(x.shape(), std::move(out), {x}, "dropout", [xn, mask](std::span<const Real> g) {
    auto& gx = xn->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 3 || ws.size() != 3) {
    throw DimensionError("conv1d expects x [B, L, C_in] and weight [C_out, C_in, k], got " +
                         shape_str(xs) + " and " + shape_str(ws));
  }
  std::size_t B = xs[0], L = xs[1], cin = xs[2];
  std::size_t cout = ws[0], k = ws[2];
  if (ws[1] != cin) {
    throw DimensionError("conv1d channel mismatch: input " + shape_str(xs) + ", weight " + shape_str(ws));
  }
  if (bias.shape() != Shape{cout}) {
    throw DimensionError("conv1d bias " + shape_str(bias.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
  }
  if (stride == 0 || k == 0) throw DimensionError("conv1d needs positive kernel and stride");
  if (L < k) throw DimensionError("conv1d input length " + std::to_string(L) + " shorter than kernel");
  std::size_t lout = (L - k) / stride + 1;
  auto xd = x.data();
  auto wd = weight.data();
  auto bd = bias.data();
  std::vector<Real> out(B * lout * cout);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < lout; ++t) {
      Real* o = out.data() + (b * lout + t) * cout;
      for (std::size_t oc = 0; oc < cout; ++oc) {
        Real acc = bd[oc];
        for (std::size_t j = 0; j < k; ++j) {
          const Real* xin = xd.data() + (b * L + t * stride + j) * cin;
          for (std::size_t c = 0; c < cin; ++c) acc += wd[(oc * cin + c) * k + j] * xin[c];
        }
        o[oc] = acc;
      }
    }
  }
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  return make_result(Shape{B, lout, cout}, std::move(out), {x, weight, bias}, "conv1d",
                     [=](std::span<const Real> g) {
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t t = 0; t < lout; ++t) {
                           const Real* go = g.data() + (b * lout + t) * cout;
                           if (bn->requires_grad) {
                             auto& gb = bn->grad_buffer();
                             for (std::size_t oc = 0; oc < cout; ++oc) gb[oc] += go[oc];
                           }
                           for (std::size_t oc = 0; oc < cout; ++oc) {
                             for (std::size_t j = 0; j < k; ++j) {
                               std::size_t row = (b * L + t * stride + j) * cin;
                               for (std::size_t c = 0; c < cin; ++c) {
                                 std::size_t wi = (oc * cin + c) * k + j;
                                 if (wn->requires_grad) wn->grad_buffer()[wi] += go[oc] * xn->data[row + c];
                                 if (xn->requires_grad) xn->grad_buffer()[row + c] += go[oc] * wn->data[wi];
                               }
                             }
                           }
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding table must be [N, d], got " + shape_str(table.shape()));
  std::size_t N = table.dim(0), d = table.dim(1);
  auto td = table.data();
  auto idx = std::make_shared<std::vector<std::size_t>>(ids.begin(), ids.end());
  std::vector<Real> out(idx->size() * d);
  for (std::size_t i = 0; i < idx->size(); ++i) {
    if ((*idx)[i] >= N) {
      throw ContractError("embedding index " + std::to_string((*idx)[i]) + " out of range for " +
                          std::to_string(N) + " rows");
    }
    std::copy_n(td.data() + (*idx)[i] * d, d, out.data() + i * d);
  }
  auto tn = table.node();
  return make_result(Shape{idx->size(), d}, std::move(out), {table}, "embedding",
                     [tn, idx, d](std::span<const Real> g) {
                       auto& gt = tn->grad_buffer();
                       for (std::size_t i = 0; i < idx->size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) gt[(*idx)[i] * d + j] += g[i * d + j];
                       }
                     });
}

Tensor gather_rows(const Tensor& x, const std::vector<std::vector<std::size_t>>& rows) {
  if (x.rank() != 3) throw DimensionError("gather_rows expects [B, S, d], got " + shape_str(x.shape()));
  std::size_t B = x.dim(0), S = x.dim(1), d = x.dim(2);
  if (rows.size() != B) {
    throw ContractError("gather_rows has " + std::to_string(rows.size()) + " index lists for batch " +
                        std::to_string(B));
  }
  std::size_t n = B ? rows[0].size() : 0;
  auto src = std::make_shared<std::vector<std::size_t>>();
  src->reserve(B * n);
  for (std::size_t b = 0; b < B; ++b) {
    if (rows[b].size() != n) throw ContractError("gather_rows index lists differ in length");
    for (auto s : rows[b]) {
      if (s >= S) {
        throw ContractError("row index " + std::to_string(s) + " out of range for sequence length " +
                            std::to_string(S));
      }
      src->push_back(b * S + s);
    }
  }
  auto xd = x.data();
  std::vector<Real> out(B * n * d);
  for (std::size_t i = 0; i < src->size(); ++i) std::copy_n(xd.data() + (*src)[i] * d, d, out.data() + i * d);
  auto xn = x.node();
  return make_result(Shape{B, n, d}, std::move(out), {x}, "gather_rows",
                     [xn, src, d](std::span<const Real> g) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t i = 0; i < src->size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) gx[(*src)[i] * d + j] += g[i * d + j];
                       }
                     });
}

Tensor sum(const Tensor& x) {
  double total = 0;
  for (auto v : x.data()) total += v;
  auto xn = x.node();
  return make_result(Shape{}, {static_cast<Real>(total)}, {x}, "sum", [xn](std::span<const Real> g) {
    auto& gx = xn->grad_buffer();
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  double total = 0;
  for (auto v : x.data()) total += v;
  std::size_t n = x.numel();
  auto xn = x.node();
  return make_result(Shape{}, {static_cast<Real>(total / static_cast<double>(n))}, {x}, "mean",
                     [xn, n](std::span<const Real> g) {
                       auto& gx = xn->grad_buffer();
                       Real share = g[0] / static_cast<Real>(n);
                       for (auto& v : gx) v += share;
                     });
}

namespace {

Tensor reduce_axis(const Tensor& x, int axis, bool keepdim, bool average) {
  std::size_t a = norm_axis(axis, x.rank(), x.shape());
  auto sp = split_axis(x.shape(), a);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[a] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(a));
  }
  Real scale = average ? Real(1) / static_cast<Real>(sp.len) : Real(1);
  auto xd = x.data();
  std::vector<Real> out(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double acc = 0;
      for (std::size_t l = 0; l < sp.len; ++l) acc += xd[(o * sp.len + l) * sp.inner + i];
      out[o * sp.inner + i] = static_cast<Real>(acc * scale);
    }
  }
  auto xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {x}, average ? "mean_axis" : "sum_axis",
                     [xn, sp, scale](std::span<const Real> g) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t l = 0; l < sp.len; ++l) {
                           for (std::size_t i = 0; i < sp.inner; ++i) {
                             gx[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i] * scale;
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor sum(const Tensor& x, int axis, bool keepdim) { return reduce_axis(x, axis, keepdim, false); }

Tensor mean(const Tensor& x, int axis, bool keepdim) { return reduce_axis(x, axis, keepdim, true); }

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  const auto& s0 = parts[0].shape();
  std::size_t a = norm_axis(axis, s0.size(), s0);
  Shape out_shape = s0;
  out_shape[a] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t k = 0; ok && k < s.size(); ++k) ok = k == a || s[k] == s0[k];
    if (!ok) throw DimensionError("concat shape mismatch: " + shape_str(s0) + " vs " + shape_str(s));
    out_shape[a] += s[a];
  }
  auto sp = split_axis(out_shape, a);
  std::vector<Real> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::size_t len = p.dim(static_cast<int>(a));
    auto pd = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(pd.data() + o * len * sp.inner, len * sp.inner,
                  out.data() + (o * sp.len + off) * sp.inner);
    }
    off += len;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result(std::move(out_shape), std::move(out), parts, "concat",
                     [nodes, offsets, sp](std::span<const Real> g) {
                       for (std::size_t n = 0; n < nodes.size(); ++n) {
                         auto& node = *nodes[n];
                         if (!node.requires_grad) continue;
                         std::size_t len = node.data.size() / (sp.outer * sp.inner);
                         auto& gp = node.grad_buffer();
                         for (std::size_t o = 0; o < sp.outer; ++o) {
                           for (std::size_t i = 0; i < len * sp.inner; ++i) {
                             gp[o * len * sp.inner + i] += g[(o * sp.len + offsets[n]) * sp.inner + i];
                           }
                         }
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  std::size_t a = norm_axis(axis, x.rank(), x.shape());
  auto sp = split_axis(x.shape(), a);
  if (start + length > sp.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds axis of length " + std::to_string(sp.len));
  }
  Shape out_shape = x.shape();
  out_shape[a] = length;
  auto xd = x.data();
  std::vector<Real> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xd.data() + (o * sp.len + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  auto xn = x.node();
  return make_result(std::move(out_shape), std::move(out), {x}, "slice",
                     [xn, sp, start, length](std::span<const Real> g) {
                       auto& gx = xn->grad_buffer();
                       for (std::size_t o = 0; o < sp.outer; ++o) {
                         for (std::size_t i = 0; i < length * sp.inner; ++i) {
                           gx[(o * sp.len + start) * sp.inner + i] += g[o * length * sp.inner + i];
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects [N, K] logits, got " + shape_str(logits.shape()));
  std::size_t N = logits.dim(0), K = logits.dim(1);
  if (targets.size() != N) {
    throw DimensionError("cross_entropy has " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(N) + " rows");
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  auto lsm = std::make_shared<std::vector<Real>>(log_softmax_rows(logits.data(), K));
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    if ((*idx)[n] >= K) {
      throw ContractError("target " + std::to_string((*idx)[n]) + " out of range for " +
                          std::to_string(K) + " classes");
    }
    total -= (*lsm)[n * K + (*idx)[n]];
  }
  auto ln = logits.node();
  return make_result(Shape{}, {static_cast<Real>(total / static_cast<double>(N))}, {logits},
                     "cross_entropy", [ln, idx, lsm, N, K](std::span<const Real> g) {
                       auto& gl = ln->grad_buffer();
                       Real scale = g[0] / static_cast<Real>(N);
                       for (std::size_t n = 0; n < N; ++n) {
                         for (std::size_t k = 0; k < K; ++k) {
                           Real p = std::exp((*lsm)[n * K + k]);
                           gl[n * K + k] += scale * (p - (k == (*idx)[n] ? Real(1) : Real(0)));
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, const Tensor& target_probs) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy expects [N, K] logits, got " + shape_str(logits.shape()));
  if (target_probs.shape() != logits.shape()) {
    throw DimensionError("cross_entropy targets " + shape_str(target_probs.shape()) +
                         " do not match logits " + shape_str(logits.shape()));
  }
  std::size_t N = logits.dim(0), K = logits.dim(1);
  auto lsm = std::make_shared<std::vector<Real>>(log_softmax_rows(logits.data(), K));
  auto td = target_probs.data();
  double total = 0;
  for (std::size_t i = 0; i < N * K; ++i) {
    if (td[i] != 0) total -= static_cast<double>(td[i]) * (*lsm)[i];
  }
  auto ln = logits.node();
  auto tn = target_probs.node();
  return make_result(Shape{}, {static_cast<Real>(total / static_cast<double>(N))}, {logits, target_probs},
                     "cross_entropy_soft", [ln, tn, lsm, N, K](std::span<const Real> g) {
                       Real scale = g[0] / static_cast<Real>(N);
                       const auto& t = tn->data;
                       if (ln->requires_grad) {
                         auto& gl = ln->grad_buffer();
                         for (std::size_t n = 0; n < N; ++n) {
                           double tsum = 0;
                           for (std::size_t k = 0; k < K; ++k) tsum += t[n * K + k];
                           for (std::size_t k = 0; k < K; ++k) {
                             double p = std::exp(static_cast<double>((*lsm)[n * K + k]));
                             gl[n * K + k] += static_cast<Real>(scale * (p * tsum - t[n * K + k]));
                           }
                         }
                       }
                       if (tn->requires_grad) {
                         auto& gt = tn->grad_buffer();
                         for (std::size_t i = 0; i < N * K; ++i) gt[i] -= scale * (*lsm)[i];
                       }
                     });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto ad = a.data();
  auto bd = b.data();
  std::size_t n = ad.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double diff = static_cast<double>(ad[i]) - bd[i];
    total += diff * diff;
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result(Shape{}, {static_cast<Real>(total / static_cast<double>(n))}, {a, b}, "mse",
                     [an, bn, n](std::span<const Real> g) {
                       Real scale = Real(2) * g[0] / static_cast<Real>(n);
                       if (an->requires_grad) {
                         auto& ga = an->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) ga[i] += scale * (an->data[i] - bn->data[i]);
                       }
                       if (bn->requires_grad) {
                         auto& gb = bn->grad_buffer();
                         for (std::size_t i = 0; i < n; ++i) gb[i] -= scale * (an->data[i] - bn->data[i]);
                       }
                     });
}

Tensor stop_gradient(const Tensor& x) {
  // No parents recorded: the result is a constant as far as the tape is concerned.
  std::vector<Real> out(x.data().begin(), x.data().end());
  return make_result(x.shape(), std::move(out), {}, "stop_gradient", nullptr);
}

Tensor straight_through(const Tensor& hard, const Tensor& soft) {
  if (hard.shape() != soft.shape()) {
    throw DimensionError("straight_through shapes differ: " + shape_str(hard.shape()) + " vs " +
                         shape_str(soft.shape()));
  }
  std::vector<Real> out(hard.data().begin(), hard.data().end());
  auto sn = soft.node();
  return make_result(hard.shape(), std::move(out), {soft}, "straight_through",
                     [sn](std::span<const Real> g) { sn->accumulate(g); });
}

TIMEMAE_END_NAMESPACE
