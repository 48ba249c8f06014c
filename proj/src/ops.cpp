#include "dpn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dpn/error.hpp"

namespace dpn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::size_t norm_axis(int axis, std::size_t rank, std::string_view op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

Shape broadcast_shape(const Shape& a, const Shape& b, std::string_view op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

/// Strides of `in` aligned to `out`, zero along broadcast axes.
std::vector<std::size_t> bcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> s(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t ii = in.size() - 1 - k;
    const std::size_t oi = out.size() - 1 - k;
    s[oi] = in[ii] == 1 ? 0 : stride;
    stride *= in[ii];
  }
  return s;
}

/// Calls fn(out_index, a_index, b_index) over every element of `out`.
template <class Fn>
void for_each_bcast(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb,
                    Fn&& fn) {
  const std::size_t n = numel(out);
  if (n == 0) return;
  const std::size_t r = out.size();
  if (r == 0) {
    fn(0, 0, 0);
    return;
  }
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t last = out[r - 1];
  for (std::size_t i = 0; i < n;) {
    for (std::size_t j = 0; j < last; ++j, ++i) fn(i, ia + j * sa[r - 1], ib + j * sb[r - 1]);
    // carry into the outer axes
    std::size_t ax = r - 1;
    while (ax > 0) {
      --ax;
      ++idx[ax];
      ia += sa[ax];
      ib += sb[ax];
      if (idx[ax] < out[ax]) break;
      ia -= sa[ax] * out[ax];
      ib -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinKind { Add, Sub, Mul };

Var binary(BinKind kind, Var a, Var b) {
  static constexpr std::string_view names[] = {"add", "sub", "mul"};
  const std::string_view name = names[static_cast<int>(kind)];
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape(), name);
  Tensor out(out_shape);
  const bool same = av.shape() == bv.shape();
  auto apply = [kind](double x, double y) {
    switch (kind) {
      case BinKind::Add: return x + y;
      case BinKind::Sub: return x - y;
      default: return x * y;
    }
  };
  const auto sa = bcast_strides(av.shape(), out_shape);
  const auto sb = bcast_strides(bv.shape(), out_shape);
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
  } else {
    for_each_bcast(out_shape, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = apply(av[ia], bv[ib]); });
  }
  return g.record(name, std::move(out), {a, b}, [a, b, kind, same, sa, sb, out_shape](Graph& g, const Tensor& go) {
    const bool need_a = g.needs_grad(a.id());
    const bool need_b = g.needs_grad(b.id());
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor* ga = need_a ? &g.grad_slot(a.id()) : nullptr;
    Tensor* gb = need_b ? &g.grad_slot(b.id()) : nullptr;
    auto body = [&](std::size_t i, std::size_t ia, std::size_t ib) {
      const double gi = go[i];
      switch (kind) {
        case BinKind::Add:
          if (ga) (*ga)[ia] += gi;
          if (gb) (*gb)[ib] += gi;
          break;
        case BinKind::Sub:
          if (ga) (*ga)[ia] += gi;
          if (gb) (*gb)[ib] -= gi;
          break;
        case BinKind::Mul:
          if (ga) (*ga)[ia] += gi * bv[ib];
          if (gb) (*gb)[ib] += gi * av[ia];
          break;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < go.size(); ++i) body(i, i, i);
    } else {
      for_each_bcast(out_shape, sa, sb, body);
    }
  });
}

template <class F, class D>
Var unary(std::string_view name, Var a, F f, D dfdx_from_xy) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return g.record(name, std::move(out), {a}, [a, dfdx_from_xy](Graph& g, const Tensor& go) {
    // output value is re-read through the node's own input: recompute y lazily
    const Tensor& av = a.value();
    Tensor& ga = g.grad_slot(a.id());
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * dfdx_from_xy(av[i]);
  });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct OuterInner {
  std::size_t outer = 1, len = 1, inner = 1;
};

OuterInner split_at(const Shape& s, std::size_t axis) {
  OuterInner r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var add(Var a, Var b) { return binary(BinKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(BinKind::Sub, a, b); }
Var mul(Var a, Var b) { return binary(BinKind::Mul, a, b); }

Var scale(Var a, double s) {
  return unary("scale", a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var relu(Var a) {
  Graph& g = a.graph();
  if (g.track_regions()) {
    const Tensor& av = a.value();
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      word = (word << 1) | (av[i] > 0.0 ? 1u : 0u);
      if (i % 64 == 63) {
        g.fold_region(word);
        word = 0;
      }
    }
    g.fold_region(word);
  }
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, sigmoid_scalar, [](double x) {
    const double s = sigmoid_scalar(x);
    return s * (1.0 - s);
  });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double x) {
    const double t = std::tanh(x);
    return 1.0 - t * t;
  });
}

Var clamp(Var a, double lo, double hi) {
  Graph& g = a.graph();
  if (g.track_regions()) {
    for (double x : a.value().data()) g.fold_region(x < lo ? 1 : (x > hi ? 2 : 0));
  }
  return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var softmax(Var a, int axis) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const std::size_t ax = norm_axis(axis, av.rank(), "softmax");
  const OuterInner d = split_at(av.shape(), ax);
  Tensor out(av.shape());
  for (std::size_t o = 0; o < d.outer; ++o) {
    for (std::size_t in = 0; in < d.inner; ++in) {
      const std::size_t base = o * d.len * d.inner + in;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < d.len; ++k) mx = std::max(mx, av[base + k * d.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < d.len; ++k) {
        const double e = std::exp(av[base + k * d.inner] - mx);
        out[base + k * d.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < d.len; ++k) out[base + k * d.inner] /= z;
    }
  }
  Tensor y = out;
  return g.record("softmax", std::move(out), {a}, [a, d, y = std::move(y)](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    for (std::size_t o = 0; o < d.outer; ++o) {
      for (std::size_t in = 0; in < d.inner; ++in) {
        const std::size_t base = o * d.len * d.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < d.len; ++k) dot += go[base + k * d.inner] * y[base + k * d.inner];
        for (std::size_t k = 0; k < d.len; ++k) {
          const std::size_t i = base + k * d.inner;
          ga[i] += y[i] * (go[i] - dot);
        }
      }
    }
  });
}

Var matmul(Var a, Var b) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() < 2 || bv.rank() < 2) {
    throw DimensionError("matmul: operands need rank >= 2, got " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
  }
  const std::size_t p = av.shape()[av.rank() - 2];
  const std::size_t q = av.shape()[av.rank() - 1];
  const std::size_t q2 = bv.shape()[bv.rank() - 2];
  const std::size_t r = bv.shape()[bv.rank() - 1];
  if (q != q2) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  }

  // b without batch axes: fold a's batch into rows.
  if (bv.rank() == 2) {
    const std::size_t rows = av.size() / q;
    Shape out_shape = av.shape();
    out_shape.back() = r;
    Tensor out(out_shape);
    MatMap(out.ptr(), rows, r).noalias() = ConstMatMap(av.ptr(), rows, q) * ConstMatMap(bv.ptr(), q, r);
    return g.record("matmul", std::move(out), {a, b}, [a, b, rows, q, r](Graph& g, const Tensor& go) {
      ConstMatMap G(go.ptr(), rows, r);
      if (g.needs_grad(a.id())) {
        MatMap(g.grad_slot(a.id()).ptr(), rows, q).noalias() += G * ConstMatMap(b.value().ptr(), q, r).transpose();
      }
      if (g.needs_grad(b.id())) {
        MatMap(g.grad_slot(b.id()).ptr(), q, r).noalias() += ConstMatMap(a.value().ptr(), rows, q).transpose() * G;
      }
    });
  }

  const Shape a_batch(av.shape().begin(), av.shape().end() - 2);
  const Shape b_batch(bv.shape().begin(), bv.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(a_batch, b_batch, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch extents not broadcastable, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  }
  const auto sa = bcast_strides(a_batch, batch);
  const auto sb = bcast_strides(b_batch, batch);
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  Tensor out(out_shape);
  const std::size_t nb = numel(batch);
  std::vector<std::size_t> ia(nb), ib(nb);
  {
    Shape bshape = batch.empty() ? Shape{1} : batch;
    auto sa2 = batch.empty() ? std::vector<std::size_t>{0} : sa;
    auto sb2 = batch.empty() ? std::vector<std::size_t>{0} : sb;
    for_each_bcast(bshape, sa2, sb2, [&](std::size_t i, std::size_t x, std::size_t y) {
      ia[i] = x;
      ib[i] = y;
    });
  }
  for (std::size_t k = 0; k < nb; ++k) {
    MatMap(out.ptr() + k * p * r, p, r).noalias() =
        ConstMatMap(av.ptr() + ia[k] * p * q, p, q) * ConstMatMap(bv.ptr() + ib[k] * q * r, q, r);
  }
  return g.record("matmul", std::move(out), {a, b}, [a, b, p, q, r, ia, ib](Graph& g, const Tensor& go) {
    const bool need_a = g.needs_grad(a.id());
    const bool need_b = g.needs_grad(b.id());
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    double* ga = need_a ? g.grad_slot(a.id()).ptr() : nullptr;
    double* gb = need_b ? g.grad_slot(b.id()).ptr() : nullptr;
    for (std::size_t k = 0; k < ia.size(); ++k) {
      ConstMatMap G(go.ptr() + k * p * r, p, r);
      if (ga) MatMap(ga + ia[k] * p * q, p, q).noalias() += G * ConstMatMap(bv.ptr() + ib[k] * q * r, q, r).transpose();
      if (gb) MatMap(gb + ib[k] * q * r, q, r).noalias() += ConstMatMap(av.ptr() + ia[k] * p * q, p, q).transpose() * G;
    }
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = a.graph();
  Tensor out = a.value().reshaped(std::move(shape));
  return g.record("reshape", std::move(out), {a}, [a](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  });
}

Var permute(Var a, const std::vector<std::size_t>& perm) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const std::size_t r = av.rank();
  if (perm.size() != r) throw DimensionError("permute: permutation rank differs from " + shape_str(av.shape()));
  std::vector<char> seen(r, 0);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = 1;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * av.shape()[i];
  Shape out_shape(r);
  std::vector<std::size_t> gather_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = av.shape()[perm[i]];
    gather_strides[i] = in_strides[perm[i]];
  }
  // src index for every output element
  std::vector<std::size_t> src(av.size());
  const std::vector<std::size_t> zero(r, 0);
  for_each_bcast(out_shape, gather_strides, zero, [&](std::size_t i, std::size_t s, std::size_t) { src[i] = s; });
  Tensor out(out_shape);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[src[i]];
  return g.record("permute", std::move(out), {a}, [a, src = std::move(src)](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    for (std::size_t i = 0; i < go.size(); ++i) ga[src[i]] += go[i];
  });
}

Var transpose(Var a) {
  const std::size_t r = a.rank();
  if (r < 2) throw DimensionError("transpose: needs rank >= 2, got " + shape_str(a.shape()));
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(a, perm);
}

Var concat(const std::vector<Var>& xs, int axis) {
  if (xs.empty()) throw UsageError("concat: no inputs");
  Graph& g = xs.front().graph();
  const Shape& s0 = xs.front().shape();
  const std::size_t ax = norm_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  std::vector<std::size_t> widths;
  for (const Var& x : xs) {
    const Shape& s = x.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == s0[i];
    if (!ok) throw DimensionError("concat: " + shape_str(s) + " incompatible with " + shape_str(s0) + " on axis " + std::to_string(ax));
    out_shape[ax] += s[ax];
    widths.push_back(numel(s) / (split_at(s, ax).outer == 0 ? 1 : split_at(s, ax).outer));
  }
  const std::size_t outer = split_at(s0, ax).outer;
  const std::size_t row = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  Tensor out(out_shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor& v = xs[k].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.ptr() + o * widths[k], widths[k], out.ptr() + o * row + off);
    }
    off += widths[k];
  }
  return g.record("concat", std::move(out), xs, [xs, widths, outer, row](Graph& g, const Tensor& go) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (g.needs_grad(xs[k].id())) {
        Tensor& gx = g.grad_slot(xs[k].id());
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < widths[k]; ++j) gx[o * widths[k] + j] += go[o * row + off + j];
        }
      }
      off += widths[k];
    }
  });
}

Var slice(Var a, int axis, std::size_t start, std::size_t length) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const std::size_t ax = norm_axis(axis, av.rank(), "slice");
  if (start + length > av.shape()[ax]) {
    throw DimensionError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds extent of " + shape_str(av.shape()) + " on axis " + std::to_string(ax));
  }
  const OuterInner d = split_at(av.shape(), ax);
  Shape out_shape = av.shape();
  out_shape[ax] = length;
  Tensor out(out_shape);
  const std::size_t src_row = d.len * d.inner;
  const std::size_t dst_row = length * d.inner;
  for (std::size_t o = 0; o < d.outer; ++o) {
    std::copy_n(av.ptr() + o * src_row + start * d.inner, dst_row, out.ptr() + o * dst_row);
  }
  return g.record("slice", std::move(out), {a}, [a, d, start, src_row, dst_row](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    for (std::size_t o = 0; o < d.outer; ++o) {
      for (std::size_t j = 0; j < dst_row; ++j) ga[o * src_row + start * d.inner + j] += go[o * dst_row + j];
    }
  });
}

Var broadcast_to(Var a, const Shape& shape) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  if (broadcast_shape(av.shape(), shape, "broadcast_to") != shape) {
    throw DimensionError("broadcast_to: cannot expand " + shape_str(av.shape()) + " to " + shape_str(shape));
  }
  const auto sa = bcast_strides(av.shape(), shape);
  const std::vector<std::size_t> zero(shape.size(), 0);
  Tensor out(shape);
  for_each_bcast(shape, sa, zero, [&](std::size_t i, std::size_t ia, std::size_t) { out[i] = av[ia]; });
  return g.record("broadcast_to", std::move(out), {a}, [a, sa, shape, zero](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    for_each_bcast(shape, sa, zero, [&](std::size_t i, std::size_t ia, std::size_t) { ga[ia] += go[i]; });
  });
}

namespace {

Var reduce_axis(Var a, int axis, bool keepdim, bool average) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  const std::size_t ax = norm_axis(axis, av.rank(), average ? "mean" : "sum");
  const OuterInner d = split_at(av.shape(), ax);
  const double w = average ? 1.0 / static_cast<double>(d.len) : 1.0;
  Shape out_shape = av.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  Tensor out(out_shape);
  for (std::size_t o = 0; o < d.outer; ++o) {
    for (std::size_t k = 0; k < d.len; ++k) {
      const double* src = av.ptr() + (o * d.len + k) * d.inner;
      double* dst = out.ptr() + o * d.inner;
      for (std::size_t in = 0; in < d.inner; ++in) dst[in] += src[in];
    }
  }
  if (average) {
    for (double& v : out.data()) v *= w;
  }
  return g.record(average ? "mean" : "sum", std::move(out), {a}, [a, d, w](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    for (std::size_t o = 0; o < d.outer; ++o) {
      for (std::size_t k = 0; k < d.len; ++k) {
        double* dst = ga.ptr() + (o * d.len + k) * d.inner;
        const double* src = go.ptr() + o * d.inner;
        for (std::size_t in = 0; in < d.inner; ++in) dst[in] += w * src[in];
      }
    }
  });
}

}  // namespace

Var sum(Var a, int axis, bool keepdim) { return reduce_axis(a, axis, keepdim, false); }
Var mean(Var a, int axis, bool keepdim) { return reduce_axis(a, axis, keepdim, true); }

Var sum_all(Var a) {
  Graph& g = a.graph();
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return g.record("sum_all", Tensor::scalar(s), {a}, [a](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    const double v = go[0];
    for (double& x : ga.data()) x += v;
  });
}

Var stop_gradient(Var a) {
  Graph& g = a.graph();
  return g.constant(a.value());
}

Var embed_columns(Var a, std::span<const std::size_t> targets, std::size_t out_cols) {
  Graph& g = a.graph();
  const Tensor& av = a.value();
  if (av.rank() < 1 || av.shape().back() != targets.size()) {
    throw DimensionError("embed_columns: last extent of " + shape_str(av.shape()) + " differs from " +
                         std::to_string(targets.size()) + " targets");
  }
  for (auto t : targets) {
    if (t >= out_cols) throw DimensionError("embed_columns: target column out of range");
  }
  const std::size_t in_cols = targets.size();
  const std::size_t rows = in_cols ? av.size() / in_cols : 0;
  Shape out_shape = av.shape();
  out_shape.back() = out_cols;
  Tensor out(out_shape);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < in_cols; ++k) out[r * out_cols + targets[k]] += av[r * in_cols + k];
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return g.record("embed_columns", std::move(out), {a}, [a, tg = std::move(tg), rows, out_cols](Graph& g, const Tensor& go) {
    Tensor& ga = g.grad_slot(a.id());
    const std::size_t in_cols = tg.size();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < in_cols; ++k) ga[r * in_cols + k] += go[r * out_cols + tg[k]];
    }
  });
}

Var conv1d(Var x, Var kernels, ConvMode mode) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  const Tensor& kv = kernels.value();
  const bool batched_x = xv.rank() == 3;
  if (xv.rank() != 2 && xv.rank() != 3) throw DimensionError("conv1d: x must be [t,n] or [B,t,n], got " + shape_str(xv.shape()));
  if (kv.rank() != 3 && kv.rank() != 4) {
    throw DimensionError("conv1d: kernels must be [k,n,c] or [B,k,n,c], got " + shape_str(kv.shape()));
  }
  const bool per_instance = kv.rank() == 4;
  const std::size_t B = batched_x ? xv.dim(0) : 1;
  const std::size_t t = xv.dim(xv.rank() - 2);
  const std::size_t n = xv.dim(xv.rank() - 1);
  const std::size_t k = kv.dim(kv.rank() - 3);
  const std::size_t kn = kv.dim(kv.rank() - 2);
  const std::size_t c = kv.dim(kv.rank() - 1);
  if (k % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(k));
  if (t == 0) throw ConfigError("conv1d: empty sequence");
  if (kn != n) throw DimensionError("conv1d: kernel channels " + shape_str(kv.shape()) + " vs input " + shape_str(xv.shape()));
  if (per_instance && (!batched_x || kv.dim(0) != B)) {
    throw DimensionError("conv1d: per-instance kernels " + shape_str(kv.shape()) + " need x batch " + shape_str(xv.shape()));
  }
  if (mode == ConvMode::Depthwise && c != 1) {
    throw DimensionError("conv1d: depthwise mode needs kernels with c == 1, got " + shape_str(kv.shape()));
  }
  const std::size_t out_c = mode == ConvMode::Depthwise ? n : c;
  const long half = static_cast<long>(k / 2);
  Shape out_shape = batched_x ? Shape{B, t, out_c} : Shape{t, out_c};
  Tensor out(out_shape);
  const std::size_t kstride = k * n * c;

  auto for_taps = [=](auto&& body) {
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t kb = per_instance ? b * kstride : 0;
      for (std::size_t i = 0; i < t; ++i) {
        for (long l = -half; l <= half; ++l) {
          const long src = static_cast<long>(i) + l;
          if (src < 0 || src >= static_cast<long>(t)) continue;
          body(b, i, static_cast<std::size_t>(src), kb + static_cast<std::size_t>(l + half) * n * c);
        }
      }
    }
  };
  const double* X = xv.ptr();
  const double* K = kv.ptr();
  double* Y = out.ptr();
  if (mode == ConvMode::Full) {
    for_taps([&](std::size_t b, std::size_t i, std::size_t src, std::size_t koff) {
      const double* xr = X + (b * t + src) * n;
      double* yr = Y + (b * t + i) * c;
      for (std::size_t ch = 0; ch < n; ++ch) {
        const double xv_ = xr[ch];
        const double* kr = K + koff + ch * c;
        for (std::size_t q = 0; q < c; ++q) yr[q] += kr[q] * xv_;
      }
    });
  } else {
    for_taps([&](std::size_t b, std::size_t i, std::size_t src, std::size_t koff) {
      const double* xr = X + (b * t + src) * n;
      double* yr = Y + (b * t + i) * n;
      for (std::size_t ch = 0; ch < n; ++ch) yr[ch] += K[koff + ch] * xr[ch];
    });
  }
  return g.record("conv1d", std::move(out), {x, kernels}, [x, kernels, mode, for_taps, n, c, t](Graph& g, const Tensor& go) {
    const double* X = x.value().ptr();
    const double* K = kernels.value().ptr();
    double* gx = g.needs_grad(x.id()) ? g.grad_slot(x.id()).ptr() : nullptr;
    double* gk = g.needs_grad(kernels.id()) ? g.grad_slot(kernels.id()).ptr() : nullptr;
    const double* G = go.ptr();
    if (mode == ConvMode::Full) {
      for_taps([&](std::size_t b, std::size_t i, std::size_t src, std::size_t koff) {
        const double* gr = G + (b * t + i) * c;
        const double* xr = X + (b * t + src) * n;
        for (std::size_t ch = 0; ch < n; ++ch) {
          const double* kr = K + koff + ch * c;
          double acc = 0.0;
          for (std::size_t q = 0; q < c; ++q) {
            acc += kr[q] * gr[q];
            if (gk) gk[koff + ch * c + q] += xr[ch] * gr[q];
          }
          if (gx) gx[(b * t + src) * n + ch] += acc;
        }
      });
    } else {
      for_taps([&](std::size_t b, std::size_t i, std::size_t src, std::size_t koff) {
        const double* gr = G + (b * t + i) * n;
        const double* xr = X + (b * t + src) * n;
        for (std::size_t ch = 0; ch < n; ++ch) {
          if (gx) gx[(b * t + src) * n + ch] += K[koff + ch] * gr[ch];
          if (gk) gk[koff + ch] += xr[ch] * gr[ch];
        }
      });
    }
  });
}

Var batchnorm(Var x, Var gamma, Var beta, BatchNormState& state, bool training, double momentum, double eps) {
  Graph& g = x.graph();
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("batchnorm: x must be [b,d], got " + shape_str(xv.shape()));
  const std::size_t b = xv.dim(0);
  const std::size_t d = xv.dim(1);
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("batchnorm: gamma/beta extent differs from d=" + std::to_string(d));
  }
  if (state.running_mean.size() != d) {
    state.running_mean = Tensor({d}, 0.0);
    state.running_var = Tensor({d}, 1.0);
  }
  if (training && b < 2) throw Error("batchnorm: training mode needs batch >= 2, got " + std::to_string(b));
  Tensor mu({d}), inv_std({d});
  if (training) {
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < d; ++j) mu[j] += xv[i * d + j];
    for (std::size_t j = 0; j < d; ++j) mu[j] /= static_cast<double>(b);
    Tensor var({d});
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double e = xv[i * d + j] - mu[j];
        var[j] += e * e;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      var[j] /= static_cast<double>(b);
      inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
      state.running_mean[j] = momentum * state.running_mean[j] + (1.0 - momentum) * mu[j];
      state.running_var[j] = momentum * state.running_var[j] + (1.0 - momentum) * var[j];
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + eps);
    }
  }
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  Tensor xhat(xv.shape());
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[i * d + j] - mu[j]) * inv_std[j];
      xhat[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  }
  return g.record("batchnorm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), b, d, training](Graph& g, const Tensor& go) {
                    const Tensor& gv = gamma.value();
                    if (g.needs_grad(gamma.id()) || g.needs_grad(beta.id())) {
                      Tensor& gg = g.grad_slot(gamma.id());
                      Tensor& gb = g.grad_slot(beta.id());
                      for (std::size_t i = 0; i < b; ++i) {
                        for (std::size_t j = 0; j < d; ++j) {
                          gg[j] += go[i * d + j] * xhat[i * d + j];
                          gb[j] += go[i * d + j];
                        }
                      }
                    }
                    if (!g.needs_grad(x.id())) return;
                    Tensor& gx = g.grad_slot(x.id());
                    if (!training) {
                      for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += go[i * d + j] * gv[j] * inv_std[j];
                      return;
                    }
                    const double nb = static_cast<double>(b);
                    for (std::size_t j = 0; j < d; ++j) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t i = 0; i < b; ++i) {
                        const double dh = go[i * d + j] * gv[j];
                        s1 += dh;
                        s2 += dh * xhat[i * d + j];
                      }
                      for (std::size_t i = 0; i < b; ++i) {
                        const double dh = go[i * d + j] * gv[j];
                        gx[i * d + j] += inv_std[j] / nb * (nb * dh - s1 - xhat[i * d + j] * s2);
                      }
                    }
                  });
}

Var gather_rows(Graph& g, Parameter& table, std::span<const std::int64_t> ids, std::string_view field) {
  const Tensor& tv = table.value;
  if (tv.rank() != 2) throw DimensionError("gather_rows: table must be 2-D, got " + shape_str(tv.shape()));
  const std::size_t v = tv.dim(0);
  const std::size_t e = tv.dim(1);
  Tensor out({ids.size(), e});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const std::int64_t id = ids[k];
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw IndexError("lookup: id " + std::to_string(id) + " out of range [0, " + std::to_string(v) + ") for field '" +
                       std::string(field) + "'");
    }
    std::copy_n(tv.ptr() + static_cast<std::size_t>(id) * e, e, out.ptr() + k * e);
  }
  // Participates in the graph through a parameter-bound leaf so backward runs.
  Var handle = g.param(table);
  std::vector<std::int64_t> idv(ids.begin(), ids.end());
  Parameter* tp = &table;
  return g.record("gather_rows", std::move(out), {handle}, [tp, idv = std::move(idv), e](Graph&, const Tensor& go) {
    for (std::size_t k = 0; k < idv.size(); ++k) {
      const auto row = static_cast<std::size_t>(idv[k]);
      double* dst = tp->grad.ptr() + row * e;
      const double* src = go.ptr() + k * e;
      for (std::size_t j = 0; j < e; ++j) dst[j] += src[j];
      if (tp->sparse) tp->mark_row(row);
    }
  });
}

Var bce_with_logits(Var logits, std::span<const double> labels) {
  Graph& g = logits.graph();
  const Tensor& zv = logits.value();
  if (zv.size() != labels.size()) {
    throw DimensionError("bce_with_logits: " + std::to_string(zv.size()) + " logits vs " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw UsageError("bce_with_logits: empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    const double z = zv[i];
    loss += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  const double n = static_cast<double>(labels.size());
  std::vector<double> y(labels.begin(), labels.end());
  return g.record("bce_with_logits", Tensor::scalar(loss / n), {logits}, [logits, y = std::move(y), n](Graph& g, const Tensor& go) {
    Tensor& gz = g.grad_slot(logits.id());
    const Tensor& zv = logits.value();
    for (std::size_t i = 0; i < zv.size(); ++i) gz[i] += go[0] * (sigmoid_scalar(zv[i]) - y[i]) / n;
  });
}

}  // namespace dpn
