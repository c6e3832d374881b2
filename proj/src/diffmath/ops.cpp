#include "alm/diffmath/ops.hpp"

#include <cmath>
#include <sstream>

#include "alm/diffmath/kernels.hpp"
#include "alm/error.hpp"

namespace alm {
namespace {

int node_of(const Tensor& t) { return t.tracked() ? t.node() : -1; }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       shape_string(a.shape()) + " and " +
                       shape_string(b.shape()));
}

void require_rank2(const char* op, const Tensor& t) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_string(t.shape()));
  }
}

// Elementwise map with derivative dy/dx expressed through (x, y).
template <class F, class D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  std::vector<double> out(a.size());
  const double* x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  Tensor result(a.shape(), std::move(out));
  if (!a.tracked()) return result;
  const int na = a.node();
  Tensor in = a.detach();
  Tensor res = result;
  return a.tape()->record(
      std::move(result), {na},
      [na, in, res, dfdx](std::span<const double> g, Tape& tape) {
        auto ga = tape.grad_slot(na);
        const double* x = in.data();
        const double* y = res.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
      });
}

// Binary map with partials df/dx and df/dy given (x, y, out). One operand may
// be rank 0.
template <class F, class DX, class DY>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, F f, DX dfdx,
              DY dfdy) {
  const bool same = a.shape() == b.shape();
  const bool a_scalar = !same && a.rank() == 0;
  const bool b_scalar = !same && b.rank() == 0;
  if (!same && !a_scalar && !b_scalar) shape_error(name, a, b);
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  const std::size_t sa = a_scalar ? 0 : 1;
  const std::size_t sb = b_scalar ? 0 : 1;
  std::vector<double> out(n);
  const double* x = a.data();
  const double* y = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i * sa], y[i * sb]);
  Tensor result(shape, std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return result;
  const int na = node_of(a);
  const int nb = node_of(b);
  std::vector<int> parents;
  if (na >= 0) parents.push_back(na);
  if (nb >= 0) parents.push_back(nb);
  Tensor ia = a.detach();
  Tensor ib = b.detach();
  Tensor res = result;
  return tape->record(
      std::move(result), std::move(parents),
      [na, nb, ia, ib, res, sa, sb, dfdx, dfdy](std::span<const double> g,
                                                 Tape& tape) {
        const double* x = ia.data();
        const double* y = ib.data();
        const double* o = res.data();
        if (na >= 0) {
          auto ga = tape.grad_slot(na);
          for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i * sa] += g[i] * dfdx(x[i * sa], y[i * sb], o[i]);
          }
        }
        if (nb >= 0) {
          auto gb = tape.grad_slot(nb);
          for (std::size_t i = 0; i < g.size(); ++i) {
            gb[i * sb] += g[i] * dfdy(x[i * sa], y[i * sb], o[i]);
          }
        }
      });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", a, b);
  std::vector<double> out(m * n);
  const auto& kt = kernels::active();
  kt.gemm_nn(a.data(), b.data(), out.data(), m, k, n);
  Tensor result({m, n}, std::move(out));
  Tape* tape = common_tape({&a, &b});
  if (tape == nullptr) return result;
  const int na = node_of(a);
  const int nb = node_of(b);
  std::vector<int> parents;
  if (na >= 0) parents.push_back(na);
  if (nb >= 0) parents.push_back(nb);
  Tensor ia = a.detach();
  Tensor ib = b.detach();
  return tape->record(
      std::move(result), std::move(parents),
      [na, nb, ia, ib, m, k, n](std::span<const double> g, Tape& tape) {
        const auto& kt = kernels::active();
        if (na >= 0) {
          // dA = dC * B^T
          kt.gemm_nt_acc(g.data(), ib.data(), tape.grad_slot(na).data(), m, n, k);
        }
        if (nb >= 0) {
          // dB = A^T * dC
          kt.gemm_tn_acc(ia.data(), g.data(), tape.grad_slot(nb).data(), m, k, n);
        }
      });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_rank2("affine", x);
  require_rank2("affine", w);
  const std::size_t m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) shape_error("affine", x, w);
  if (bias.rank() != 1 || bias.dim(0) != n) shape_error("affine", w, bias);
  std::vector<double> out(m * n);
  const auto& kt = kernels::active();
  kt.gemm_nn(x.data(), w.data(), out.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i) kt.axpy(1.0, bias.data(), out.data() + i * n, n);
  Tensor result({m, n}, std::move(out));
  Tape* tape = common_tape({&x, &w, &bias});
  if (tape == nullptr) return result;
  const int nx = node_of(x), nw = node_of(w), nbias = node_of(bias);
  std::vector<int> parents;
  for (int p : {nx, nw, nbias}) {
    if (p >= 0) parents.push_back(p);
  }
  Tensor ix = x.detach();
  Tensor iw = w.detach();
  return tape->record(
      std::move(result), std::move(parents),
      [nx, nw, nbias, ix, iw, m, k, n](std::span<const double> g, Tape& tape) {
        const auto& kt = kernels::active();
        if (nx >= 0) kt.gemm_nt_acc(g.data(), iw.data(), tape.grad_slot(nx).data(), m, n, k);
        if (nw >= 0) kt.gemm_tn_acc(ix.data(), g.data(), tape.grad_slot(nw).data(), m, k, n);
        if (nbias >= 0) {
          auto gb = tape.grad_slot(nbias);
          for (std::size_t i = 0; i < m; ++i) kt.axpy(1.0, g.data() + i * n, gb.data(), n);
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Tensor negate(const Tensor& a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary(
      a, [offset](double x) { return x + offset; },
      [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  const double* x = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(x[i] > 0.0)) {
      std::ostringstream os;
      os << "log: non-positive input " << x[i] << " at index " << i;
      throw DomainError(os.str());
    }
  }
  return unary(
      a, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor elu(const Tensor& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return stable_sigmoid(x); });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, [](double x) { return stable_sigmoid(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& t, std::optional<std::size_t> axis) {
  if (axis && *axis >= std::max<std::size_t>(t.rank(), 1)) {
    throw DimensionError("sum: axis " + std::to_string(*axis) +
                         " out of range for shape " + shape_string(t.shape()));
  }
  // Collapse to (outer, reduced, inner) index space.
  std::size_t outer = 1, reduced = t.size(), inner = 1;
  Shape out_shape;
  if (axis && t.rank() > 0) {
    reduced = t.dim(*axis);
    for (std::size_t d = 0; d < t.rank(); ++d) {
      if (d < *axis) outer *= t.dim(d);
      if (d > *axis) inner *= t.dim(d);
      if (d != *axis) out_shape.push_back(t.dim(d));
    }
  }
  std::vector<double> out(outer * inner, 0.0);
  const double* x = t.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < reduced; ++r) {
      const double* src = x + (o * reduced + r) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  Tensor result(out_shape, std::move(out));
  if (!t.tracked()) return result;
  const int nt = t.node();
  return t.tape()->record(
      std::move(result), {nt},
      [nt, outer, reduced, inner](std::span<const double> g, Tape& tape) {
        auto gt = tape.grad_slot(nt);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t r = 0; r < reduced; ++r) {
            double* dst = gt.data() + (o * reduced + r) * inner;
            const double* src = g.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor mean(const Tensor& t, std::optional<std::size_t> axis) {
  Tensor s = sum(t, axis);
  const std::size_t count = axis ? t.dim(*axis) : t.size();
  return scale(s, 1.0 / static_cast<double>(count));
}

Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias,
                  double epsilon) {
  require_rank2("layer_norm", t);
  const std::size_t rows = t.dim(0), d = t.dim(1);
  if (d < 2) throw DimensionError("layer_norm: need at least 2 features");
  if (gain.shape() != Shape{d}) shape_error("layer_norm", t, gain);
  if (bias.shape() != Shape{d}) shape_error("layer_norm", t, bias);
  std::vector<double> xhat(rows * d), inv_std(rows), out(rows * d);
  const double* x = t.data();
  const double* gp = gain.data();
  const double* bp = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      out[r * d + j] = gp[j] * xhat[r * d + j] + bp[j];
    }
  }
  Tensor result({rows, d}, std::move(out));
  Tape* tape = common_tape({&t, &gain, &bias});
  if (tape == nullptr) return result;
  const int nt = node_of(t), ng = node_of(gain), nb = node_of(bias);
  std::vector<int> parents;
  for (int p : {nt, ng, nb}) {
    if (p >= 0) parents.push_back(p);
  }
  Tensor g_in = gain.detach();
  return tape->record(
      std::move(result), std::move(parents),
      [nt, ng, nb, g_in, rows, d, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](std::span<const double> g, Tape& tape) {
        const double* gp = g_in.data();
        if (ng >= 0) {
          auto gg = tape.grad_slot(ng);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (nb >= 0) {
          auto gb = tape.grad_slot(nb);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (nt >= 0) {
          auto gt = tape.grad_slot(nt);
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dx = 0.0, mean_dx_xhat = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[r * d + j] * gp[j];
              mean_dx += dxh;
              mean_dx_xhat += dxh * xhat[r * d + j];
            }
            mean_dx *= inv_d;
            mean_dx_xhat *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[r * d + j] * gp[j];
              gt[r * d + j] +=
                  inv_std[r] * (dxh - mean_dx - xhat[r * d + j] * mean_dx_xhat);
            }
          }
        }
      });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t total = 0;
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    require_rank2("concat_cols", p);
    if (p.dim(0) != rows) shape_error("concat_cols", parts.front(), p);
    total += p.dim(1);
    if (p.tracked()) {
      if (tape != nullptr && tape != p.tape()) {
        throw ContractError("operands recorded on different tapes");
      }
      tape = p.tape();
    }
  }
  std::vector<double> out(rows * total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t c = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.data() + r * c, c, out.data() + r * total + off);
    }
    off += c;
  }
  Tensor result({rows, total}, std::move(out));
  if (tape == nullptr) return result;
  std::vector<int> parents;
  std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> spans;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i].tracked()) {
      parents.push_back(parts[i].node());
      spans.push_back({parts[i].node(), {offsets[i], parts[i].dim(1)}});
    }
  }
  return tape->record(
      std::move(result), std::move(parents),
      [spans, rows, total](std::span<const double> g, Tape& tape) {
        for (const auto& [node, span] : spans) {
          const auto [off, c] = span;
          auto gp = tape.grad_slot(node);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < c; ++j) gp[r * c + j] += g[r * total + off + j];
          }
        }
      });
}

Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t end) {
  require_rank2("slice_cols", t);
  const std::size_t rows = t.dim(0), cols = t.dim(1);
  if (begin > end || end > cols) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " + shape_string(t.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(t.data() + r * cols + begin, w, out.data() + r * w);
  }
  Tensor result({rows, w}, std::move(out));
  if (!t.tracked()) return result;
  const int nt = t.node();
  return t.tape()->record(
      std::move(result), {nt},
      [nt, rows, cols, begin, w](std::span<const double> g, Tape& tape) {
        auto gt = tape.grad_slot(nt);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) gt[r * cols + begin + j] += g[r * w + j];
      });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_size(shape) != t.size()) {
    throw DimensionError("reshape: " + shape_string(t.shape()) + " to " +
                         shape_string(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(t.values().begin(), t.values().end()));
  if (!t.tracked()) return result;
  const int nt = t.node();
  return t.tape()->record(std::move(result), {nt},
                          [nt](std::span<const double> g, Tape& tape) {
                            auto gt = tape.grad_slot(nt);
                            for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                          });
}

}  // namespace alm
