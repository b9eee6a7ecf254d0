#include "sleepfusion/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace sleepfusion::ad {

namespace {

void finite_or_throw(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

Tensor make_out(Shape shape, bool requires_grad) {
  return make_tensor(std::move(shape), requires_grad);
}

void maybe_record(const Tensor& out, std::function<void()> step) {
  if (out.requires_grad()) {
    if (Tape* tape = Tape::active()) tape->record(std::move(step));
  }
}

// Batch layout for matmul-family ops: collapse all but the last two axes.
struct MatDims {
  std::size_t batch;
  int rows, cols;
};

MatDims mat_dims(const Tensor& t, const char* op) {
  if (t.ndim() < 2) {
    throw ShapeError(std::string(op) + ": operand must have >= 2 axes, got " +
                     shape_str(t.shape()));
  }
  std::size_t batch = 1;
  for (int i = 0; i + 2 < t.ndim(); ++i) batch *= static_cast<std::size_t>(t.shape()[i]);
  return {batch, t.dim(-2), t.dim(-1)};
}

void kernel_mm(const double* __restrict a, const double* __restrict b,
               double* __restrict c, int m, int k, int n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, sizeof(double) * static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[i,j] (+)= dot(a[i,:], b[j,:])
void kernel_mm_nt(const double* __restrict a, const double* __restrict b,
                  double* __restrict c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double acc = 0.0;
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

// c[kk,j] += sum_i a[i,kk] * g[i,j]
void kernel_mm_tn_acc(const double* __restrict a, const double* __restrict g,
                      double* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    const double* grow = g + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      double* crow = c + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = make_out(a.shape(), any_grad({&a, &b}));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  finite_or_throw("add", ov);
  maybe_record(out, [an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr()] {
    on->ensure_grad();
    for (auto* n : {an.get(), bn.get()}) {
      if (!n->requires_grad) continue;
      n->ensure_grad();
      for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += on->grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = make_out(a.shape(), any_grad({&a, &b}));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  finite_or_throw("sub", ov);
  maybe_record(out, [an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr()] {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= on->grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = make_out(a.shape(), any_grad({&a, &b}));
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  finite_or_throw("mul", ov);
  maybe_record(out, [an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr()] {
    on->ensure_grad();
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < an->grad.size(); ++i)
        an->grad[i] += on->grad[i] * bn->values[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < bn->grad.size(); ++i)
        bn->grad[i] += on->grad[i] * an->values[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = make_out(x.shape(), x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * factor;
  finite_or_throw("scale", ov);
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr(), factor] {
    on->ensure_grad();
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i] * factor;
  });
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.ndim() != 1 || x.ndim() < 1 || x.dim(-1) != bias.dim(0)) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                     " does not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t d = static_cast<std::size_t>(bias.dim(0));
  Tensor out = make_out(x.shape(), any_grad({&x, &bias}));
  const auto& xv = x.values();
  const auto& bv = bias.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] + bv[i % d];
  finite_or_throw("add_bias", ov);
  maybe_record(out, [xn = x.node_ptr(), bn = bias.node_ptr(), on = out.node_ptr(), d] {
    on->ensure_grad();
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i % d] += on->grad[i];
    }
  });
  return out;
}

namespace {

enum class MatKind { NN, NT };

Tensor matmul_impl(const Tensor& a, const Tensor& b, MatKind kind, const char* op) {
  const MatDims ad = mat_dims(a, op);
  const MatDims bd = mat_dims(b, op);
  const bool b_shared = (b.ndim() == 2);
  if (!b_shared && bd.batch != ad.batch) {
    throw ShapeError(std::string(op) + ": batch mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int m = ad.rows, k = ad.cols;
  const int n = (kind == MatKind::NN) ? bd.cols : bd.rows;
  const int bk = (kind == MatKind::NN) ? bd.rows : bd.cols;
  if (bk != k) {
    throw ShapeError(std::string(op) + ": inner extents disagree: " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }

  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out = make_out(std::move(out_shape), any_grad({&a, &b}));

  const std::size_t a_stride = static_cast<std::size_t>(m) * k;
  const std::size_t b_stride = b_shared ? 0 : static_cast<std::size_t>(bd.rows) * bd.cols;
  const std::size_t o_stride = static_cast<std::size_t>(m) * n;
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* op_ = out.mutable_values().data();
  for (std::size_t bb = 0; bb < ad.batch; ++bb) {
    if (kind == MatKind::NN) {
      kernel_mm(ap + bb * a_stride, bp + bb * b_stride, op_ + bb * o_stride, m, k, n, false);
    } else {
      kernel_mm_nt(ap + bb * a_stride, bp + bb * b_stride, op_ + bb * o_stride, m, k, n, false);
    }
  }
  finite_or_throw(op, out.values());

  maybe_record(out, [an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr(), kind,
                     batch = ad.batch, a_stride, b_stride, o_stride, m, k, n] {
    on->ensure_grad();
    const double* gp = on->grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      double* dap = an->grad.data();
      const double* bp = bn->values.data();
      for (std::size_t bb = 0; bb < batch; ++bb) {
        if (kind == MatKind::NN) {
          // dA += dC * B^T
          kernel_mm_nt(gp + bb * o_stride, bp + bb * b_stride, dap + bb * a_stride, m, n, k, true);
        } else {
          // dA += dC * B
          kernel_mm(gp + bb * o_stride, bp + bb * b_stride, dap + bb * a_stride, m, n, k, true);
        }
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      double* dbp = bn->grad.data();
      const double* ap = an->values.data();
      for (std::size_t bb = 0; bb < batch; ++bb) {
        const double* ab = ap + bb * a_stride;
        const double* gb = gp + bb * o_stride;
        double* db = dbp + bb * b_stride;
        if (kind == MatKind::NN) {
          // dB += A^T * dC
          kernel_mm_tn_acc(ab, gb, db, m, k, n);
        } else {
          // dB[j,:] += sum_i dC[i,j] * A[i,:]
          for (int i = 0; i < m; ++i) {
            const double* arow = ab + static_cast<std::size_t>(i) * k;
            const double* grow = gb + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
              const double g = grow[j];
              if (g == 0.0) continue;
              double* brow = db + static_cast<std::size_t>(j) * k;
              for (int kk = 0; kk < k; ++kk) brow[kk] += g * arow[kk];
            }
          }
        }
      }
    }
  });
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  return matmul_impl(a, b, MatKind::NN, "matmul");
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  return matmul_impl(a, b, MatKind::NT, "matmul_nt");
}

Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = make_out({n, m}, x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<std::size_t>(j) * m + i] = xv[static_cast<std::size_t>(i) * n + j];
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr(), m, n] {
    on->ensure_grad();
    xn->ensure_grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        xn->grad[static_cast<std::size_t>(i) * n + j] +=
            on->grad[static_cast<std::size_t>(j) * m + i];
  });
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor out = make_out(std::move(shape), x.requires_grad());
  out.mutable_values() = x.values();
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr()] {
    on->ensure_grad();
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += on->grad[i];
  });
  return out;
}

Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t rows = 1;
  for (int d : lead) rows *= static_cast<std::size_t>(d);
  int total_last = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    Shape plead(p.shape().begin(), p.shape().end() - 1);
    if (plead != lead) {
      throw ShapeError("concat_last: leading extents differ: " +
                       shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    total_last += p.dim(-1);
    rg = rg || p.requires_grad();
  }
  Shape out_shape = lead;
  out_shape.push_back(total_last);
  Tensor out = make_out(std::move(out_shape), rg);
  auto& ov = out.mutable_values();
  std::vector<std::shared_ptr<detail::Node>> nodes;
  std::vector<int> lasts;
  for (const Tensor& p : parts) {
    nodes.push_back(p.node_ptr());
    lasts.push_back(p.dim(-1));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = r * static_cast<std::size_t>(total_last);
    for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
      const std::size_t d = static_cast<std::size_t>(lasts[pi]);
      std::memcpy(ov.data() + off, nodes[pi]->values.data() + r * d, d * sizeof(double));
      off += d;
    }
  }
  maybe_record(out, [nodes, lasts, rows, total_last, on = out.node_ptr()] {
    on->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      std::size_t off = r * static_cast<std::size_t>(total_last);
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        const std::size_t d = static_cast<std::size_t>(lasts[pi]);
        if (nodes[pi]->requires_grad) {
          nodes[pi]->ensure_grad();
          double* g = nodes[pi]->grad.data() + r * d;
          for (std::size_t j = 0; j < d; ++j) g[j] += on->grad[off + j];
        }
        off += d;
      }
    }
  });
  return out;
}

Tensor concat_tokens(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2)) {
    throw ShapeError("concat_tokens: incompatible shapes " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  const int B = a.dim(0), s1 = a.dim(1), s2 = b.dim(1), d = a.dim(2);
  Tensor out = make_out({B, s1 + s2, d}, any_grad({&a, &b}));
  auto& ov = out.mutable_values();
  const std::size_t sd1 = static_cast<std::size_t>(s1) * d;
  const std::size_t sd2 = static_cast<std::size_t>(s2) * d;
  for (int bb = 0; bb < B; ++bb) {
    std::memcpy(ov.data() + bb * (sd1 + sd2), a.values().data() + bb * sd1,
                sd1 * sizeof(double));
    std::memcpy(ov.data() + bb * (sd1 + sd2) + sd1, b.values().data() + bb * sd2,
                sd2 * sizeof(double));
  }
  maybe_record(out, [an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr(), B, sd1, sd2] {
    on->ensure_grad();
    for (int bb = 0; bb < B; ++bb) {
      const double* g = on->grad.data() + bb * (sd1 + sd2);
      if (an->requires_grad) {
        an->ensure_grad();
        double* da = an->grad.data() + bb * sd1;
        for (std::size_t i = 0; i < sd1; ++i) da[i] += g[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        double* db = bn->grad.data() + bb * sd2;
        for (std::size_t i = 0; i < sd2; ++i) db[i] += g[sd1 + i];
      }
    }
  });
  return out;
}

Tensor prepend_token(const Tensor& x, const Tensor& token) {
  if (x.ndim() != 3 || token.ndim() != 1 || token.dim(0) != x.dim(2)) {
    throw ShapeError("prepend_token: token " + shape_str(token.shape()) +
                     " does not fit " + shape_str(x.shape()));
  }
  const int B = x.dim(0), S = x.dim(1), d = x.dim(2);
  Tensor out = make_out({B, S + 1, d}, any_grad({&x, &token}));
  auto& ov = out.mutable_values();
  const std::size_t sd = static_cast<std::size_t>(S) * d;
  for (int bb = 0; bb < B; ++bb) {
    std::memcpy(ov.data() + bb * (sd + d), token.values().data(), d * sizeof(double));
    std::memcpy(ov.data() + bb * (sd + d) + d, x.values().data() + bb * sd,
                sd * sizeof(double));
  }
  maybe_record(out, [xn = x.node_ptr(), tn = token.node_ptr(), on = out.node_ptr(), B, sd,
                     d] {
    on->ensure_grad();
    for (int bb = 0; bb < B; ++bb) {
      const double* g = on->grad.data() + bb * (sd + d);
      if (tn->requires_grad) {
        tn->ensure_grad();
        for (int j = 0; j < d; ++j) tn->grad[j] += g[j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        double* dx = xn->grad.data() + bb * sd;
        for (std::size_t i = 0; i < sd; ++i) dx[i] += g[d + i];
      }
    }
  });
  return out;
}

Tensor take_token(const Tensor& x, int position) {
  if (x.ndim() != 3) throw ShapeError("take_token: expected 3-D, got " + shape_str(x.shape()));
  const int B = x.dim(0), S = x.dim(1), d = x.dim(2);
  if (position < 0 || position >= S) throw ShapeError("take_token: position out of range");
  Tensor out = make_out({B, d}, x.requires_grad());
  auto& ov = out.mutable_values();
  const std::size_t sd = static_cast<std::size_t>(S) * d;
  for (int bb = 0; bb < B; ++bb) {
    std::memcpy(ov.data() + static_cast<std::size_t>(bb) * d,
                x.values().data() + bb * sd + static_cast<std::size_t>(position) * d,
                d * sizeof(double));
  }
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr(), B, sd, d, position] {
    on->ensure_grad();
    xn->ensure_grad();
    for (int bb = 0; bb < B; ++bb) {
      double* dx = xn->grad.data() + bb * sd + static_cast<std::size_t>(position) * d;
      const double* g = on->grad.data() + static_cast<std::size_t>(bb) * d;
      for (int j = 0; j < d; ++j) dx[j] += g[j];
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_out(x.shape(), x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  finite_or_throw("relu", ov);
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr()] {
    on->ensure_grad();
    xn->ensure_grad();
    // subgradient 0 at exactly 0
    for (std::size_t i = 0; i < xn->grad.size(); ++i)
      if (xn->values[i] > 0.0) xn->grad[i] += on->grad[i];
  });
  return out;
}

namespace {

struct AxisLanes {
  std::size_t outer, lane, inner;
};

AxisLanes axis_lanes(const Tensor& x, int axis, const char* op) {
  const int nd = x.ndim();
  if (nd == 0) throw ShapeError(std::string(op) + ": scalar has no axes");
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) {
    throw ShapeError(std::string(op) + ": invalid axis for " + shape_str(x.shape()));
  }
  AxisLanes l{1, static_cast<std::size_t>(x.shape()[axis]), 1};
  for (int i = 0; i < axis; ++i) l.outer *= static_cast<std::size_t>(x.shape()[i]);
  for (int i = axis + 1; i < nd; ++i) l.inner *= static_cast<std::size_t>(x.shape()[i]);
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisLanes l = axis_lanes(x, axis, "softmax");
  Tensor out = make_out(x.shape(), x.requires_grad());
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.lane * l.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < l.lane; ++j) mx = std::max(mx, xv[base + j * l.inner]);
      double denom = 0.0;
      for (std::size_t j = 0; j < l.lane; ++j) {
        const double e = std::exp(xv[base + j * l.inner] - mx);
        ov[base + j * l.inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < l.lane; ++j) ov[base + j * l.inner] /= denom;
    }
  }
  finite_or_throw("softmax", ov);
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr(), l] {
    on->ensure_grad();
    xn->ensure_grad();
    for (std::size_t o = 0; o < l.outer; ++o) {
      for (std::size_t in = 0; in < l.inner; ++in) {
        const std::size_t base = o * l.lane * l.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < l.lane; ++j) {
          const std::size_t idx = base + j * l.inner;
          dot += on->grad[idx] * on->values[idx];
        }
        for (std::size_t j = 0; j < l.lane; ++j) {
          const std::size_t idx = base + j * l.inner;
          xn->grad[idx] += on->values[idx] * (on->grad[idx] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.ndim() < 1) throw ShapeError("layernorm: input has no last axis");
  const int d = x.dim(-1);
  if (d < 1) throw ShapeError("layernorm: last axis extent < 1");
  if (gamma.ndim() != 1 || gamma.dim(0) != d || beta.ndim() != 1 || beta.dim(0) != d) {
    throw ShapeError("layernorm: gamma/beta must be [" + std::to_string(d) + "]");
  }
  if (eps <= 0.0) throw ConfigError("layernorm: eps must be positive");
  const std::size_t rows = x.size() / static_cast<std::size_t>(d);
  Tensor out = make_out(x.shape(), any_grad({&x, &gamma, &beta}));
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.values();
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  auto& ov = out.mutable_values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * d;
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += xr[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - m) * (xr[j] - m);
    var /= d;
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    double* hr = xhat->data() + r * d;
    double* orow = ov.data() + r * d;
    for (int j = 0; j < d; ++j) {
      hr[j] = (xr[j] - m) * inv;
      orow[j] = gv[j] * hr[j] + bv[j];
    }
  }
  finite_or_throw("layernorm", ov);
  maybe_record(out, [xn = x.node_ptr(), gn = gamma.node_ptr(), bn = beta.node_ptr(),
                     on = out.node_ptr(), xhat, inv_std, rows, d] {
    on->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = on->grad.data() + r * d;
      const double* h = xhat->data() + r * d;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < d; ++j) gn->grad[j] += g[j] * h[j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < d; ++j) bn->grad[j] += g[j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
          const double dyj = g[j] * gn->values[j];
          m1 += dyj;
          m2 += dyj * h[j];
        }
        m1 /= d;
        m2 /= d;
        double* dx = xn->grad.data() + r * d;
        const double inv = (*inv_std)[r];
        for (int j = 0; j < d; ++j) {
          const double dyj = g[j] * gn->values[j];
          dx[j] += inv * (dyj - m1 - h[j] * m2);
        }
      }
    }
  });
  return out;
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0,1)");
  if (!training || p == 0.0) return x;  // identity, consumes no randomness
  Tensor out = make_out(x.shape(), x.requires_grad());
  auto mask = std::make_shared<std::vector<double>>(x.size());
  const double keep_scale = 1.0 / (1.0 - p);
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const double m = (rng.uniform() >= p) ? keep_scale : 0.0;
    (*mask)[i] = m;
    ov[i] = xv[i] * m;
  }
  finite_or_throw("dropout", ov);
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr(), mask] {
    on->ensure_grad();
    xn->ensure_grad();
    for (std::size_t i = 0; i < xn->grad.size(); ++i)
      xn->grad[i] += on->grad[i] * (*mask)[i];
  });
  return out;
}

Tensor relative_position_bias(const Tensor& q, const Tensor& table, int keys, int radius) {
  if (q.ndim() != 3) {
    throw ShapeError("relative_position_bias: queries must be [B,S,d_k], got " +
                     shape_str(q.shape()));
  }
  const int B = q.dim(0), S = q.dim(1), dk = q.dim(2);
  if (table.ndim() != 2 || table.dim(0) != 2 * radius + 1 || table.dim(1) != dk) {
    throw ShapeError("relative_position_bias: table " + shape_str(table.shape()) +
                     " does not match radius " + std::to_string(radius) + ", d_k " +
                     std::to_string(dk));
  }
  if (S > radius + 1 || keys > radius + 1) {
    throw ShapeError("relative_position_bias: sequence length exceeds table range (S=" +
                     std::to_string(std::max(S, keys)) + ", R=" + std::to_string(radius) + ")");
  }
  Tensor out = make_out({B, S, keys}, any_grad({&q, &table}));
  const auto& qv = q.values();
  const auto& tv = table.values();
  auto& ov = out.mutable_values();
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < S; ++i) {
      const double* qr = qv.data() + (static_cast<std::size_t>(b) * S + i) * dk;
      double* orow = ov.data() + (static_cast<std::size_t>(b) * S + i) * keys;
      for (int j = 0; j < keys; ++j) {
        const int off = std::clamp(j - i, -radius, radius) + radius;
        const double* tr = tv.data() + static_cast<std::size_t>(off) * dk;
        double acc = 0.0;
        for (int c = 0; c < dk; ++c) acc += qr[c] * tr[c];
        orow[j] = acc;
      }
    }
  }
  finite_or_throw("relative_position_bias", ov);
  maybe_record(out, [qn = q.node_ptr(), tn = table.node_ptr(), on = out.node_ptr(), B, S,
                     keys, dk, radius] {
    on->ensure_grad();
    for (int b = 0; b < B; ++b) {
      for (int i = 0; i < S; ++i) {
        const double* g = on->grad.data() + (static_cast<std::size_t>(b) * S + i) * keys;
        const double* qr = qn->values.data() + (static_cast<std::size_t>(b) * S + i) * dk;
        for (int j = 0; j < keys; ++j) {
          const int off = std::clamp(j - i, -radius, radius) + radius;
          const double gij = g[j];
          if (gij == 0.0) continue;
          if (qn->requires_grad) {
            qn->ensure_grad();
            double* dq = qn->grad.data() + (static_cast<std::size_t>(b) * S + i) * dk;
            const double* tr = tn->values.data() + static_cast<std::size_t>(off) * dk;
            for (int c = 0; c < dk; ++c) dq[c] += gij * tr[c];
          }
          if (tn->requires_grad) {
            tn->ensure_grad();
            double* dt = tn->grad.data() + static_cast<std::size_t>(off) * dk;
            for (int c = 0; c < dk; ++c) dt[c] += gij * qr[c];
          }
        }
      }
    }
  });
  return out;
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.ndim() != 2) {
    throw ShapeError("l2_normalize_rows: expected 2-D, got " + shape_str(x.shape()));
  }
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = make_out(x.shape(), x.requires_grad());
  auto norms = std::make_shared<std::vector<double>>(n);
  const auto& xv = x.values();
  auto& ov = out.mutable_values();
  for (int r = 0; r < n; ++r) {
    const double* xr = xv.data() + static_cast<std::size_t>(r) * d;
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += xr[j] * xr[j];
    const double c = std::max(std::sqrt(s), 1e-12);
    (*norms)[r] = c;
    double* orow = ov.data() + static_cast<std::size_t>(r) * d;
    for (int j = 0; j < d; ++j) orow[j] = xr[j] / c;
  }
  finite_or_throw("l2_normalize_rows", ov);
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr(), norms, n, d] {
    on->ensure_grad();
    xn->ensure_grad();
    for (int r = 0; r < n; ++r) {
      const double* g = on->grad.data() + static_cast<std::size_t>(r) * d;
      const double* y = on->values.data() + static_cast<std::size_t>(r) * d;
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += g[j] * y[j];
      double* dx = xn->grad.data() + static_cast<std::size_t>(r) * d;
      const double c = (*norms)[r];
      for (int j = 0; j < d; ++j) dx[j] += (g[j] - y[j] * dot) / c;
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = make_out({1}, x.requires_grad());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.mutable_values()[0] = acc;
  finite_or_throw("sum", out.values());
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr()] {
    on->ensure_grad();
    xn->ensure_grad();
    const double g = on->grad[0];
    for (auto& gi : xn->grad) gi += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor out = make_out({1}, x.requires_grad());
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.mutable_values()[0] = acc * inv;
  finite_or_throw("mean", out.values());
  maybe_record(out, [xn = x.node_ptr(), on = out.node_ptr(), inv] {
    on->ensure_grad();
    xn->ensure_grad();
    const double g = on->grad[0] * inv;
    for (auto& gi : xn->grad) gi += g;
  });
  return out;
}

namespace {

void check_logits(const Tensor& logits, const char* op) {
  if (logits.ndim() != 2) {
    throw ShapeError(std::string(op) + ": logits must be [n,C], got " +
                     shape_str(logits.shape()));
  }
  if (logits.dim(1) < 2) throw ConfigError(std::string(op) + ": needs at least 2 classes");
}

// log-sum-exp per row with max subtraction; also writes the row max.
double row_lse(const double* row, int c, double* mx_out) {
  double mx = row[0];
  for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
  double denom = 0.0;
  for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
  *mx_out = mx;
  return mx + std::log(denom);
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_logits(logits, "cross_entropy");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " logit rows");
  }
  for (int y : labels) {
    if (y < 0 || y >= c) {
      throw DataError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                      std::to_string(c) + ")");
    }
  }
  Tensor out = make_out({1}, logits.requires_grad());
  const auto& lv = logits.values();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx;
    const double lse = row_lse(lv.data() + static_cast<std::size_t>(i) * c, c, &mx);
    acc += lse - lv[static_cast<std::size_t>(i) * c + labels[i]];
  }
  out.mutable_values()[0] = acc / n;
  finite_or_throw("cross_entropy", out.values());
  maybe_record(out, [ln = logits.node_ptr(), on = out.node_ptr(), labels, n, c] {
    on->ensure_grad();
    ln->ensure_grad();
    const double g = on->grad[0] / n;
    for (int i = 0; i < n; ++i) {
      const double* row = ln->values.data() + static_cast<std::size_t>(i) * c;
      double mx;
      const double lse = row_lse(row, c, &mx);
      double* dl = ln->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - lse);
        dl[j] += g * (p - (j == labels[i] ? 1.0 : 0.0));
      }
    }
  });
  return out;
}

Tensor cross_entropy(const Tensor& logits, const Tensor& target_rows) {
  check_logits(logits, "cross_entropy");
  check_same_shape("cross_entropy", logits, target_rows);
  const int n = logits.dim(0), c = logits.dim(1);
  Tensor out = make_out({1}, logits.requires_grad());
  const auto& lv = logits.values();
  const auto& tv = target_rows.values();
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx;
    const double lse = row_lse(lv.data() + static_cast<std::size_t>(i) * c, c, &mx);
    for (int j = 0; j < c; ++j) {
      const std::size_t idx = static_cast<std::size_t>(i) * c + j;
      acc += tv[idx] * (lse - lv[idx]);
    }
  }
  out.mutable_values()[0] = acc / n;
  finite_or_throw("cross_entropy", out.values());
  maybe_record(out, [ln = logits.node_ptr(), tn = target_rows.node_ptr(),
                     on = out.node_ptr(), n, c] {
    on->ensure_grad();
    ln->ensure_grad();
    const double g = on->grad[0] / n;
    for (int i = 0; i < n; ++i) {
      const double* row = ln->values.data() + static_cast<std::size_t>(i) * c;
      const double* trow = tn->values.data() + static_cast<std::size_t>(i) * c;
      double mx;
      const double lse = row_lse(row, c, &mx);
      double tsum = 0.0;
      for (int j = 0; j < c; ++j) tsum += trow[j];
      double* dl = ln->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - lse);
        dl[j] += g * (p * tsum - trow[j]);
      }
    }
  });
  return out;
}

}  // namespace sleepfusion::ad
