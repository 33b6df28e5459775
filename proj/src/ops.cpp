#include "shadowpeft/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace shadowpeft {
namespace ops {
namespace {

DType promote(const Tensor& a, const Tensor& b) {
  return (a.dtype() == DType::kF32 && b.dtype() == DType::kF32) ? DType::kF32 : DType::kF64;
}

bool wants_grad(Tape* tape, const Tensor& a) { return tape != nullptr && a.requires_grad(); }
bool wants_grad(Tape* tape, const Tensor& a, const Tensor& b) {
  return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

Tensor finish(const char* op, Tensor out) {
  out.apply_precision();
  out.check_finite(op);
  return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) { return add_scaled(tape, a, b, 1.0); }

Tensor sub(Tape* tape, const Tensor& a, const Tensor& b) { return add_scaled(tape, a, b, -1.0); }

Tensor add_scaled(Tape* tape, const Tensor& a, const Tensor& b, double s) {
  require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape(), promote(a, b));
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + s * b.at(i);
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, s, n]() mutable {
      if (!oc.has_grad()) return;
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (int64_t i = 0; i < n; ++i) ac.grad()[i] += oc.grad()[i];
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (int64_t i = 0; i < n; ++i) bc.grad()[i] += s * oc.grad()[i];
      }
    });
  }
  return finish("add", std::move(out));
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape(), promote(a, b));
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      if (ac.requires_grad()) {
        ac.ensure_grad();
        for (int64_t i = 0; i < n; ++i) ac.grad()[i] += oc.grad()[i] * bc.at(i);
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        for (int64_t i = 0; i < n; ++i) bc.grad()[i] += oc.grad()[i] * ac.at(i);
      }
    });
  }
  return finish("mul", std::move(out));
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.at(i) = s * a.at(i);
  if (wants_grad(tape, a)) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    tape->record([ac, oc, s, n]() mutable {
      if (!oc.has_grad()) return;
      ac.ensure_grad();
      for (int64_t i = 0; i < n; ++i) ac.grad()[i] += s * oc.grad()[i];
    });
  }
  return finish("scale", std::move(out));
}

Tensor silu(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double v = x.at(i);
    out.at(i) = v / (1.0 + std::exp(-v));
  }
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double v = xc.at(i);
        const double sig = 1.0 / (1.0 + std::exp(-v));
        xc.grad()[i] += oc.grad()[i] * sig * (1.0 + v * (1.0 - sig));
      }
    });
  }
  return finish("silu", std::move(out));
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.at(i) = 1.0 / (1.0 + std::exp(-x.at(i)));
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        const double y = oc.at(i);
        xc.grad()[i] += oc.grad()[i] * y * (1.0 - y);
      }
    });
  }
  return finish("sigmoid", std::move(out));
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2) {
    throw DimensionError("matmul: need a rank>=2 and b rank 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const int64_t k = a.dim(a.rank() - 1);
  if (k != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const int64_t rows = a.numel() / k;
  const int64_t n = b.dim(1);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape, promote(a, b));

  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* arow = ap + r * k;
    double* orow = op + r * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = bp + kk * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, rows, k, n]() mutable {
      if (!oc.has_grad()) return;
      const double* g = oc.grad();
      if (ac.requires_grad()) {
        ac.ensure_grad();
        double* ga = ac.grad();
        const double* bp2 = bc.data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* grow = g + r * n;
          double* garow = ga + r * k;
          for (int64_t kk = 0; kk < k; ++kk) {
            const double* brow = bp2 + kk * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            garow[kk] += acc;
          }
        }
      }
      if (bc.requires_grad()) {
        bc.ensure_grad();
        double* gb = bc.grad();
        const double* ap2 = ac.data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* arow = ap2 + r * k;
          const double* grow = g + r * n;
          for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* gbrow = gb + kk * n;
            for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return finish("matmul", std::move(out));
}

Tensor bmm(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 3) {
    throw DimensionError("bmm: rank mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  for (int64_t i = 0; i + 2 < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw DimensionError("bmm: batch dims disagree " + shape_str(a.shape()) + " vs " +
                           shape_str(b.shape()));
    }
  }
  const int64_t m = a.dim(a.rank() - 2);
  const int64_t k = a.dim(a.rank() - 1);
  if (k != b.dim(b.rank() - 2)) {
    throw DimensionError("bmm: inner dimensions disagree " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const int64_t n = b.dim(b.rank() - 1);
  const int64_t batch = a.numel() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.back() = m;
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape, promote(a, b));

  for (int64_t bb = 0; bb < batch; ++bb) {
    const double* ap = a.data() + bb * m * k;
    const double* bp = b.data() + bb * k * n;
    double* op = out.data() + bb * m * n;
    for (int64_t r = 0; r < m; ++r) {
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = ap[r * k + kk];
        if (av == 0.0) continue;
        const double* brow = bp + kk * n;
        double* orow = op + r * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (wants_grad(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    tape->record([ac, bc, oc, batch, m, k, n]() mutable {
      if (!oc.has_grad()) return;
      if (ac.requires_grad()) ac.ensure_grad();
      if (bc.requires_grad()) bc.ensure_grad();
      for (int64_t bb = 0; bb < batch; ++bb) {
        const double* g = oc.grad() + bb * m * n;
        const double* ap = ac.data() + bb * m * k;
        const double* bp = bc.data() + bb * k * n;
        if (ac.requires_grad()) {
          double* ga = ac.grad() + bb * m * k;
          for (int64_t r = 0; r < m; ++r) {
            for (int64_t kk = 0; kk < k; ++kk) {
              double acc = 0.0;
              const double* brow = bp + kk * n;
              const double* grow = g + r * n;
              for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
              ga[r * k + kk] += acc;
            }
          }
        }
        if (bc.requires_grad()) {
          double* gb = bc.grad() + bb * k * n;
          for (int64_t r = 0; r < m; ++r) {
            const double* grow = g + r * n;
            for (int64_t kk = 0; kk < k; ++kk) {
              const double av = ap[r * k + kk];
              if (av == 0.0) continue;
              double* gbrow = gb + kk * n;
              for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
            }
          }
        }
      }
    });
  }
  return finish("bmm", std::move(out));
}

Tensor transpose_last2(Tape* tape, const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank < 2");
  const int64_t m = x.dim(x.rank() - 2);
  const int64_t n = x.dim(x.rank() - 1);
  const int64_t batch = x.numel() / (m * n);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  for (int64_t bb = 0; bb < batch; ++bb) {
    const double* xp = x.data() + bb * m * n;
    double* op = out.data() + bb * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) op[j * m + i] = xp[i * n + j];
  }
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, batch, m, n]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t bb = 0; bb < batch; ++bb) {
        const double* g = oc.grad() + bb * m * n;
        double* gx = xc.grad() + bb * m * n;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
      }
    });
  }
  return finish("transpose_last2", std::move(out));
}

Tensor transpose_12(Tape* tape, const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("transpose_12: expects rank 4");
  const int64_t d0 = x.dim(0), d1 = x.dim(1), d2 = x.dim(2), d3 = x.dim(3);
  Tensor out = Tensor::zeros({d0, d2, d1, d3}, x.dtype());
  for (int64_t a = 0; a < d0; ++a)
    for (int64_t b = 0; b < d1; ++b)
      for (int64_t c = 0; c < d2; ++c) {
        const double* src = x.data() + ((a * d1 + b) * d2 + c) * d3;
        double* dst = out.data() + ((a * d2 + c) * d1 + b) * d3;
        std::memcpy(dst, src, static_cast<size_t>(d3) * sizeof(double));
      }
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, d0, d1, d2, d3]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t a = 0; a < d0; ++a)
        for (int64_t b = 0; b < d1; ++b)
          for (int64_t c = 0; c < d2; ++c) {
            const double* g = oc.grad() + ((a * d2 + c) * d1 + b) * d3;
            double* gx = xc.grad() + ((a * d1 + b) * d2 + c) * d3;
            for (int64_t j = 0; j < d3; ++j) gx[j] += g[j];
          }
    });
  }
  return finish("transpose_12", std::move(out));
}

Tensor reshape(Tape* tape, const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(new_shape));
  }
  Tensor out = Tensor::zeros(new_shape, x.dtype());
  std::memcpy(out.data(), x.data(), static_cast<size_t>(x.numel()) * sizeof(double));
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    const int64_t n = x.numel();
    tape->record([xc, oc, n]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t i = 0; i < n; ++i) xc.grad()[i] += oc.grad()[i];
    });
  }
  return finish("reshape", std::move(out));
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank 0 input");
  const int64_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine params of size " + std::to_string(gamma.numel()) +
                         "/" + std::to_string(beta.numel()) + " do not match last axis " +
                         std::to_string(d));
  }
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  std::vector<double> inv_std(static_cast<size_t>(rows));
  std::vector<double> means(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    means[static_cast<size_t>(r)] = mean;
    inv_std[static_cast<size_t>(r)] = inv;
    double* orow = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = gamma.at(j) * ((row[j] - mean) * inv) + beta.at(j);
    }
  }
  if (tape != nullptr &&
      (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    tape->record([xc, gc, bc, oc, rows, d, means, inv_std]() mutable {
      if (!oc.has_grad()) return;
      if (xc.requires_grad()) xc.ensure_grad();
      if (gc.requires_grad()) gc.ensure_grad();
      if (bc.requires_grad()) bc.ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* row = xc.data() + r * d;
        const double* g = oc.grad() + r * d;
        const double mean = means[static_cast<size_t>(r)];
        const double inv = inv_std[static_cast<size_t>(r)];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double xhat = (row[j] - mean) * inv;
          const double dxhat = g[j] * gc.at(j);
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          if (gc.requires_grad()) gc.grad()[j] += g[j] * xhat;
          if (bc.requires_grad()) bc.grad()[j] += g[j];
        }
        if (xc.requires_grad()) {
          const double nd = static_cast<double>(d);
          double* gx = xc.grad() + r * d;
          for (int64_t j = 0; j < d; ++j) {
            const double xhat = (row[j] - mean) * inv;
            const double dxhat = g[j] * gc.at(j);
            gx[j] += inv * (dxhat - sum_dxhat / nd - xhat * sum_dxhat_xhat / nd);
          }
        }
      }
    });
  }
  return finish("layer_norm", std::move(out));
}

Tensor softmax_rows(Tape* tape, const Tensor& x) {
  if (x.rank() < 1) throw DimensionError("softmax_rows: rank 0 input");
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * d;
    double* orow = out.data() + r * d;
    double mx = row[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      orow[j] = std::exp(row[j] - mx);
      denom += orow[j];
    }
    for (int64_t j = 0; j < d; ++j) orow[j] /= denom;
  }
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, rows, d]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const double* y = oc.data() + r * d;
        const double* g = oc.grad() + r * d;
        double dot = 0.0;
        for (int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
        double* gx = xc.grad() + r * d;
        for (int64_t j = 0; j < d; ++j) gx[j] += y[j] * (g[j] - dot);
      }
    });
  }
  return finish("softmax_rows", std::move(out));
}

Tensor causal_softmax(Tape* tape, const Tensor& x) {
  if (x.rank() < 2 || x.dim(x.rank() - 1) != x.dim(x.rank() - 2)) {
    throw DimensionError("causal_softmax: last two axes must be square, got " +
                         shape_str(x.shape()));
  }
  const int64_t t = x.dim(x.rank() - 1);
  const int64_t batch = x.numel() / (t * t);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  for (int64_t bb = 0; bb < batch; ++bb) {
    const double* xp = x.data() + bb * t * t;
    double* op = out.data() + bb * t * t;
    for (int64_t i = 0; i < t; ++i) {
      const double* row = xp + i * t;
      double* orow = op + i * t;
      double mx = row[0];
      for (int64_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
      double denom = 0.0;
      for (int64_t j = 0; j <= i; ++j) {
        orow[j] = std::exp(row[j] - mx);
        denom += orow[j];
      }
      for (int64_t j = 0; j <= i; ++j) orow[j] /= denom;
      // columns j > i stay exactly zero
    }
  }
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, batch, t]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t bb = 0; bb < batch; ++bb) {
        const double* y = oc.data() + bb * t * t;
        const double* g = oc.grad() + bb * t * t;
        double* gx = xc.grad() + bb * t * t;
        for (int64_t i = 0; i < t; ++i) {
          double dot = 0.0;
          for (int64_t j = 0; j <= i; ++j) dot += g[i * t + j] * y[i * t + j];
          for (int64_t j = 0; j <= i; ++j) {
            gx[i * t + j] += y[i * t + j] * (g[i * t + j] - dot);
          }
        }
      }
    });
  }
  return finish("causal_softmax", std::move(out));
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int32_t>& targets,
                     int32_t ignore_index) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy: logits must be [N,V], got " + shape_str(logits.shape()));
  }
  const int64_t n = logits.dim(0);
  const int64_t v = logits.dim(1);
  if (static_cast<int64_t>(targets.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets for N=" + std::to_string(n));
  }
  int64_t valid = 0;
  double total = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const int32_t t = targets[static_cast<size_t>(r)];
    if (t == ignore_index) continue;
    if (t < 0 || t >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0," +
                       std::to_string(v) + ") at row " + std::to_string(r));
    }
    const double* row = logits.data() + r * v;
    double mx = row[0];
    for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
    total += (std::log(denom) + mx) - row[t];
    ++valid;
  }
  if (valid == 0) throw NumericalError("cross_entropy: empty loss, all targets ignored");
  Tensor out = Tensor::scalar(total / static_cast<double>(valid), logits.dtype());
  if (wants_grad(tape, logits)) {
    out.set_requires_grad(true);
    Tensor lc = logits, oc = out;
    std::vector<int32_t> tc = targets;
    const double inv_valid = 1.0 / static_cast<double>(valid);
    tape->record([lc, oc, tc, ignore_index, n, v, inv_valid]() mutable {
      if (!oc.has_grad()) return;
      lc.ensure_grad();
      const double go = oc.grad()[0] * inv_valid;
      for (int64_t r = 0; r < n; ++r) {
        const int32_t t = tc[static_cast<size_t>(r)];
        if (t == ignore_index) continue;
        const double* row = lc.data() + r * v;
        double* grow = lc.grad() + r * v;
        double mx = row[0];
        for (int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
        for (int64_t j = 0; j < v; ++j) {
          const double p = std::exp(row[j] - mx) / denom;
          grow[j] += go * (p - (j == t ? 1.0 : 0.0));
        }
      }
    });
  }
  return finish("cross_entropy", std::move(out));
}

Tensor dropout(Tape* tape, const Tensor& x, double p, Mode mode, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must lie in [0,1)");
  if (mode == Mode::kEval || p == 0.0) return x;
  const int64_t n = x.numel();
  const double keep = 1.0 - p;
  std::bernoulli_distribution bern(keep);
  std::vector<uint8_t> mask(static_cast<size_t>(n));
  for (auto& m : mask) m = bern(rng) ? 1 : 0;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const double inv_keep = 1.0 / keep;
  for (int64_t i = 0; i < n; ++i) out.at(i) = mask[static_cast<size_t>(i)] ? x.at(i) * inv_keep : 0.0;
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    tape->record([xc, oc, mask = std::move(mask), inv_keep, n]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t i = 0; i < n; ++i) {
        if (mask[static_cast<size_t>(i)]) xc.grad()[i] += oc.grad()[i] * inv_keep;
      }
    });
  }
  return finish("dropout", std::move(out));
}

Tensor embedding(Tape* tape, const Tensor& table, const IntMatrix& ids) {
  if (table.rank() != 2) throw DimensionError("embedding: table must be [V,d]");
  const int64_t v = table.dim(0);
  const int64_t d = table.dim(1);
  Tensor out = Tensor::zeros({ids.rows, ids.cols, d}, table.dtype());
  for (int64_t r = 0; r < ids.rows; ++r) {
    for (int64_t c = 0; c < ids.cols; ++c) {
      const int32_t id = ids.at(r, c);
      if (id < 0 || id >= v) {
        throw IndexError("embedding: token " + std::to_string(id) + " outside vocab of " +
                         std::to_string(v));
      }
      std::memcpy(out.data() + (r * ids.cols + c) * d, table.data() + id * d,
                  static_cast<size_t>(d) * sizeof(double));
    }
  }
  if (wants_grad(tape, table)) {
    out.set_requires_grad(true);
    Tensor tc = table, oc = out;
    IntMatrix idc = ids;
    tape->record([tc, oc, idc, d]() mutable {
      if (!oc.has_grad()) return;
      tc.ensure_grad();
      for (int64_t r = 0; r < idc.rows; ++r) {
        for (int64_t c = 0; c < idc.cols; ++c) {
          const double* g = oc.grad() + (r * idc.cols + c) * d;
          double* gt = tc.grad() + idc.at(r, c) * d;
          for (int64_t j = 0; j < d; ++j) gt[j] += g[j];
        }
      }
    });
  }
  return finish("embedding", std::move(out));
}

Tensor select_rows(Tape* tape, const Tensor& x, const std::vector<int64_t>& row_index) {
  if (x.rank() != 3) throw DimensionError("select_rows: expects [B,T,d]");
  const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (static_cast<int64_t>(row_index.size()) != b) {
    throw DimensionError("select_rows: need one index per batch row");
  }
  Tensor out = Tensor::zeros({b, d}, x.dtype());
  for (int64_t r = 0; r < b; ++r) {
    const int64_t idx = row_index[static_cast<size_t>(r)];
    if (idx < 0 || idx >= t) {
      throw IndexError("select_rows: index " + std::to_string(idx) + " outside [0," +
                       std::to_string(t) + ")");
    }
    std::memcpy(out.data() + r * d, x.data() + (r * t + idx) * d,
                static_cast<size_t>(d) * sizeof(double));
  }
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    std::vector<int64_t> idxc = row_index;
    tape->record([xc, oc, idxc, b, t, d]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t r = 0; r < b; ++r) {
        const double* g = oc.grad() + r * d;
        double* gx = xc.grad() + (r * t + idxc[static_cast<size_t>(r)]) * d;
        for (int64_t j = 0; j < d; ++j) gx[j] += g[j];
      }
    });
  }
  return finish("select_rows", std::move(out));
}

Tensor mean_rows_masked(Tape* tape, const Tensor& x, const std::vector<uint8_t>& mask) {
  if (x.rank() != 3) throw DimensionError("mean_rows_masked: expects [B,T,d]");
  const int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2);
  if (static_cast<int64_t>(mask.size()) != b * t) {
    throw DimensionError("mean_rows_masked: mask size mismatch");
  }
  Tensor out = Tensor::zeros({b, d}, x.dtype());
  std::vector<double> inv_count(static_cast<size_t>(b));
  for (int64_t r = 0; r < b; ++r) {
    int64_t count = 0;
    for (int64_t i = 0; i < t; ++i) count += mask[static_cast<size_t>(r * t + i)] ? 1 : 0;
    if (count == 0) throw NumericalError("mean_rows_masked: fully padded row " + std::to_string(r));
    inv_count[static_cast<size_t>(r)] = 1.0 / static_cast<double>(count);
    for (int64_t i = 0; i < t; ++i) {
      if (!mask[static_cast<size_t>(r * t + i)]) continue;
      const double* row = x.data() + (r * t + i) * d;
      double* orow = out.data() + r * d;
      for (int64_t j = 0; j < d; ++j) orow[j] += row[j];
    }
    double* orow = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j) orow[j] *= inv_count[static_cast<size_t>(r)];
  }
  if (wants_grad(tape, x)) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    std::vector<uint8_t> mc = mask;
    tape->record([xc, oc, mc, inv_count, b, t, d]() mutable {
      if (!oc.has_grad()) return;
      xc.ensure_grad();
      for (int64_t r = 0; r < b; ++r) {
        const double* g = oc.grad() + r * d;
        for (int64_t i = 0; i < t; ++i) {
          if (!mc[static_cast<size_t>(r * t + i)]) continue;
          double* gx = xc.grad() + (r * t + i) * d;
          for (int64_t j = 0; j < d; ++j) gx[j] += g[j] * inv_count[static_cast<size_t>(r)];
        }
      }
    });
  }
  return finish("mean_rows_masked", std::move(out));
}

}  // namespace ops

uint64_t combine_checksum(uint64_t acc, uint64_t value) {
  for (int i = 0; i < 8; ++i) {
    acc ^= (value >> (8 * i)) & 0xffu;
    acc *= 0x100000001b3ull;
  }
  return acc;
}

uint64_t tensor_checksum(const Tensor& t) {
  uint64_t acc = 0xcbf29ce484222325ull;
  const int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    uint64_t bits;
    const double v = t.at(i);
    std::memcpy(&bits, &v, sizeof(bits));
    acc = combine_checksum(acc, bits);
  }
  return acc;
}

}  // namespace shadowpeft
