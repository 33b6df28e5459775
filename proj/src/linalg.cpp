#include "shadowpeft/linalg.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>

namespace shadowpeft {

Tensor pinv(const Tensor& m, double rcond) {
  if (m.rank() != 2) throw DimensionError("pinv: expects a matrix, got " + shape_str(m.shape()));
  if (rcond < 0.0) throw ConfigError("pinv: rcond must be >= 0");
  m.check_finite("pinv");
  const int64_t rows = m.dim(0);
  const int64_t cols = m.dim(1);
  Eigen::MatrixXd em(rows, cols);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) em(i, j) = m.at(i * cols + j);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(em, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("pinv: SVD did not converge");
  const auto& sv = svd.singularValues();
  const double cutoff = rcond * (sv.size() > 0 ? sv(0) : 0.0);
  Eigen::VectorXd inv_sv(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    inv_sv(i) = sv(i) > cutoff && sv(i) > 0.0 ? 1.0 / sv(i) : 0.0;
  }
  Eigen::MatrixXd p = svd.matrixV() * inv_sv.asDiagonal() * svd.matrixU().transpose();

  Tensor out = Tensor::zeros({cols, rows}, m.dtype());
  for (int64_t i = 0; i < cols; ++i)
    for (int64_t j = 0; j < rows; ++j) out.at(i * rows + j) = p(i, j);
  out.apply_precision();
  out.check_finite("pinv");
  return out;
}

GradCheckResult grad_check(const std::function<Tensor(Tape&)>& f, std::vector<NamedParam> params,
                           std::vector<double> steps) {
  if (steps.empty()) throw ConfigError("grad_check: needs at least one step size");
  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  {
    for (auto& p : params) {
      p.tensor.ensure_grad();
      p.tensor.zero_grad();
    }
    Tape tape;
    Tensor loss = f(tape);
    tape.backward(loss);
    for (auto& p : params) {
      std::vector<double> g(static_cast<size_t>(p.tensor.numel()));
      for (int64_t i = 0; i < p.tensor.numel(); ++i) g[static_cast<size_t>(i)] = p.tensor.grad_at(i);
      analytic.push_back(std::move(g));
    }
  }

  auto eval = [&]() {
    Tape tape;
    Tensor loss = f(tape);
    const double v = loss.item();
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss at perturbed point");
    return v;
  };

  GradCheckResult result;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = params[pi].tensor;
    for (int64_t i = 0; i < t.numel(); ++i) {
      const double orig = t.at(i);
      const double a = analytic[pi][static_cast<size_t>(i)];
      double best_rel = -1.0;
      for (double h : steps) {
        t.at(i) = orig + h;
        const double fp = eval();
        t.at(i) = orig - h;
        const double fm = eval();
        t.at(i) = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        const double rel = std::fabs(a - numeric) / denom;
        if (best_rel < 0.0 || rel < best_rel) best_rel = rel;
        if (best_rel < 1e-7) break;  // agreement found, skip coarser steps
      }
      if (best_rel > result.max_rel_err) {
        result.max_rel_err = best_rel;
        result.worst_param = params[pi].name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(Tape&)>& f, std::vector<NamedParam> params,
                           double h) {
  return grad_check(f, std::move(params), std::vector<double>{h});
}

}  // namespace shadowpeft
