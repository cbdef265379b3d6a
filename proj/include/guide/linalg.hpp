#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "guide/errors.hpp"
#include "guide/graph.hpp"
#include "guide/rng.hpp"

namespace guide::linalg {

/// Orthonormal factor U V^T of the thin SVD P = U S V^T, the maximizer of
/// Tr(Q^T P) over matrices with orthonormal columns.
inline Eigen::MatrixXd polar_factor(const Eigen::MatrixXd& P, const std::string& context = "") {
  if (!P.allFinite()) throw NumericalError("non-finite matrix in SVD" + context);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(P, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || !(s(s.size() - 1) > 1e-13 * std::max(s(0), 1e-300)))
    throw NumericalError("rank-deficient matrix in SVD" + context);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Thin Q factor of a Householder QR.
inline Eigen::MatrixXd orthonormalize(const Eigen::MatrixXd& A) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  return qr.householderQ() * Eigen::MatrixXd::Identity(A.rows(), A.cols());
}

inline double max_abs_deviation_from_identity(const Eigen::MatrixXd& Q) {
  Eigen::MatrixXd G = Q.transpose() * Q;
  return (G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
}

struct EigenPairs {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  bool converged = true;
};

using Operator = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

/// Block subspace iteration with Rayleigh-Ritz for a symmetric operator.
/// Returns the `count` Ritz pairs ranked by `rank_key` (largest first); with the
/// default key that is the dominant eigenvalues in magnitude.
inline EigenPairs subspace_iteration(const Operator& apply, Eigen::Index n, int count,
                                     std::uint64_t seed, int max_iters = 1000, double tol = 1e-9,
                                     const std::function<double(double)>& rank_key =
                                         [](double x) { return std::abs(x); }) {
  const int block = std::min<Eigen::Index>(n, count + std::max(4, count / 2));
  Rng rng(seed);
  Eigen::MatrixXd Q = orthonormalize(gaussian_matrix(n, block, rng));
  EigenPairs out;
  out.converged = false;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::MatrixXd AQ = apply(Q);
    Eigen::MatrixXd T = Q.transpose() * AQ;
    T = 0.5 * (T + T.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    std::vector<int> order(block);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return rank_key(es.eigenvalues()(a)) > rank_key(es.eigenvalues()(b));
    });
    Eigen::MatrixXd S(block, block);
    Eigen::VectorXd theta(block);
    for (int k = 0; k < block; ++k) {
      S.col(k) = es.eigenvectors().col(order[k]);
      theta(k) = es.eigenvalues()(order[k]);
    }
    Eigen::MatrixXd X = Q * S;
    Eigen::MatrixXd AX = AQ * S;
    double scale = std::max(1e-300, theta.cwiseAbs().maxCoeff());
    double worst = 0.0;
    for (int k = 0; k < count; ++k)
      worst = std::max(worst, (AX.col(k) - theta(k) * X.col(k)).norm() / scale);
    out.values = theta.head(count);
    out.vectors = X.leftCols(count);
    if (!X.allFinite()) throw NumericalError("subspace iteration produced non-finite values");
    if (worst < tol || scale <= 1e-300) {
      out.converged = true;
      break;
    }
    Q = orthonormalize(AX);
  }
  return out;
}

/// The `count` algebraically largest eigenpairs of a symmetric dense matrix.
inline EigenPairs dense_top_eigenpairs(const Eigen::MatrixXd& A, int count) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  if (es.info() != Eigen::Success) throw NumericalError("dense eigen-solver failed");
  const Eigen::Index n = A.rows();
  EigenPairs out;
  out.values.resize(count);
  out.vectors.resize(n, count);
  for (int k = 0; k < count; ++k) {
    out.values(k) = es.eigenvalues()(n - 1 - k);
    out.vectors.col(k) = es.eigenvectors().col(n - 1 - k);
  }
  return out;
}

}  // namespace guide::linalg
