#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ppk/error.hpp"

namespace ppk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexVector = std::vector<Eigen::Index>;

namespace linalg {

/// Base nugget added to every kernel Gram at construction time.
inline constexpr double kBaseJitter = 1e-8;
/// Largest extra diagonal loading tried before a factorization gives up.
inline constexpr double kMaxJitter = 1e-4;

// Counts floating point operations spent in Cholesky factorizations issued
// through this header. Per thread, so concurrent tuning does not pollute a
// fit that is being measured on another thread.
class FlopCounter {
 public:
  static double &value() {
    thread_local double flops = 0.0;
    return flops;
  }
  static void reset() { value() = 0.0; }
  static double read() { return value(); }
  static void add_cholesky(Eigen::Index n) {
    const double d = static_cast<double>(n);
    value() += d * d * d / 3.0;
  }
};

inline bool all_finite(const Eigen::Ref<const Matrix> &a) {
  return a.allFinite();
}

/// Cholesky factor of a symmetric matrix with the escalating jitter policy:
/// first the matrix as given, then extra diagonal loading 1e-7, 1e-6, ...,
/// up to kMaxJitter. Throws NotPositiveDefinite when all attempts fail.
class Cholesky {
 public:
  Cholesky() = default;

  explicit Cholesky(const Eigen::Ref<const Matrix> &a,
                    const std::string &what = "matrix") {
    compute(a, what);
  }

  void compute(const Eigen::Ref<const Matrix> &a,
               const std::string &what = "matrix") {
    require(a.rows() == a.cols(), ErrorCode::DimensionMismatch,
            what + " is not square");
    if (!all_finite(a)) {
      fail(ErrorCode::NotPositiveDefinite, what + " has non-finite entries");
    }
    if (a.rows() == 0) {
      llt_ = Eigen::LLT<Matrix>();
      size_ = 0;
      extra_jitter_ = 0.0;
      return;
    }
    size_ = a.rows();
    double extra = 0.0;
    while (true) {
      FlopCounter::add_cholesky(a.rows());
      if (extra == 0.0) {
        llt_.compute(a);
      } else {
        Matrix loaded = a;
        loaded.diagonal().array() += extra;
        llt_.compute(loaded);
      }
      if (llt_.info() == Eigen::Success &&
          llt_.matrixLLT().diagonal().allFinite() &&
          (llt_.matrixLLT().diagonal().array() > 0.0).all()) {
        extra_jitter_ = extra;
        return;
      }
      extra = (extra == 0.0) ? kBaseJitter * 10.0 : extra * 10.0;
      if (extra > kMaxJitter * (1.0 + 1e-12)) {
        fail(ErrorCode::NotPositiveDefinite,
             what + " not positive definite after jitter escalation");
      }
    }
  }

  Eigen::Index size() const { return size_; }
  double extra_jitter() const { return extra_jitter_; }

  auto matrix_l() const { return llt_.matrixL(); }

  template <typename Rhs>
  Matrix solve(const Eigen::MatrixBase<Rhs> &b) const {
    if (size_ == 0) return Matrix(0, b.cols());
    return llt_.solve(b);
  }

  Vector solve_vector(const Eigen::Ref<const Vector> &b) const {
    if (size_ == 0) return Vector(0);
    return llt_.solve(b);
  }

  /// L^{-1} b.
  template <typename Rhs>
  Matrix solve_lower(const Eigen::MatrixBase<Rhs> &b) const {
    if (size_ == 0) return Matrix(0, b.cols());
    return llt_.matrixL().solve(b);
  }

  /// L^{-T} b.
  template <typename Rhs>
  Matrix solve_upper(const Eigen::MatrixBase<Rhs> &b) const {
    if (size_ == 0) return Matrix(0, b.cols());
    return llt_.matrixU().solve(b);
  }

  double log_determinant() const {
    if (size_ == 0) return 0.0;
    return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  }

  Matrix inverse() const {
    return solve(Matrix::Identity(size_, size_));
  }

 private:
  Eigen::LLT<Matrix> llt_;
  Eigen::Index size_ = 0;
  double extra_jitter_ = 0.0;
};

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
inline Matrix spd_inverse(const Eigen::Ref<const Matrix> &a,
                          const std::string &what = "matrix") {
  Matrix inv = Cholesky(a, what).inverse();
  return 0.5 * (inv + inv.transpose());
}

inline Matrix symmetrize(const Eigen::Ref<const Matrix> &a) {
  return 0.5 * (a + a.transpose());
}

/*
 * Cholesky factorization of a symmetric block-tridiagonal matrix
 *
 *   | D_0   E_0^T               |
 *   | E_0   D_1    E_1^T        |
 *   |       E_1    D_2   ...    |
 *
 * stored by its diagonal blocks D_i and sub-diagonal blocks E_i. The factor
 * is lower block-bidiagonal with L_ii = chol(D_i - W_{i-1} W_{i-1}^T) and
 * W_i = E_i L_ii^{-T}. Cost is O(n_blocks * b^3) instead of O((n_blocks b)^3).
 */
class BlockTridiagonalCholesky {
 public:
  BlockTridiagonalCholesky() = default;

  BlockTridiagonalCholesky(std::vector<Matrix> diag, std::vector<Matrix> sub) {
    compute(std::move(diag), std::move(sub));
  }

  void compute(std::vector<Matrix> diag, std::vector<Matrix> sub) {
    require(diag.empty() || sub.size() + 1 == diag.size(),
            ErrorCode::DimensionMismatch,
            "block tridiagonal: need one fewer sub-diagonal block");
    diag_factors_.clear();
    sub_factors_.clear();
    offsets_.assign(1, 0);
    for (std::size_t i = 0; i < diag.size(); ++i) {
      Matrix d = std::move(diag[i]);
      if (i > 0) {
        d.noalias() -= sub_factors_[i - 1] * sub_factors_[i - 1].transpose();
      }
      diag_factors_.emplace_back(
          d, "block tridiagonal diagonal block " + std::to_string(i));
      offsets_.push_back(offsets_.back() + d.rows());
      if (i + 1 < diag.size()) {
        require(sub[i].cols() == d.rows(), ErrorCode::DimensionMismatch,
                "block tridiagonal: sub-diagonal block shape");
        // W_i = E_i L_ii^{-T}  <=>  W_i^T = L_ii^{-1} E_i^T
        Matrix wt = diag_factors_.back().solve_lower(sub[i].transpose());
        sub_factors_.push_back(wt.transpose());
      }
    }
  }

  Eigen::Index size() const { return offsets_.empty() ? 0 : offsets_.back(); }

  /// L^{-1} b (forward substitution through the block bidiagonal factor).
  Matrix solve_lower(const Eigen::Ref<const Matrix> &b) const {
    require(b.rows() == size(), ErrorCode::DimensionMismatch,
            "block tridiagonal solve: rhs rows");
    Matrix z(b.rows(), b.cols());
    for (std::size_t i = 0; i < diag_factors_.size(); ++i) {
      const Eigen::Index off = offsets_[i];
      const Eigen::Index len = offsets_[i + 1] - off;
      Matrix r = b.middleRows(off, len);
      if (i > 0) {
        const Eigen::Index prev = offsets_[i - 1];
        r.noalias() -= sub_factors_[i - 1] *
                       z.middleRows(prev, offsets_[i] - prev);
      }
      z.middleRows(off, len) = diag_factors_[i].solve_lower(r);
    }
    return z;
  }

  /// L^{-T} z (backward substitution).
  Matrix solve_upper(const Eigen::Ref<const Matrix> &z) const {
    Matrix x(z.rows(), z.cols());
    for (std::size_t i = diag_factors_.size(); i-- > 0;) {
      const Eigen::Index off = offsets_[i];
      const Eigen::Index len = offsets_[i + 1] - off;
      Matrix r = z.middleRows(off, len);
      if (i + 1 < diag_factors_.size()) {
        const Eigen::Index next = offsets_[i + 1];
        r.noalias() -= sub_factors_[i].transpose() *
                       x.middleRows(next, offsets_[i + 2] - next);
      }
      x.middleRows(off, len) =
          diag_factors_[i].solve_upper(r);
    }
    return x;
  }

  Matrix solve(const Eigen::Ref<const Matrix> &b) const {
    return solve_upper(solve_lower(b));
  }

  double log_determinant() const {
    double total = 0.0;
    for (const auto &f : diag_factors_) total += f.log_determinant();
    return total;
  }

 private:
  std::vector<Cholesky> diag_factors_;
  std::vector<Matrix> sub_factors_;
  std::vector<Eigen::Index> offsets_;
};

/// Gathers rows `idx` of `a`.
inline Matrix take_rows(const Eigen::Ref<const Matrix> &a,
                        const IndexVector &idx) {
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = a.row(idx[i]);
  }
  return out;
}

inline Vector take(const Eigen::Ref<const Vector> &v, const IndexVector &idx) {
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = v(idx[i]);
  }
  return out;
}

/// Largest absolute entry of a - b divided by the largest absolute entry of
/// b (floored at `floor`).
inline double relative_error(const Eigen::Ref<const Matrix> &a,
                             const Eigen::Ref<const Matrix> &b,
                             double floor = 1e-12) {
  if (a.size() == 0 && b.size() == 0) return 0.0;
  const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace linalg
}  // namespace ppk
