#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "ppk/data_model.hpp"
#include "ppk/error.hpp"
#include "ppk/linalg.hpp"
#include "ppk/parallel.hpp"

namespace ppk {

/// exp(-gamma * ||x - z||^2)
inline double rbf(const Eigen::Ref<const Vector> &x,
                  const Eigen::Ref<const Vector> &z, double gamma) {
  return std::exp(-gamma * (x - z).squaredNorm());
}

/// Pairwise squared Euclidean distances between the rows of a and b.
inline Matrix squared_distances(const Eigen::Ref<const Matrix> &a,
                                const Eigen::Ref<const Matrix> &b) {
  require(a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          "squared_distances: column counts differ");
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return d;
}

/// Cross Gram matrix of the RBF kernel; entry (i, j) = rbf(A_i, B_j, gamma).
inline Matrix gram(const Eigen::Ref<const Matrix> &A,
                   const Eigen::Ref<const Matrix> &B, double gamma) {
  require(A.cols() == B.cols(), ErrorCode::DimensionMismatch,
          "gram: column counts differ");
  // std::exp, not the vectorized array exp, to stay within an ulp or so of rbf.
  return squared_distances(A, B).unaryExpr([gamma](double d) { return std::exp(-gamma * d); });
}

/// Gram of a point set with itself plus the base nugget on the diagonal.
inline Matrix jittered_gram(const Eigen::Ref<const Matrix> &A, double gamma) {
  Matrix g = gram(A, A, gamma);
  g.diagonal().array() += linalg::kBaseJitter;
  return g;
}

/// Kernel Grams of the treatment-effect and baseline processes on one region.
struct GramPair {
  Matrix C_theta;
  Matrix C_f;
};

inline GramPair gram_pair(const Eigen::Ref<const Matrix> &X,
                          const RegionHyperParams &hp) {
  return {jittered_gram(X, hp.gamma_theta), jittered_gram(X, hp.gamma_f)};
}

/// Marginal covariance of y under the partially linear model:
/// diag(t) C_theta diag(t) + C_f + I / s_eps.
inline Matrix outcome_covariance(const Eigen::Ref<const Matrix> &X,
                                 const Eigen::Ref<const Vector> &t,
                                 const RegionHyperParams &hp) {
  const GramPair g = gram_pair(X, hp);
  Matrix v = t.asDiagonal() * g.C_theta * t.asDiagonal();
  v += g.C_f;
  v.diagonal().array() += 1.0 / hp.s_eps;
  return v;
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// log N(y | 0, V) with V as in outcome_covariance, through a Cholesky factor.
inline double marginal_loglik(const Eigen::Ref<const Vector> &y,
                              const Eigen::Ref<const Eigen::VectorXi> &t,
                              const Eigen::Ref<const Matrix> &X,
                              const RegionHyperParams &hp) {
  const Eigen::Index m = y.size();
  require(m >= 1, ErrorCode::InvalidArgument, "marginal_loglik: empty region");
  require(t.size() == m && X.rows() == m, ErrorCode::DimensionMismatch,
          "marginal_loglik: y, t, X row counts differ");
  hp.validate();
  const Vector tr = t.cast<double>();
  const linalg::Cholesky chol(outcome_covariance(X, tr, hp), "V");
  const Vector alpha = chol.solve_lower(y);
  return -0.5 * (alpha.squaredNorm() + chol.log_determinant() +
                 static_cast<double>(m) * kLog2Pi);
}

/// One-dimensional grid min, min + step, ... up to max.
struct TuningGrid {
  double min = 0.1;
  double max = 5.0;
  double step = 0.2;

  void validate() const {
    require(std::isfinite(min) && std::isfinite(max) && std::isfinite(step),
            ErrorCode::InvalidArgument, "grid bounds must be finite");
    require(min > 0.0 && min <= max && step > 0.0, ErrorCode::InvalidArgument,
            "grid needs 0 < min <= max and step > 0");
  }

  std::vector<double> values() const {
    validate();
    std::vector<double> out;
    const double slack = 1e-9 * step;
    for (long i = 0;; ++i) {
      const double v = min + static_cast<double>(i) * step;
      if (v > max + slack) break;
      out.push_back(v);
    }
    return out;
  }
};

/// Grids for the three hyperparameters; by default all share one grid.
struct HyperGrid {
  TuningGrid gamma_theta;
  TuningGrid gamma_f;
  TuningGrid s_eps;

  static HyperGrid uniform(const TuningGrid &g) { return {g, g, g}; }
  static HyperGrid simulation_default() { return uniform({0.1, 5.0, 0.2}); }
  static HyperGrid real_data_default() { return uniform({0.1, 10.0, 0.2}); }

  std::size_t size() const {
    return gamma_theta.values().size() * gamma_f.values().size() *
           s_eps.values().size();
  }
};

enum class GridSearchMode {
  /// Factor V at every grid point.
  Exhaustive,
  /// Tridiagonalize diag(t) C_theta diag(t) + C_f once per (gamma_theta,
  /// gamma_f) pair and sweep s_eps in O(m) each; near-optimal candidates are
  /// then re-scored with marginal_loglik so the result is the exhaustive
  /// argmax.
  Spectral,
};

struct GridSearchOptions {
  GridSearchMode mode = GridSearchMode::Spectral;
  /// Screened values within this relative distance of the best are re-scored.
  double confirm_tolerance = 1e-7;
  /// Log-likelihoods closer than this (relative, floored at 1) count as ties.
  double tie_tolerance = 1e-15;
};

namespace detail {

inline double tie_band(double best, double tol) {
  return tol * std::max(1.0, std::abs(best));
}

// Log-likelihood for every s_eps value given a tridiagonal form (d, e) of the
// s-independent part of V and the rotated outcome z = Q^T y.
inline void sweep_noise(const Vector &d, const Vector &e, const Vector &z,
                        const std::vector<double> &s_values, double *out) {
  const Eigen::Index m = d.size();
  for (std::size_t c = 0; c < s_values.size(); ++c) {
    const double shift = 1.0 / s_values[c];
    double pivot = d(0) + shift;
    double w = z(0);
    bool ok = pivot > 0.0;
    double quad = ok ? w * w / pivot : 0.0;
    double logdet = ok ? std::log(pivot) : 0.0;
    for (Eigen::Index i = 1; ok && i < m; ++i) {
      const double l = e(i - 1) / pivot;
      pivot = d(i) + shift - l * e(i - 1);
      w = z(i) - l * w;
      if (!(pivot > 0.0)) {
        ok = false;
        break;
      }
      quad += w * w / pivot;
      logdet += std::log(pivot);
    }
    out[c] = ok ? -0.5 * (quad + logdet + static_cast<double>(m) * kLog2Pi)
                : -std::numeric_limits<double>::infinity();
  }
}

}  // namespace detail

/// Grid triple maximizing marginal_loglik; ties go to the smallest
/// gamma_theta, then gamma_f, then s_eps.
inline RegionHyperParams grid_search_region(const Dataset &region,
                                            const HyperGrid &grid,
                                            const GridSearchOptions &opts = {}) {
  require(region.n() >= 1, ErrorCode::EmptyRegion, "grid search on empty region");
  const auto g_theta = grid.gamma_theta.values();
  const auto g_f = grid.gamma_f.values();
  const auto g_s = grid.s_eps.values();
  const std::size_t n_f = g_f.size();
  const std::size_t n_s = g_s.size();
  const std::size_t total = g_theta.size() * n_f * n_s;

  auto triple = [&](std::size_t flat) {
    const std::size_t a = flat / (n_f * n_s);
    const std::size_t b = (flat / n_s) % n_f;
    const std::size_t c = flat % n_s;
    return RegionHyperParams{g_theta[a], g_f[b], g_s[c]};
  };

  std::vector<std::size_t> candidates;
  if (opts.mode == GridSearchMode::Spectral && total > 1) {
    const Eigen::Index m = region.n();
    const Vector t = region.t_real();
    const Matrix sqd = squared_distances(region.X, region.X);
    const Matrix tt = t * t.transpose();
    std::vector<double> screened(total);
    Matrix a(m, m);
    for (std::size_t ia = 0; ia < g_theta.size(); ++ia) {
      Matrix theta_part = (-g_theta[ia] * sqd.array()).exp().matrix();
      theta_part.diagonal().array() += linalg::kBaseJitter;
      theta_part = theta_part.cwiseProduct(tt);
      for (std::size_t ib = 0; ib < n_f; ++ib) {
        a = theta_part + (-g_f[ib] * sqd.array()).exp().matrix();
        a.diagonal().array() += linalg::kBaseJitter;
        Vector d, e, z;
        if (m == 1) {
          d = a.diagonal();
          e = Vector(0);
          z = region.y;
        } else {
          Eigen::Tridiagonalization<Matrix> tri(a);
          d = tri.diagonal();
          e = tri.subDiagonal();
          z = tri.matrixQ().adjoint() * region.y;
        }
        detail::sweep_noise(d, e, z, g_s,
                            screened.data() + (ia * n_f + ib) * n_s);
      }
    }
    double best = -std::numeric_limits<double>::infinity();
    for (double v : screened) {
      if (std::isfinite(v) && v > best) best = v;
    }
    if (std::isfinite(best)) {
      const double band = opts.confirm_tolerance * std::max(1.0, std::abs(best));
      for (std::size_t i = 0; i < total; ++i) {
        if (screened[i] >= best - band) candidates.push_back(i);
      }
    }
  }
  if (candidates.empty()) {
    candidates.resize(total);
    for (std::size_t i = 0; i < total; ++i) candidates[i] = i;
  }

  double best = -std::numeric_limits<double>::infinity();
  std::optional<RegionHyperParams> winner;
  std::string last_error;
  for (std::size_t flat : candidates) {
    const RegionHyperParams hp = triple(flat);
    double value;
    try {
      value = marginal_loglik(region.y, region.t, region.X, hp);
    } catch (const Error &err) {
      if (err.code() != ErrorCode::NotPositiveDefinite) throw;
      last_error = err.what();
      continue;
    }
    if (!winner || value > best + detail::tie_band(best, opts.tie_tolerance)) {
      best = value;
      winner = hp;
    }
  }
  if (!winner) {
    fail(ErrorCode::NotPositiveDefinite,
         "every grid point failed to factorize: " + last_error);
  }
  return *winner;
}

/// Per-region grid search; element k - 1 belongs to region k. The result does
/// not depend on the worker count.
inline std::vector<RegionHyperParams> tune_all(const Dataset &data,
                                               const Partition &partition,
                                               const HyperGrid &grid,
                                               std::size_t workers = 1,
                                               const GridSearchOptions &opts = {}) {
  require(partition.assignment.size() == static_cast<std::size_t>(data.n()),
          ErrorCode::DimensionMismatch, "partition does not match dataset");
  const auto K = static_cast<std::size_t>(partition.K);
  std::vector<RegionHyperParams> out(K);
  const auto errors = parallel_for(K, workers, [&](std::size_t k) {
    const auto idx = partition.members(static_cast<int>(k) + 1);
    if (idx.empty()) {
      fail(ErrorCode::EmptyRegion, "no samples");
    }
    out[k] = grid_search_region(data.rows(idx), grid, opts);
  });
  for (std::size_t k = 0; k < K; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const Error &err) {
      throw Error(err.code(), "region " + std::to_string(k + 1) + ": " + err.what());
    }
  }
  return out;
}

}  // namespace ppk
