#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ppk/error.hpp"
#include "ppk/linalg.hpp"

namespace ppk {

/// Logistic propensity model e(x) = sigmoid(intercept + coefficients . x).
struct PropensityModel {
  double intercept = 0.0;
  Vector coefficients;

  Eigen::Index p() const { return coefficients.size(); }
};

namespace propensity {

inline constexpr double kScoreClamp = 1e-6;

inline double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double clamp_score(double p) {
  return std::clamp(p, kScoreClamp, 1.0 - kScoreClamp);
}

struct LogisticOptions {
  double tol = 1e-8;
  int max_iter = 100;
  /// Diagonal loading on the weighted normal equations.
  double ridge = 1e-8;
  /// Largest admissible absolute coefficient before declaring separation.
  double divergence_cap = 1e3;
  /// Fit on z-scored covariates, then map coefficients back to raw scale.
  bool standardize = false;
};

}  // namespace propensity

inline double linear_predictor(const PropensityModel &model,
                               const Eigen::Ref<const Vector> &x) {
  return model.intercept + model.coefficients.dot(x);
}

/// sigmoid(intercept + coefficients . x), kept strictly inside (0, 1).
inline double propensity_at(const PropensityModel &model,
                          const Eigen::Ref<const Vector> &x) {
  require(x.size() == model.p(), ErrorCode::DimensionMismatch,
          "covariate length does not match the propensity model");
  constexpr double eps = std::numeric_limits<double>::epsilon();
  return std::clamp(propensity::sigmoid(linear_predictor(model, x)), eps,
                    1.0 - eps);
}

inline Vector predict_propensity(const PropensityModel &model,
                                 const Eigen::Ref<const Matrix> &X) {
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    out(i) = propensity_at(model, X.row(i).transpose());
  }
  return out;
}

/// Maximum-likelihood logistic regression by Newton / IRLS iterations.
inline PropensityModel fit_logistic(const Eigen::Ref<const Matrix> &X,
                                    const Eigen::Ref<const Eigen::VectorXi> &t,
                                    const propensity::LogisticOptions &opts = {}) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  require(t.size() == n, ErrorCode::DimensionMismatch, "X and t row counts");
  const Eigen::Index treated = t.count();
  for (Eigen::Index i = 0; i < n; ++i) {
    require(t(i) == 0 || t(i) == 1, ErrorCode::InvalidArgument,
            "treatment must be binary");
  }
  if (treated == 0 || treated == n) {
    fail(ErrorCode::SingleClass, "treatment vector has a single class");
  }
  require(n > p + 1, ErrorCode::InvalidArgument,
          "logistic regression needs n > p + 1");

  Vector center = Vector::Zero(p);
  Vector scale = Vector::Ones(p);
  if (opts.standardize && n > 1) {
    center = X.colwise().mean().transpose();
    for (Eigen::Index j = 0; j < p; ++j) {
      const double sd = std::sqrt((X.col(j).array() - center(j)).square().sum() /
                                  static_cast<double>(n - 1));
      scale(j) = sd > 0.0 ? sd : 1.0;
    }
  }

  Matrix design(n, p + 1);
  design.col(0).setOnes();
  for (Eigen::Index j = 0; j < p; ++j) {
    design.col(j + 1) = (X.col(j).array() - center(j)) / scale(j);
  }
  const Vector target = t.cast<double>();

  Vector beta = Vector::Zero(p + 1);
  bool converged = false;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const Vector eta = design * beta;
    Vector mu(n), w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      mu(i) = propensity::sigmoid(eta(i));
      w(i) = mu(i) * (1.0 - mu(i));
    }
    Matrix info = design.transpose() * w.asDiagonal() * design;
    info.diagonal().array() += opts.ridge;
    const Vector score = design.transpose() * (target - mu);
    const Vector step = info.ldlt().solve(score);
    if (!step.allFinite()) {
      fail(ErrorCode::Separation, "Newton step is not finite");
    }
    beta += step;
    if (beta.cwiseAbs().maxCoeff() > opts.divergence_cap) {
      fail(ErrorCode::Separation,
           "coefficients exceed the divergence cap (perfect separation?)");
    }
    if (step.cwiseAbs().maxCoeff() < opts.tol) {
      converged = true;
      break;
    }
  }
  // The maximum-likelihood estimate does not exist when a hyperplane splits
  // the classes; Newton then either stalls or creeps off to infinity.
  {
    const Vector eta = design * beta;
    bool separated = true;
    for (Eigen::Index i = 0; i < n && separated; ++i) {
      separated = (target(i) == 1.0) ? eta(i) > 0.0 : eta(i) < 0.0;
    }
    if (separated) {
      fail(ErrorCode::Separation, "classes are linearly separable; no finite MLE");
    }
  }
  if (!converged) {
    fail(ErrorCode::NoConvergence,
         "IRLS did not converge in " + std::to_string(opts.max_iter) +
             " iterations");
  }

  PropensityModel model;
  model.coefficients = beta.tail(p).cwiseQuotient(scale);
  model.intercept = beta(0) - model.coefficients.dot(center);
  return model;
}

/// Value v for coordinate `hole` such that the completed covariate vector has
/// propensity `target_score`. The entry of `partial_x` at `hole` is ignored.
inline double solve_adjusted_coordinate(const PropensityModel &model,
                                        const Eigen::Ref<const Vector> &partial_x,
                                        Eigen::Index hole, double target_score,
                                        double zero_eps = 1e-10) {
  require(partial_x.size() == model.p(), ErrorCode::DimensionMismatch,
          "covariate length does not match the propensity model");
  require(hole >= 0 && hole < model.p(), ErrorCode::InvalidArgument,
          "adjusted coordinate index out of range");
  const double c = model.coefficients(hole);
  if (std::abs(c) < zero_eps) {
    fail(ErrorCode::ZeroCoefficient,
         "coefficient " + std::to_string(hole) + " is numerically zero");
  }
  double rest = model.intercept;
  for (Eigen::Index i = 0; i < model.p(); ++i) {
    if (i != hole) rest += model.coefficients(i) * partial_x(i);
  }
  return (propensity::logit(propensity::clamp_score(target_score)) - rest) / c;
}

}  // namespace ppk
