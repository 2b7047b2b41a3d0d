#pragma once

#include <string>
#include <vector>

#include "ppk/data_model.hpp"
#include "ppk/gp_core.hpp"
#include "ppk/linalg.hpp"
#include "ppk/ppk_engine.hpp"

namespace ppk {

/// Exact posterior of theta at test_X under y = theta(x) t + f(x) + eps with
/// independent zero-mean GP priors on theta and f, one hyperparameter set.
inline PosteriorHTE global_gp_posterior(const Dataset &train,
                                        const Eigen::Ref<const Matrix> &test_X,
                                        const RegionHyperParams &hp) {
  train.validate();
  hp.validate();
  require(test_X.cols() == train.p(), ErrorCode::DimensionMismatch,
          "test covariates have the wrong number of columns");
  const Vector t = train.t_real();
  const linalg::Cholesky chol(outcome_covariance(train.X, t, hp),
                              "global outcome covariance");
  // Cov(y, theta_test) = diag(t) C_theta(X, X_test)
  const Matrix V = chol.solve_lower(t.asDiagonal() * gram(train.X, test_X, hp.gamma_theta));
  PosteriorHTE out;
  out.mean = V.transpose() * chol.solve_lower(train.y);
  out.covariance = linalg::symmetrize(jittered_gram(test_X, hp.gamma_theta) - V.transpose() * V);
  return out;
}

/// Independent GP per region on that region's training slice; test points
/// use the model of the region they are assigned to. No continuity across
/// boundaries, and zero covariance between regions.
inline PosteriorHTE local_gp_posterior(const Dataset &train,
                                       const Partition &partition,
                                       const Eigen::Ref<const Matrix> &test_X,
                                       const std::vector<int> &test_region,
                                       const std::vector<RegionHyperParams> &hyper) {
  require(hyper.size() == static_cast<std::size_t>(partition.K),
          ErrorCode::DimensionMismatch, "need one hyperparameter set per region");
  require(test_region.size() == static_cast<std::size_t>(test_X.rows()),
          ErrorCode::DimensionMismatch, "test_region length");
  require(partition.assignment.size() == static_cast<std::size_t>(train.n()),
          ErrorCode::DimensionMismatch, "partition does not match training rows");
  const Eigen::Index m = test_X.rows();
  PosteriorHTE out;
  out.mean = Vector::Zero(m);
  out.covariance = Matrix::Zero(m, m);
  for (int k = 1; k <= partition.K; ++k) {
    const IndexVector train_idx = partition.members(k);
    if (train_idx.empty()) {
      fail(ErrorCode::EmptyRegion, "region " + std::to_string(k) + " has no training samples");
    }
    IndexVector test_idx;
    for (std::size_t j = 0; j < test_region.size(); ++j) {
      if (test_region[j] == k) test_idx.push_back(static_cast<Eigen::Index>(j));
    }
    if (test_idx.empty()) continue;
    const PosteriorHTE local = global_gp_posterior(
        train.rows(train_idx), linalg::take_rows(test_X, test_idx),
        hyper[static_cast<std::size_t>(k - 1)]);
    for (std::size_t a = 0; a < test_idx.size(); ++a) {
      out.mean(test_idx[a]) = local.mean(static_cast<Eigen::Index>(a));
      for (std::size_t b = 0; b < test_idx.size(); ++b) {
        out.covariance(test_idx[a], test_idx[b]) =
            local.covariance(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      }
    }
  }
  return out;
}

}  // namespace ppk
