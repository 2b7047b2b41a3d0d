#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ppk/baselines.hpp"
#include "ppk/data_model.hpp"
#include "ppk/gp_core.hpp"
#include "ppk/ppk_engine.hpp"
#include "ppk/propensity.hpp"
#include "ppk/pseudo_gen.hpp"

namespace ppk {

/// Column-wise z-scoring fitted on one matrix and applied to others.
struct ColumnScaler {
  Vector center;
  Vector scale;

  static ColumnScaler fit(const Eigen::Ref<const Matrix> &X) {
    ColumnScaler s;
    s.center = X.colwise().mean().transpose();
    s.scale = Vector::Ones(X.cols());
    if (X.rows() > 1) {
      for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double sd = std::sqrt((X.col(j).array() - s.center(j)).square().sum() /
                                    static_cast<double>(X.rows() - 1));
        if (sd > 0.0) s.scale(j) = sd;
      }
    }
    return s;
  }

  Matrix apply(const Eigen::Ref<const Matrix> &X) const {
    return ((X.rowwise() - center.transpose()).array().rowwise() /
            scale.transpose().array())
        .matrix();
  }
};

struct FitConfig {
  int K = 5;
  int B = 20;
  std::uint64_t seed = 0;
  HyperGrid grid = HyperGrid::simulation_default();
  /// Fixed cutoffs; when empty, cutoffs are the K-quantiles of the training
  /// propensity scores.
  std::vector<double> fixed_cutoffs;
  std::size_t min_region_size = 5;
  std::size_t workers = 1;
  propensity::LogisticOptions logistic;
  /// z-score covariates before they enter the kernels (fitted on training).
  bool standardize_kernel_inputs = false;
  GridSearchOptions search;
};

/// Shared stage of the regional methods: propensity model, partition and
/// per-region hyperparameters.
struct RegionalFit {
  PropensityModel model;
  Vector train_scores;
  Vector test_scores;
  Partition partition;
  std::vector<int> test_region;
  std::vector<RegionHyperParams> hyper;
  /// Kernel-space covariates (identical to the raw ones unless standardized).
  Matrix train_kernel_X;
  Matrix test_kernel_X;
};

inline RegionalFit fit_regions(const Dataset &train, const Eigen::Ref<const Matrix> &test_X,
                               const FitConfig &cfg) {
  train.validate();
  require(test_X.cols() == train.p(), ErrorCode::DimensionMismatch,
          "test covariates have the wrong number of columns");
  RegionalFit fit;
  fit.model = fit_logistic(train.X, train.t, cfg.logistic);
  fit.train_scores = predict_propensity(fit.model, train.X);
  fit.test_scores = predict_propensity(fit.model, test_X);
  std::vector<double> cutoffs =
      cfg.fixed_cutoffs.empty() ? quantile_cutoffs(fit.train_scores, cfg.K) : cfg.fixed_cutoffs;
  fit.partition = assign_regions(fit.train_scores, cutoffs, cfg.min_region_size);
  fit.test_region = regions_for(fit.test_scores, fit.partition.cutoffs);
  if (cfg.standardize_kernel_inputs) {
    const ColumnScaler scaler = ColumnScaler::fit(train.X);
    fit.train_kernel_X = scaler.apply(train.X);
    fit.test_kernel_X = scaler.apply(test_X);
  } else {
    fit.train_kernel_X = train.X;
    fit.test_kernel_X = test_X;
  }
  Dataset kernel_train = train;
  kernel_train.X = fit.train_kernel_X;
  fit.hyper = tune_all(kernel_train, fit.partition, cfg.grid, cfg.workers, cfg.search);
  return fit;
}

/// Pseudo points and the continuity-constrained posterior on top of a
/// regional fit. Pseudo points are generated in raw covariate space (their
/// propensity is what is pinned) and mapped to kernel space afterwards.
inline PpkInputs ppk_inputs(const Dataset &train, const RegionalFit &fit, const FitConfig &cfg,
                            std::optional<ColumnScaler> scaler = std::nullopt) {
  PpkInputs in;
  in.train = train;
  in.train.X = fit.train_kernel_X;
  in.partition = fit.partition;
  in.test_X = fit.test_kernel_X;
  in.test_region = fit.test_region;
  in.hyper = fit.hyper;
  if (fit.partition.K > 1) {
    in.pseudo = generate_pseudo_set(fit.model, train.X, fit.partition, cfg.B, cfg.seed);
    if (cfg.standardize_kernel_inputs) {
      const ColumnScaler s = scaler ? *scaler : ColumnScaler::fit(train.X);
      in.pseudo.points = s.apply(in.pseudo.points);
    }
  } else {
    in.pseudo.B = cfg.B;
    in.pseudo.points.resize(0, train.p());
  }
  return in;
}

inline PosteriorHTE fit_ppk(const Dataset &train, const RegionalFit &fit, const FitConfig &cfg) {
  return posterior_hte(ppk_inputs(train, fit, cfg));
}

inline PosteriorHTE fit_local(const Dataset &train, const RegionalFit &fit) {
  Dataset kernel_train = train;
  kernel_train.X = fit.train_kernel_X;
  return local_gp_posterior(kernel_train, fit.partition, fit.test_kernel_X, fit.test_region,
                            fit.hyper);
}

/// Global partially linear GP tuned on all of the training data.
inline PosteriorHTE fit_global(const Dataset &train, const Eigen::Ref<const Matrix> &test_X,
                               const FitConfig &cfg) {
  Dataset kernel_train = train;
  Matrix kernel_test = test_X;
  if (cfg.standardize_kernel_inputs) {
    const ColumnScaler s = ColumnScaler::fit(train.X);
    kernel_train.X = s.apply(train.X);
    kernel_test = s.apply(test_X);
  }
  const RegionHyperParams hp = grid_search_region(kernel_train, cfg.grid, cfg.search);
  return global_gp_posterior(kernel_train, kernel_test, hp);
}

}  // namespace ppk
