#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ppk/error.hpp"
#include "ppk/linalg.hpp"

namespace ppk {

/// Observational sample: covariates X (n x p), outcome y, binary treatment t.
/// `true_theta` is only present for synthetic data.
struct Dataset {
  Matrix X;
  Vector y;
  Eigen::VectorXi t;
  std::optional<Vector> true_theta;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }

  Vector t_real() const { return t.cast<double>(); }

  void validate() const {
    require(X.rows() >= 1, ErrorCode::InvalidArgument, "dataset is empty");
    require(y.size() == X.rows() && t.size() == X.rows(),
            ErrorCode::DimensionMismatch,
            "X, y and t must have the same number of rows");
    require(!true_theta || true_theta->size() == X.rows(),
            ErrorCode::DimensionMismatch, "true_theta length");
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      require(t(i) == 0 || t(i) == 1, ErrorCode::InvalidArgument,
              "treatment must be 0 or 1 (row " + std::to_string(i) + ")");
    }
    require(X.allFinite() && y.allFinite(), ErrorCode::InvalidArgument,
            "X and y must be finite");
  }

  Dataset rows(const IndexVector &idx) const {
    Dataset out;
    out.X = linalg::take_rows(X, idx);
    out.y = linalg::take(y, idx);
    out.t.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.t(static_cast<Eigen::Index>(i)) = t(idx[i]);
    }
    if (true_theta) out.true_theta = linalg::take(*true_theta, idx);
    return out;
  }
};

/// K ordered propensity-score regions. Regions are numbered 1..K in
/// `assignment`; region k covers [cutoff_{k-1}, cutoff_k) with cutoff_0 = 0
/// and cutoff_K = 1, the last region being closed on the right.
struct Partition {
  int K = 1;
  std::vector<double> cutoffs;
  std::vector<int> assignment;

  /// Sample indices of region k (1-based), in increasing order.
  IndexVector members(int k) const {
    IndexVector out;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] == k) out.push_back(static_cast<Eigen::Index>(i));
    }
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(K), 0);
    for (int a : assignment) ++out[static_cast<std::size_t>(a - 1)];
    return out;
  }
};

/// Kernel and noise hyperparameters of one region; s_eps is a precision.
struct RegionHyperParams {
  double gamma_theta = 1.0;
  double gamma_f = 1.0;
  double s_eps = 1.0;

  void validate() const {
    auto ok = [](double v) { return std::isfinite(v) && v > 0.0; };
    require(ok(gamma_theta) && ok(gamma_f) && ok(s_eps),
            ErrorCode::InvalidArgument,
            "hyperparameters must be finite and strictly positive");
  }

  friend bool operator==(const RegionHyperParams &,
                         const RegionHyperParams &) = default;
};

inline void validate_cutoffs(const std::vector<double> &cutoffs) {
  for (std::size_t j = 0; j < cutoffs.size(); ++j) {
    require(cutoffs[j] > 0.0 && cutoffs[j] < 1.0, ErrorCode::InvalidArgument,
            "cutoffs must lie in (0, 1)");
    if (j > 0) {
      require(cutoffs[j] > cutoffs[j - 1], ErrorCode::DuplicateCutoff,
              "cutoffs must be strictly increasing");
    }
  }
}

/// Region (1-based) of a single score: the number of cutoffs <= score, plus 1.
inline int region_of(double score, const std::vector<double> &cutoffs) {
  const auto it = std::upper_bound(cutoffs.begin(), cutoffs.end(), score);
  return static_cast<int>(it - cutoffs.begin()) + 1;
}

/// Sample quantile with linear interpolation between order statistics
/// (h = (n - 1) q on the sorted sample).
inline double quantile_sorted(const std::vector<double> &sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

/// The (j/K)-quantiles, j = 1..K-1, of the scores.
inline std::vector<double> quantile_cutoffs(const Eigen::Ref<const Vector> &scores,
                                            int K) {
  require(K >= 1 && K <= scores.size(), ErrorCode::InvalidK,
          "K must satisfy 1 <= K <= n (K = " + std::to_string(K) + ")");
  std::vector<double> sorted(scores.data(), scores.data() + scores.size());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cutoffs;
  cutoffs.reserve(static_cast<std::size_t>(K - 1));
  for (int j = 1; j < K; ++j) {
    const double c = quantile_sorted(sorted, static_cast<double>(j) / K);
    if (!cutoffs.empty() && !(c > cutoffs.back())) {
      fail(ErrorCode::DuplicateCutoff,
           "tied scores produce non-increasing cutoffs at j = " +
               std::to_string(j));
    }
    cutoffs.push_back(c);
  }
  return cutoffs;
}

/// Assigns every score to its region. Fails with EmptyRegion when a region
/// ends up with fewer than `min_region_size` samples (at least one).
inline Partition assign_regions(const Eigen::Ref<const Vector> &scores,
                                const std::vector<double> &cutoffs,
                                std::size_t min_region_size = 1) {
  validate_cutoffs(cutoffs);
  Partition part;
  part.K = static_cast<int>(cutoffs.size()) + 1;
  part.cutoffs = cutoffs;
  part.assignment.resize(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    part.assignment[static_cast<std::size_t>(i)] = region_of(scores(i), cutoffs);
  }
  const auto sizes = part.sizes();
  const std::size_t floor = std::max<std::size_t>(1, min_region_size);
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] < floor) {
      fail(ErrorCode::EmptyRegion,
           "region " + std::to_string(k + 1) + " has " +
               std::to_string(sizes[k]) + " samples (minimum " +
               std::to_string(floor) + ")");
    }
  }
  return part;
}

/// Region of each score without any size requirement (used for test points).
inline std::vector<int> regions_for(const Eigen::Ref<const Vector> &scores,
                                    const std::vector<double> &cutoffs) {
  std::vector<int> out(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    out[static_cast<std::size_t>(i)] = region_of(scores(i), cutoffs);
  }
  return out;
}

}  // namespace ppk
