#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ppk/data_model.hpp"
#include "ppk/error.hpp"
#include "ppk/linalg.hpp"
#include "ppk/propensity.hpp"
#include "ppk/rng.hpp"

namespace ppk {

/// Per-dimension sample mean and (m - 1)-denominator variance of a region.
struct RegionMoments {
  Vector mean;
  Vector variance;
};

/// Boundary inputs: B rows per cutoff, stacked boundary by boundary.
/// boundary_index holds the 1-based cutoff each row belongs to.
struct PseudoSet {
  Matrix points;
  std::vector<int> boundary_index;
  int B = 0;

  int boundaries() const {
    return B == 0 ? 0 : static_cast<int>(points.rows() / B);
  }

  /// Rows of boundary b (1-based).
  Matrix boundary_points(int b) const {
    return points.middleRows(static_cast<Eigen::Index>(b - 1) * B, B);
  }
};

inline RegionMoments region_moments(const Eigen::Ref<const Matrix> &X_region) {
  const Eigen::Index m = X_region.rows();
  if (m < 2) {
    fail(ErrorCode::TooFewSamples,
         "region moments need at least two rows, got " + std::to_string(m));
  }
  RegionMoments out;
  out.mean = X_region.colwise().mean().transpose();
  out.variance = (X_region.rowwise() - out.mean.transpose())
                     .array()
                     .square()
                     .colwise()
                     .sum()
                     .transpose() /
                 static_cast<double>(m - 1);
  return out;
}

struct PseudoOptions {
  /// Coefficients below this magnitude are never chosen as the adjusted
  /// coordinate.
  double zero_eps = 1e-10;
};

/// B pseudo inputs whose estimated propensity equals `cutoff`. Free
/// coordinates follow N(mean_k/2 + mean_k1/2, var_k/2 + var_k1/2); one
/// coordinate, drawn uniformly among those with a usable coefficient, is then
/// solved for. Deterministic given rng_seed.
inline Matrix generate_pseudo_points(const PropensityModel &model,
                                     const RegionMoments &moments_k,
                                     const RegionMoments &moments_k1,
                                     double cutoff, int B, std::uint64_t rng_seed,
                                     const PseudoOptions &opts = {}) {
  const Eigen::Index p = model.p();
  require(B >= 1, ErrorCode::InvalidArgument, "B must be at least 1");
  require(moments_k.mean.size() == p && moments_k1.mean.size() == p,
          ErrorCode::DimensionMismatch, "moments do not match the model");
  require(cutoff > 0.0 && cutoff < 1.0, ErrorCode::InvalidArgument,
          "cutoff must lie in (0, 1)");

  std::vector<Eigen::Index> adjustable;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (std::abs(model.coefficients(j)) >= opts.zero_eps) adjustable.push_back(j);
  }
  if (adjustable.empty()) {
    fail(ErrorCode::NoAdjustableDimension,
         "every propensity coefficient is numerically zero");
  }

  const Vector mid_mean = 0.5 * (moments_k.mean + moments_k1.mean);
  const Vector mid_sd = (0.5 * (moments_k.variance + moments_k1.variance))
                            .cwiseMax(0.0)
                            .cwiseSqrt();

  rng::Stream stream(rng_seed, 0, rng::Purpose::PseudoPoints);
  Matrix out(B, p);
  for (int b = 0; b < B; ++b) {
    const Eigen::Index hole = adjustable[stream.index(adjustable.size())];
    Vector x(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      x(j) = (j == hole) ? 0.0 : stream.normal(mid_mean(j), mid_sd(j));
    }
    x(hole) = solve_adjusted_coordinate(model, x, hole, cutoff, opts.zero_eps);
    out.row(b) = x.transpose();
  }
  return out;
}

/// Pseudo inputs for every boundary of a partition. Boundary b uses the
/// stream seeded with base_seed + b, so the result does not depend on the
/// order in which boundaries are processed.
inline PseudoSet generate_pseudo_set(const PropensityModel &model,
                                     const Eigen::Ref<const Matrix> &X,
                                     const Partition &partition, int B,
                                     std::uint64_t base_seed,
                                     const PseudoOptions &opts = {}) {
  require(B >= 1, ErrorCode::InvalidArgument, "B must be at least 1");
  PseudoSet set;
  set.B = B;
  const int boundaries = partition.K - 1;
  set.points.resize(static_cast<Eigen::Index>(boundaries) * B, X.cols());
  std::vector<RegionMoments> moments;
  for (int k = 1; k <= partition.K && boundaries > 0; ++k) {
    moments.push_back(region_moments(linalg::take_rows(X, partition.members(k))));
  }
  for (int b = 1; b <= boundaries; ++b) {
    set.points.middleRows(static_cast<Eigen::Index>(b - 1) * B, B) =
        generate_pseudo_points(model, moments[static_cast<std::size_t>(b - 1)],
                               moments[static_cast<std::size_t>(b)],
                               partition.cutoffs[static_cast<std::size_t>(b - 1)],
                               B, base_seed + static_cast<std::uint64_t>(b), opts);
    for (int r = 0; r < B; ++r) set.boundary_index.push_back(b);
  }
  return set;
}

}  // namespace ppk
