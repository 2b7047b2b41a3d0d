#pragma once

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <vector>

#include "ppk/error.hpp"
#include "ppk/linalg.hpp"
#include "ppk/ppk_engine.hpp"

namespace ppk {

struct PointMetrics {
  double mse = 0.0;
  double ci_length = 0.0;
  double coverage = 0.0;
};

/// Two-sided standard normal quantile for a central interval of `level`.
inline double central_z(double level) {
  require(level >= 0.0 && level < 1.0, ErrorCode::InvalidArgument,
          "credible level must lie in [0, 1)");
  if (level == 0.0) return 0.0;
  return boost::math::quantile(boost::math::normal_distribution<double>(),
                               0.5 + 0.5 * level);
}

/// MSE of the posterior mean, mean width of the central Gaussian intervals
/// mean +- z sd, and the fraction of truths inside them.
inline PointMetrics compute_metrics(const PosteriorHTE &post,
                                    const Eigen::Ref<const Vector> &truth,
                                    double level = 0.95) {
  const Eigen::Index m = truth.size();
  require(post.mean.size() == m && post.covariance.rows() == m,
          ErrorCode::DimensionMismatch, "posterior and truth lengths differ");
  require(m >= 1, ErrorCode::InvalidArgument, "no test points");
  const double z = central_z(level);
  const Vector sd = post.sd();
  PointMetrics out;
  std::size_t inside = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double err = post.mean(i) - truth(i);
    out.mse += err * err;
    out.ci_length += 2.0 * z * sd(i);
    if (std::abs(err) <= z * sd(i)) ++inside;
  }
  out.mse /= static_cast<double>(m);
  out.ci_length /= static_cast<double>(m);
  out.coverage = static_cast<double>(inside) / static_cast<double>(m);
  return out;
}

struct BoundaryBias {
  double cutoff = 0.0;
  /// Mean signed error over points with |score - cutoff| <= margin.
  double bias = 0.0;
  std::size_t count = 0;
  bool empty = true;
};

inline std::vector<BoundaryBias> boundary_bias(const Eigen::Ref<const Vector> &estimates,
                                               const Eigen::Ref<const Vector> &truths,
                                               const Eigen::Ref<const Vector> &scores,
                                               const std::vector<double> &cutoffs,
                                               double margin) {
  require(margin > 0.0, ErrorCode::InvalidArgument, "margin must be positive");
  require(estimates.size() == truths.size() && scores.size() == truths.size(),
          ErrorCode::DimensionMismatch, "boundary_bias: length mismatch");
  std::vector<BoundaryBias> out;
  for (double c : cutoffs) {
    BoundaryBias cell;
    cell.cutoff = c;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      if (std::abs(scores(i) - c) <= margin) {
        sum += estimates(i) - truths(i);
        ++cell.count;
      }
    }
    cell.empty = cell.count == 0;
    cell.bias = cell.empty ? 0.0 : sum / static_cast<double>(cell.count);
    out.push_back(cell);
  }
  return out;
}

}  // namespace ppk
