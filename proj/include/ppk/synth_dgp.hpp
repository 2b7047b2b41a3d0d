#pragma once

// Synthetic designs A-D for heterogeneous treatment effects with six
// covariates. Every row satisfies
//   Y = theta(X) T + f(X) + eps,  T ~ Bernoulli(e(X)),  f = b - theta / 2.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "ppk/data_model.hpp"
#include "ppk/error.hpp"
#include "ppk/rng.hpp"

namespace ppk::synth {

enum class Setup { A, B, C, D };

inline constexpr Eigen::Index kCovariates = 6;

inline Setup parse_setup(std::string_view name) {
  if (name == "A" || name == "a") return Setup::A;
  if (name == "B" || name == "b") return Setup::B;
  if (name == "C" || name == "c") return Setup::C;
  if (name == "D" || name == "d") return Setup::D;
  fail(ErrorCode::UnknownSetup, "unknown setup '" + std::string(name) + "'");
}

inline char setup_name(Setup s) { return "ABCD"[static_cast<int>(s)]; }

/// Which sample of a replication is drawn; train and test use disjoint streams.
enum class Role : std::uint32_t { Train = 0, Test = 1 };

struct DGPSpec {
  Setup setup = Setup::A;
  Eigen::Index n = 500;
  std::uint64_t seed = 0;
  /// Standard deviation of eps.
  double noise_sd = 1.0;
  Role role = Role::Train;

  void validate() const {
    require(n >= 1, ErrorCode::InvalidArgument, "n must be at least 1");
    require(std::isfinite(noise_sd) && noise_sd >= 0.0, ErrorCode::InvalidArgument,
            "noise_sd must be finite and non-negative");
  }
};

/// max(eta, min(x, 1 - eta))
inline double trim(double x, double eta) {
  require(eta > 0.0 && eta < 0.5, ErrorCode::InvalidArgument, "trim needs 0 < eta < 0.5");
  return std::max(eta, std::min(x, 1.0 - eta));
}

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

namespace detail {

inline void check_columns(const Eigen::Ref<const Matrix> &X) {
  require(X.cols() == kCovariates, ErrorCode::DimensionMismatch,
          "synthetic setups use exactly 6 covariates");
}

template <typename Row>
double theta_row(Setup s, const Row &x) {
  switch (s) {
    case Setup::A: return 0.5 * (x(0) + x(1));
    case Setup::B: return x(0) + softplus(x(1));
    case Setup::C: return 1.0;
    case Setup::D: return std::max(x(0) + x(1) + x(2), 0.0) - std::max(x(3) + x(4), 0.0);
  }
  fail(ErrorCode::UnknownSetup, "unknown setup");
}

template <typename Row>
double propensity_row(Setup s, const Row &x) {
  switch (s) {
    case Setup::A: return trim(std::sin(std::numbers::pi * x(0) * x(1)), 0.1);
    case Setup::B: return 0.5;
    case Setup::C: return 1.0 / (1.0 + std::exp(x(1) + x(2)));
    case Setup::D: return 1.0 / (1.0 + std::exp(-x(0) - x(1)));
  }
  fail(ErrorCode::UnknownSetup, "unknown setup");
}

template <typename Row>
double baseline_row(Setup s, const Row &x) {
  switch (s) {
    case Setup::A:
      return std::sin(std::numbers::pi * x(0) * x(1)) + 2.0 * (x(2) - 0.5) * (x(2) - 0.5) +
             x(3) + 0.5 * x(4);
    case Setup::B:
      return std::max({x(0) + x(1), x(2), 0.0}) + std::max(x(3), x(4));
    case Setup::C: return 2.0 * softplus(x(0) + x(1) + x(2));
    case Setup::D:
      return 0.5 * (std::max(x(0) + x(1) + x(2), 0.0) - std::max(x(3) + x(4), 0.0));
  }
  fail(ErrorCode::UnknownSetup, "unknown setup");
}

template <typename Fn>
Vector rowwise(const Eigen::Ref<const Matrix> &X, Fn &&fn) {
  check_columns(X);
  Vector out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out(i) = fn(X.row(i));
  return out;
}

}  // namespace detail

inline Vector true_theta(Setup s, const Eigen::Ref<const Matrix> &X) {
  return detail::rowwise(X, [s](const auto &x) { return detail::theta_row(s, x); });
}

inline Vector true_propensity(Setup s, const Eigen::Ref<const Matrix> &X) {
  return detail::rowwise(X, [s](const auto &x) { return detail::propensity_row(s, x); });
}

/// b(X); the outcome baseline is f = b - theta / 2.
inline Vector baseline_b(Setup s, const Eigen::Ref<const Matrix> &X) {
  return detail::rowwise(X, [s](const auto &x) { return detail::baseline_row(s, x); });
}

inline Vector baseline_f(Setup s, const Eigen::Ref<const Matrix> &X) {
  return baseline_b(s, X) - 0.5 * true_theta(s, X);
}

struct SyntheticData {
  Dataset data;
  Vector propensity;
};

/// Draws a dataset. Streams: key = seed, stream word = setup * 256 + role,
/// purpose Covariates (row-major X), Treatment, Noise.
inline SyntheticData generate(const DGPSpec &spec) {
  spec.validate();
  const auto stream_id = static_cast<std::uint32_t>(static_cast<int>(spec.setup) * 256) +
                         static_cast<std::uint32_t>(spec.role);
  rng::Stream cov_rng(spec.seed, stream_id, rng::Purpose::Covariates);
  rng::Stream treat_rng(spec.seed, stream_id, rng::Purpose::Treatment);
  rng::Stream noise_rng(spec.seed, stream_id, rng::Purpose::Noise);

  const Eigen::Index n = spec.n;
  SyntheticData out;
  Dataset &d = out.data;
  d.X.resize(n, kCovariates);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < kCovariates; ++j) {
      d.X(i, j) = spec.setup == Setup::A ? cov_rng.uniform() : cov_rng.normal();
    }
  }
  out.propensity = true_propensity(spec.setup, d.X);
  const Vector theta = true_theta(spec.setup, d.X);
  const Vector f = baseline_f(spec.setup, d.X);
  d.t.resize(n);
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d.t(i) = treat_rng.bernoulli(out.propensity(i)) ? 1 : 0;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    d.y(i) = theta(i) * d.t(i) + f(i) + spec.noise_sd * noise_rng.normal();
  }
  d.true_theta = theta;
  return out;
}

}  // namespace ppk::synth
