#pragma once

#include <cstdint>

#include "ppk/data_model.hpp"
#include "ppk/ppk_engine.hpp"
#include "ppk/propensity.hpp"
#include "ppk/pseudo_gen.hpp"
#include "ppk/rng.hpp"

namespace ppk::support {

inline Matrix normal_matrix(rng::Stream &rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = rng.normal();
  return out;
}

inline Vector normal_vector(rng::Stream &rng, Eigen::Index n) {
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = rng.normal();
  return out;
}

inline Eigen::VectorXi coin_flips(rng::Stream &rng, Eigen::Index n) {
  Eigen::VectorXi t(n);
  for (Eigen::Index i = 0; i < n; ++i) t(i) = rng.bernoulli(0.5) ? 1 : 0;
  return t;
}

inline Matrix random_spd(rng::Stream &rng, Eigen::Index n) {
  const Matrix a = normal_matrix(rng, n, n);
  Matrix s = a * a.transpose();
  s.diagonal().array() += static_cast<double>(n);
  return s;
}

struct InstanceShape {
  Eigen::Index n = 40;
  Eigen::Index m = 8;
  int K = 3;
  int B = 2;
  Eigen::Index p = 2;
};

/// Random engine inputs: regions from propensity quantiles, pseudo points
/// on the estimated boundaries, per-region hyperparameters drawn at random.
inline PpkInputs random_instance(std::uint64_t seed, const InstanceShape &shape) {
  rng::Stream rng(seed, 7, rng::Purpose::Generic);
  PpkInputs in;
  in.train.X = normal_matrix(rng, shape.n, shape.p);
  in.train.t = coin_flips(rng, shape.n);
  in.train.y = normal_vector(rng, shape.n);

  PropensityModel model;
  model.intercept = rng.uniform(-0.3, 0.3);
  model.coefficients = normal_vector(rng, shape.p);
  model.coefficients(0) = rng.bernoulli(0.5) ? rng.uniform(0.5, 1.5) : -rng.uniform(0.5, 1.5);

  const Vector scores = predict_propensity(model, in.train.X);
  const auto cutoffs = quantile_cutoffs(scores, shape.K);
  in.partition = assign_regions(scores, cutoffs, 2);
  in.test_X = normal_matrix(rng, shape.m, shape.p);
  in.test_region = regions_for(predict_propensity(model, in.test_X), cutoffs);
  for (int k = 0; k < shape.K; ++k) {
    in.hyper.push_back({rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.5, 4.0)});
  }
  in.pseudo = generate_pseudo_set(model, in.train.X, in.partition, shape.B, seed);
  return in;
}

inline double min_eigenvalue(const Matrix &a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace ppk::support
