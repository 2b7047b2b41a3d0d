#include <gtest/gtest.h>

#include <numbers>

#include "ppk/gp_core.hpp"
#include "support.hpp"

using namespace ppk;

namespace {

// Dense reference: V built entry by entry, log-density through a full LU.
double dense_loglik(const Dataset &d, const RegionHyperParams &hp) {
  const Eigen::Index m = d.n();
  Matrix V(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double dist = (d.X.row(i) - d.X.row(j)).squaredNorm();
      const double ct = std::exp(-hp.gamma_theta * dist) + (i == j ? 1e-8 : 0.0);
      const double cf = std::exp(-hp.gamma_f * dist) + (i == j ? 1e-8 : 0.0);
      V(i, j) = d.t(i) * d.t(j) * ct + cf + (i == j ? 1.0 / hp.s_eps : 0.0);
    }
  }
  const Eigen::FullPivLU<Matrix> lu(V);
  const double logdet = std::log(std::abs(lu.determinant()));
  const double quad = d.y.dot(lu.solve(d.y));
  return -0.5 * (quad + logdet + m * std::log(2.0 * std::numbers::pi));
}

Dataset random_region(rng::Stream &rng, Eigen::Index m, Eigen::Index p) {
  Dataset d;
  d.X = support::normal_matrix(rng, m, p);
  d.t = support::coin_flips(rng, m);
  d.y = support::normal_vector(rng, m);
  return d;
}

Dataset scalar(double y, int t) {
  Dataset d;
  d.X = Matrix::Zero(1, 2);
  d.y = Vector::Constant(1, y);
  d.t = Eigen::VectorXi::Constant(1, t);
  return d;
}

}  // namespace

TEST(Rbf, Examples) {
  const Vector x{{0.3, -1.2}};
  EXPECT_EQ(rbf(x, x, 2.7), 1.0);
  EXPECT_NEAR(rbf(Vector{{1.0, 0.0}}, Vector{{0.0, 0.0}}, 1.0), 0.3678794, 1e-7);
  EXPECT_NEAR(rbf(Vector{{1.0, 0.0}}, Vector{{0.0, 1.0}}, 0.5), 0.3678794, 1e-7);
}

TEST(Rbf, SymmetricExactly) {
  rng::Stream rng(2, 0, rng::Purpose::Generic);
  for (int i = 0; i < 200; ++i) {
    const Vector x = support::normal_vector(rng, 3), z = support::normal_vector(rng, 3);
    const double g = rng.uniform(0.1, 5.0);
    EXPECT_EQ(rbf(x, z, g), rbf(z, x, g));
  }
}

TEST(Gram, Examples) {
  const Matrix one = Matrix::Constant(1, 3, 0.4);
  EXPECT_EQ(gram(one, one, 1.3), Matrix::Ones(1, 1));
  const Matrix two = Matrix::Constant(2, 3, -0.7);
  EXPECT_EQ(gram(two, two, 0.9), Matrix::Ones(2, 2));
}

TEST(Gram, MatchesRbfLoop) {
  rng::Stream rng(3, 0, rng::Purpose::Generic);
  const Matrix A = support::normal_matrix(rng, 4, 3), B = support::normal_matrix(rng, 4, 3);
  const Matrix G = gram(A, B, 0.7);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 4; ++j)
      EXPECT_NEAR(G(i, j), rbf(A.row(i).transpose(), B.row(j).transpose(), 0.7), 1e-13 * G(i, j));
  EXPECT_THROW(gram(A, Matrix::Zero(2, 2), 1.0), Error);
}

TEST(MarginalLoglik, ScalarClosedForms) {
  // V = 1 + 1 (+ nugget)
  EXPECT_NEAR(marginal_loglik(Vector::Zero(1), Eigen::VectorXi::Zero(1), Matrix::Zero(1, 2),
                              {1.0, 1.0, 1.0}),
              -1.2655121, 1e-7);
  EXPECT_NEAR(marginal_loglik(Vector::Zero(1), Eigen::VectorXi::Ones(1), Matrix::Zero(1, 2),
                              {3.3, 1.0, 1.0}),
              -0.5 * std::log(6.0 * std::numbers::pi), 1e-7);
}

TEST(MarginalLoglik, MatchesDenseOracle) {
  rng::Stream rng(4, 0, rng::Purpose::Generic);
  for (int trial = 0; trial < 100; ++trial) {
    const Dataset d = random_region(rng, 8, 3);
    const RegionHyperParams hp{rng.uniform(0.1, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5)};
    EXPECT_NEAR(marginal_loglik(d.y, d.t, d.X, hp), dense_loglik(d, hp), 1e-9);
  }
}

TEST(MarginalLoglik, PermutationInvariant) {
  rng::Stream rng(5, 0, rng::Purpose::Generic);
  const Dataset d = random_region(rng, 15, 2);
  IndexVector perm(15);
  for (Eigen::Index i = 0; i < 15; ++i) perm[static_cast<std::size_t>(i)] = (7 * i) % 15;
  const Dataset q = d.rows(perm);
  const RegionHyperParams hp{0.8, 1.7, 2.1};
  EXPECT_NEAR(marginal_loglik(d.y, d.t, d.X, hp), marginal_loglik(q.y, q.t, q.X, hp), 1e-10);
}

TEST(OutcomeCovariance, PositiveDefinite) {
  rng::Stream rng(6, 0, rng::Purpose::Generic);
  for (int trial = 0; trial < 30; ++trial) {
    const Dataset d = random_region(rng, 20, 2);
    const RegionHyperParams hp{rng.uniform(0.1, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5)};
    EXPECT_GT(support::min_eigenvalue(outcome_covariance(d.X, d.t_real(), hp)), 0.0);
  }
}

TEST(TuningGrid, Values) {
  EXPECT_EQ((TuningGrid{0.1, 5.0, 0.2}.values().size()), 25u);
  EXPECT_EQ((TuningGrid{1.0, 1.0, 0.5}.values()), std::vector<double>{1.0});
  EXPECT_THROW((TuningGrid{0.0, 1.0, 0.1}.values()), Error);
  EXPECT_THROW((TuningGrid{1.0, 0.5, 0.1}.values()), Error);
  EXPECT_EQ(HyperGrid::simulation_default().size(), 25u * 25u * 25u);
}

TEST(GridSearch, SinglePointGrid) {
  rng::Stream rng(7, 0, rng::Purpose::Generic);
  const Dataset d = random_region(rng, 10, 2);
  const auto hp = grid_search_region(d, HyperGrid::uniform({0.7, 0.7, 1.0}));
  EXPECT_EQ(hp, (RegionHyperParams{0.7, 0.7, 0.7}));
}

TEST(GridSearch, AttainsExhaustiveMaximum) {
  rng::Stream rng(8, 0, rng::Purpose::Generic);
  const HyperGrid grid{{0.1, 3.0, 0.4}, {0.2, 2.5, 0.3}, {0.1, 4.0, 0.5}};
  for (int trial = 0; trial < 12; ++trial) {
    const Dataset d = random_region(rng, 5 + static_cast<Eigen::Index>(rng.index(25)), 2);
    double best = -std::numeric_limits<double>::infinity();
    RegionHyperParams arg;
    for (double a : grid.gamma_theta.values())
      for (double b : grid.gamma_f.values())
        for (double c : grid.s_eps.values()) {
          const double v = dense_loglik(d, {a, b, c});
          if (v > best + 1e-12) {
            best = v;
            arg = {a, b, c};
          }
        }
    for (auto mode : {GridSearchMode::Exhaustive, GridSearchMode::Spectral}) {
      GridSearchOptions opts;
      opts.mode = mode;
      const auto hp = grid_search_region(d, grid, opts);
      EXPECT_NEAR(marginal_loglik(d.y, d.t, d.X, hp), best, 1e-9);
      EXPECT_EQ(hp, arg);
    }
  }
}

TEST(GridSearch, TiesGoToSmallestTriple) {
  // With t = 0 the treatment kernel never enters V, so every gamma_theta ties;
  // with a single point the baseline kernel is constant too.
  const Dataset d = scalar(0.4, 0);
  const HyperGrid grid{{0.5, 2.0, 0.5}, {0.3, 1.5, 0.4}, {0.1, 3.0, 0.3}};
  for (auto mode : {GridSearchMode::Exhaustive, GridSearchMode::Spectral}) {
    GridSearchOptions opts;
    opts.mode = mode;
    const auto hp = grid_search_region(d, grid, opts);
    EXPECT_EQ(hp.gamma_theta, 0.5);
    EXPECT_EQ(hp.gamma_f, 0.3);
  }
}

TEST(TuneAll, SingleRegionEqualsDirectSearch) {
  rng::Stream rng(9, 0, rng::Purpose::Generic);
  const Dataset d = random_region(rng, 20, 2);
  Partition p;
  p.K = 1;
  p.assignment.assign(20, 1);
  const HyperGrid grid = HyperGrid::uniform({0.1, 2.0, 0.3});
  const auto all = tune_all(d, p, grid);
  ASSERT_EQ(all.size(), 1u);
  EXPECT_EQ(all[0], grid_search_region(d, grid));
}

TEST(TuneAll, WorkerCountDoesNotMatter) {
  rng::Stream rng(10, 0, rng::Purpose::Generic);
  const Dataset d = random_region(rng, 45, 2);
  Vector s(45);
  for (Eigen::Index i = 0; i < 45; ++i) s(i) = rng.uniform();
  const Partition p = assign_regions(s, quantile_cutoffs(s, 3));
  const HyperGrid grid = HyperGrid::uniform({0.1, 2.0, 0.3});
  const auto one = tune_all(d, p, grid, 1);
  const auto three = tune_all(d, p, grid, 3);
  EXPECT_EQ(one, three);
  for (int k = 1; k <= 3; ++k) EXPECT_EQ(one[k - 1], grid_search_region(d.rows(p.members(k)), grid));
}

TEST(TuneAll, ErrorsNameTheRegion) {
  Dataset d = scalar(0.0, 0);
  Partition p;
  p.K = 2;
  p.assignment = {1};
  try {
    tune_all(d, p, HyperGrid::uniform({1.0, 1.0, 1.0}));
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyRegion);
    EXPECT_NE(std::string(e.what()).find("region 2"), std::string::npos);
  }
}
