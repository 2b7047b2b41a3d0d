#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ppk/data_model.hpp"
#include "ppk/error.hpp"
#include "ppk/gp_core.hpp"
#include "ppk/linalg.hpp"
#include "ppk/pseudo_gen.hpp"

namespace ppk {

/// Predictive distribution of the treatment effect at the test inputs.
struct PosteriorHTE {
  Vector mean;
  Matrix covariance;

  Vector sd() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

/// Everything a fit needs once tuning and pseudo-point generation are done.
struct PpkInputs {
  Dataset train;
  Partition partition;
  Matrix test_X;
  /// Region (1-based) of every test row.
  std::vector<int> test_region;
  /// Hyperparameters of region k at index k - 1.
  std::vector<RegionHyperParams> hyper;
  PseudoSet pseudo;
};

struct EngineOptions {
  /// Test hook: zero every theta/delta cross-covariance, which decouples the
  /// regions and turns the fit into independent local GPs.
  bool zero_delta_cross = false;
};

/*
 * Region-aligned ordering. Training rows are grouped by region (region 1
 * first, original order inside a region); the same holds for test rows.
 * Boundary b (1-based) owns rows (b - 1) B .. b B - 1 of delta.
 */
struct Layout {
  int K = 1;
  int B = 0;
  IndexVector train_order;
  std::vector<Eigen::Index> train_offsets;
  IndexVector test_order;
  std::vector<Eigen::Index> test_offsets;

  Eigen::Index n() const { return train_offsets.back(); }
  Eigen::Index m() const { return test_offsets.back(); }
  Eigen::Index d() const { return static_cast<Eigen::Index>(K - 1) * B; }
  Eigen::Index n_k(int k) const { return train_offsets[k + 1] - train_offsets[k]; }
  Eigen::Index m_k(int k) const { return test_offsets[k + 1] - test_offsets[k]; }
  /// Offset of 0-based boundary b inside delta.
  Eigen::Index delta_offset(int b) const { return static_cast<Eigen::Index>(b) * B; }
};

namespace detail {

inline void group_by_region(const std::vector<int> &region, int K,
                            IndexVector &order,
                            std::vector<Eigen::Index> &offsets) {
  order.clear();
  offsets.assign(1, 0);
  for (int k = 1; k <= K; ++k) {
    for (std::size_t i = 0; i < region.size(); ++i) {
      if (region[i] == k) order.push_back(static_cast<Eigen::Index>(i));
    }
    offsets.push_back(static_cast<Eigen::Index>(order.size()));
  }
}

}  // namespace detail

inline void validate_inputs(const PpkInputs &in) {
  in.train.validate();
  const int K = in.partition.K;
  require(K >= 1, ErrorCode::InvalidK, "K must be at least 1");
  require(in.partition.assignment.size() == static_cast<std::size_t>(in.train.n()),
          ErrorCode::DimensionMismatch, "partition does not match training rows");
  require(in.test_X.cols() == in.train.p(), ErrorCode::DimensionMismatch,
          "test covariates have the wrong number of columns");
  require(in.test_region.size() == static_cast<std::size_t>(in.test_X.rows()),
          ErrorCode::DimensionMismatch, "test_region length");
  require(in.hyper.size() == static_cast<std::size_t>(K),
          ErrorCode::DimensionMismatch, "need one hyperparameter set per region");
  for (const auto &hp : in.hyper) hp.validate();
  for (int r : in.test_region) {
    require(r >= 1 && r <= K, ErrorCode::InvalidArgument, "test region out of range");
  }
  const auto sizes = in.partition.sizes();
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (sizes[k] == 0) {
      fail(ErrorCode::EmptyRegion, "region " + std::to_string(k + 1) + " has no training samples");
    }
  }
  if (K > 1) {
    require(in.pseudo.B >= 1 && in.pseudo.boundaries() == K - 1 &&
                in.pseudo.points.rows() == static_cast<Eigen::Index>(K - 1) * in.pseudo.B,
            ErrorCode::DimensionMismatch, "pseudo points must cover all K - 1 boundaries");
    require(in.pseudo.points.cols() == in.train.p(), ErrorCode::DimensionMismatch,
            "pseudo points have the wrong number of columns");
  }
}

inline Layout make_layout(const PpkInputs &in) {
  Layout layout;
  layout.K = in.partition.K;
  layout.B = layout.K > 1 ? in.pseudo.B : 0;
  detail::group_by_region(in.partition.assignment, layout.K, layout.train_order,
                          layout.train_offsets);
  detail::group_by_region(in.test_region, layout.K, layout.test_order,
                          layout.test_offsets);
  return layout;
}

/// Cov(delta_{k,l}(P), theta_j(X)) with delta_{k,l} = theta_k - theta_l:
/// +c_k when j = k, -c_l when j = l, zero otherwise. Regions are 1-based and
/// gamma_theta[r - 1] is the kernel of region r.
inline Matrix delta_cross_cov(const Eigen::Ref<const Matrix> &P, int k, int l,
                              int j, const Eigen::Ref<const Matrix> &X,
                              const std::vector<double> &gamma_theta) {
  if (j == k) return gram(P, X, gamma_theta[static_cast<std::size_t>(k - 1)]);
  if (j == l) return -gram(P, X, gamma_theta[static_cast<std::size_t>(l - 1)]);
  return Matrix::Zero(P.rows(), X.rows());
}

/// Cov(delta_{k,l}(P1), delta_{u,v}(P2)). On a chain of regions only three
/// non-zero cases occur: the same boundary (c_k + c_l), a shared middle region
/// l = u (-c_l) and k = v (-c_k).
inline Matrix delta_delta_cov(const Eigen::Ref<const Matrix> &P1, int k, int l,
                              const Eigen::Ref<const Matrix> &P2, int u, int v,
                              const std::vector<double> &gamma_theta) {
  auto c = [&](int r) { return gram(P1, P2, gamma_theta[static_cast<std::size_t>(r - 1)]); };
  Matrix out = Matrix::Zero(P1.rows(), P2.rows());
  if (k == u) out += c(k);
  if (k == v) out -= c(k);
  if (l == u) out -= c(l);
  if (l == v) out += c(l);
  return out;
}

/*
 * Block-sparse prior over (theta_n, theta_m, f_n, delta) in Layout order.
 *
 * Region blocks are stored separately because every theta and f block is
 * block diagonal across regions. Boundary b (0-based, between regions b and
 * b + 1) couples to two regions only:
 *
 *   lower[b] = Cov(theta_b(X_b),         delta_b) = +c_b(X_b, P_b)
 *   upper[b] = Cov(theta_{b+1}(X_{b+1}), delta_b) = -c_{b+1}(X_{b+1}, P_b)
 *
 * and Sigma_{delta,delta} is block tridiagonal with diagonal blocks
 * c_b + c_{b+1} (+ nugget) and sub-diagonal blocks
 * Cov(delta_{b+1}, delta_b) = -c_{b+1}(P_{b+1}, P_b).
 */
struct BlockPriorCovariance {
  Layout layout;
  std::vector<Matrix> theta_nn;
  std::vector<Matrix> theta_nm;
  std::vector<Matrix> theta_mm;
  std::vector<Matrix> f_nn;
  std::vector<Matrix> theta_n_delta_lower;
  std::vector<Matrix> theta_n_delta_upper;
  std::vector<Matrix> theta_m_delta_lower;
  std::vector<Matrix> theta_m_delta_upper;
  std::vector<Matrix> delta_diag;
  std::vector<Matrix> delta_sub;

  Matrix dense_theta_nn() const { return block_diagonal(theta_nn, layout.train_offsets, layout.train_offsets); }
  Matrix dense_theta_nm() const { return block_diagonal(theta_nm, layout.train_offsets, layout.test_offsets); }
  Matrix dense_theta_mm() const { return block_diagonal(theta_mm, layout.test_offsets, layout.test_offsets); }
  Matrix dense_f_nn() const { return block_diagonal(f_nn, layout.train_offsets, layout.train_offsets); }
  Matrix dense_theta_n_delta() const {
    return banded(theta_n_delta_lower, theta_n_delta_upper, layout.train_offsets);
  }
  Matrix dense_theta_m_delta() const {
    return banded(theta_m_delta_lower, theta_m_delta_upper, layout.test_offsets);
  }
  Matrix dense_delta_delta() const {
    const Eigen::Index d = layout.d();
    const Eigen::Index B = layout.B;
    Matrix out = Matrix::Zero(d, d);
    for (std::size_t b = 0; b < delta_diag.size(); ++b) {
      const auto off = static_cast<Eigen::Index>(b) * B;
      out.block(off, off, B, B) = delta_diag[b];
    }
    for (std::size_t b = 0; b < delta_sub.size(); ++b) {
      const auto off = static_cast<Eigen::Index>(b) * B;
      out.block(off + B, off, B, B) = delta_sub[b];
      out.block(off, off + B, B, B) = delta_sub[b].transpose();
    }
    return out;
  }

  /// Full covariance over (theta_n, theta_m, f_n, delta).
  Matrix dense() const {
    const Eigen::Index n = layout.n(), m = layout.m(), d = layout.d();
    Matrix out = Matrix::Zero(2 * n + m + d, 2 * n + m + d);
    const Eigen::Index om = n, of = n + m, od = 2 * n + m;
    const Matrix tnd = dense_theta_n_delta();
    const Matrix tmd = dense_theta_m_delta();
    const Matrix tnm = dense_theta_nm();
    out.block(0, 0, n, n) = dense_theta_nn();
    out.block(0, om, n, m) = tnm;
    out.block(om, 0, m, n) = tnm.transpose();
    out.block(om, om, m, m) = dense_theta_mm();
    out.block(of, of, n, n) = dense_f_nn();
    out.block(0, od, n, d) = tnd;
    out.block(od, 0, d, n) = tnd.transpose();
    out.block(om, od, m, d) = tmd;
    out.block(od, om, d, m) = tmd.transpose();
    out.block(od, od, d, d) = dense_delta_delta();
    return out;
  }

 private:
  static Matrix block_diagonal(const std::vector<Matrix> &blocks,
                               const std::vector<Eigen::Index> &rows,
                               const std::vector<Eigen::Index> &cols) {
    Matrix out = Matrix::Zero(rows.back(), cols.back());
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      out.block(rows[k], cols[k], blocks[k].rows(), blocks[k].cols()) = blocks[k];
    }
    return out;
  }

  Matrix banded(const std::vector<Matrix> &lower, const std::vector<Matrix> &upper,
                const std::vector<Eigen::Index> &rows) const {
    const Eigen::Index B = layout.B;
    Matrix out = Matrix::Zero(rows.back(), layout.d());
    for (std::size_t b = 0; b < lower.size(); ++b) {
      const auto col = static_cast<Eigen::Index>(b) * B;
      out.block(rows[b], col, lower[b].rows(), B) = lower[b];
      out.block(rows[b + 1], col, upper[b].rows(), B) = upper[b];
    }
    return out;
  }
};

/// Assembles the block prior with region-specific kernels: gamma_theta of
/// region k for every theta block of region k (and its side of each delta),
/// gamma_f for the f blocks. f is not coupled to anything.
inline BlockPriorCovariance build_prior(const PpkInputs &in,
                                        const EngineOptions &opts = {}) {
  validate_inputs(in);
  BlockPriorCovariance prior;
  prior.layout = make_layout(in);
  const Layout &L = prior.layout;
  const int K = L.K;
  std::vector<double> gamma_theta;
  for (const auto &hp : in.hyper) gamma_theta.push_back(hp.gamma_theta);

  std::vector<Matrix> Xn, Xm;
  for (int k = 0; k < K; ++k) {
    const IndexVector tr(L.train_order.begin() + L.train_offsets[k],
                         L.train_order.begin() + L.train_offsets[k + 1]);
    const IndexVector te(L.test_order.begin() + L.test_offsets[k],
                         L.test_order.begin() + L.test_offsets[k + 1]);
    Xn.push_back(linalg::take_rows(in.train.X, tr));
    Xm.push_back(linalg::take_rows(in.test_X, te));
    const auto &hp = in.hyper[static_cast<std::size_t>(k)];
    prior.theta_nn.push_back(jittered_gram(Xn[k], hp.gamma_theta));
    prior.theta_nm.push_back(gram(Xn[k], Xm[k], hp.gamma_theta));
    prior.theta_mm.push_back(jittered_gram(Xm[k], hp.gamma_theta));
    prior.f_nn.push_back(jittered_gram(Xn[k], hp.gamma_f));
  }
  for (int b = 1; b < K; ++b) {
    const Matrix P = in.pseudo.boundary_points(b);
    // delta_{b,b+1} against theta of regions b and b + 1.
    Matrix lower_n = delta_cross_cov(P, b, b + 1, b, Xn[b - 1], gamma_theta).transpose();
    Matrix upper_n = delta_cross_cov(P, b, b + 1, b + 1, Xn[b], gamma_theta).transpose();
    Matrix lower_m = delta_cross_cov(P, b, b + 1, b, Xm[b - 1], gamma_theta).transpose();
    Matrix upper_m = delta_cross_cov(P, b, b + 1, b + 1, Xm[b], gamma_theta).transpose();
    if (opts.zero_delta_cross) {
      lower_n.setZero();
      upper_n.setZero();
      lower_m.setZero();
      upper_m.setZero();
    }
    prior.theta_n_delta_lower.push_back(std::move(lower_n));
    prior.theta_n_delta_upper.push_back(std::move(upper_n));
    prior.theta_m_delta_lower.push_back(std::move(lower_m));
    prior.theta_m_delta_upper.push_back(std::move(upper_m));

    Matrix diag = delta_delta_cov(P, b, b + 1, P, b, b + 1, gamma_theta);
    // Each side carries its own nugget.
    diag.diagonal().array() += 2.0 * linalg::kBaseJitter;
    prior.delta_diag.push_back(std::move(diag));
    if (b + 1 < K) {
      const Matrix next = in.pseudo.boundary_points(b + 1);
      prior.delta_sub.push_back(
          delta_delta_cov(next, b + 1, b + 2, P, b, b + 1, gamma_theta));
    }
  }
  return prior;
}

/// Dense precision blocks of the prior over (theta_n, theta_m, f_n, delta).
struct PrecisionBlocks {
  Matrix theta_nn, theta_nm, theta_mm, theta_n_delta, theta_m_delta, f_nn,
      delta_delta;

  Matrix dense() const {
    const Eigen::Index n = theta_nn.rows(), m = theta_mm.rows(),
                       d = delta_delta.rows();
    Matrix out = Matrix::Zero(2 * n + m + d, 2 * n + m + d);
    const Eigen::Index om = n, of = n + m, od = 2 * n + m;
    out.block(0, 0, n, n) = theta_nn;
    out.block(0, om, n, m) = theta_nm;
    out.block(om, 0, m, n) = theta_nm.transpose();
    out.block(om, om, m, m) = theta_mm;
    out.block(of, of, n, n) = f_nn;
    out.block(0, od, n, d) = theta_n_delta;
    out.block(od, 0, d, n) = theta_n_delta.transpose();
    out.block(om, od, m, d) = theta_m_delta;
    out.block(od, om, d, m) = theta_m_delta.transpose();
    out.block(od, od, d, d) = delta_delta;
    return out;
  }
};

namespace detail {

// Inverse of the symmetric 2x2 block matrix [[A, B], [B^T, D]] by the Schur
// complement of D. Returns the blocks (top-left, top-right, bottom-right).
struct SymmetricBlockInverse {
  Matrix top_left, top_right, bottom_right;
};

inline SymmetricBlockInverse invert_two_by_two(const Matrix &A, const Matrix &B,
                                               const Matrix &D,
                                               const std::string &what) {
  const Matrix D_inv = linalg::spd_inverse(D, what + " (D)");
  const Matrix BDi = B * D_inv;
  const Matrix schur = A - BDi * B.transpose();
  SymmetricBlockInverse out;
  out.top_left = linalg::spd_inverse(schur, what + " (Schur complement)");
  out.top_right = -out.top_left * BDi;
  out.bottom_right = linalg::symmetrize(D_inv + BDi.transpose() * out.top_left * BDi);
  return out;
}

}  // namespace detail

/*
 * Prior precision by Schur complements: first on the delta block,
 *
 *   M = A - B Sigma_dd^{-1} C,   A over (theta_n, theta_m, f_n),
 *
 * whose f block is decoupled, so M^{-1} splits into Sigma_ff^{-1} and the
 * inverse of the 2x2 theta part (a second Schur complement on theta_m). The
 * delta rows follow as -M^{-1} B Sigma_dd^{-1} and
 * Sigma_dd^{-1} - Sigma_dd^{-1} (Sigma_d,theta Delta_theta,d + ...).
 */
inline PrecisionBlocks prior_precision(const BlockPriorCovariance &prior) {
  const Matrix S_nn = prior.dense_theta_nn();
  const Matrix S_nm = prior.dense_theta_nm();
  const Matrix S_mm = prior.dense_theta_mm();
  const Matrix S_nd = prior.dense_theta_n_delta();
  const Matrix S_md = prior.dense_theta_m_delta();
  const Matrix S_dd = prior.dense_delta_delta();

  PrecisionBlocks out;
  out.f_nn = linalg::spd_inverse(prior.dense_f_nn(), "Sigma_ff");

  const Matrix S_dd_inv = linalg::spd_inverse(S_dd, "Sigma_delta_delta");
  const Matrix nd_ddi = S_nd * S_dd_inv;
  const Matrix md_ddi = S_md * S_dd_inv;
  const Matrix A = S_nn - nd_ddi * S_nd.transpose();
  const Matrix Bm = S_nm - nd_ddi * S_md.transpose();
  const Matrix D = S_mm - md_ddi * S_md.transpose();
  const auto theta = detail::invert_two_by_two(A, Bm, D, "theta Schur block");
  out.theta_nn = theta.top_left;
  out.theta_nm = theta.top_right;
  out.theta_mm = theta.bottom_right;

  out.theta_n_delta = -(out.theta_nn * S_nd + out.theta_nm * S_md) * S_dd_inv;
  out.theta_m_delta = -(out.theta_nm.transpose() * S_nd + out.theta_mm * S_md) * S_dd_inv;
  out.delta_delta = linalg::symmetrize(
      S_dd_inv - S_dd_inv * (S_nd.transpose() * out.theta_n_delta +
                             S_md.transpose() * out.theta_m_delta));
  return out;
}

/// Precision of the joint (theta_n, theta_m, f_n, delta, y_n) distribution:
/// prior precision plus the likelihood terms s T^2, s T, -s T, s I, -s I with
/// each sample's own region noise precision s.
struct JointPrecision {
  PrecisionBlocks prior;
  Vector t;
  Vector s;

  Matrix theta_theta() const {
    Matrix out = prior.theta_nn;
    out.diagonal() += s.cwiseProduct(t).cwiseProduct(t);
    return out;
  }
  Matrix theta_f() const { return s.cwiseProduct(t).asDiagonal(); }
  Matrix theta_y() const { return (-s.cwiseProduct(t)).asDiagonal(); }
  Matrix f_f() const {
    Matrix out = prior.f_nn;
    out.diagonal() += s;
    return out;
  }
  Matrix f_y() const { return (-s).asDiagonal(); }
  Matrix y_y() const { return s.asDiagonal(); }

  Matrix dense() const {
    const Eigen::Index n = t.size(), m = prior.theta_mm.rows(),
                       d = prior.delta_delta.rows();
    Matrix out = Matrix::Zero(3 * n + m + d, 3 * n + m + d);
    out.topLeftCorner(2 * n + m + d, 2 * n + m + d) = prior.dense();
    const Eigen::Index of = n + m, oy = 2 * n + m + d;
    out.block(0, 0, n, n) = theta_theta();
    out.block(0, of, n, n) = theta_f();
    out.block(of, 0, n, n) = theta_f();
    out.block(of, of, n, n) = f_f();
    out.block(0, oy, n, n) = theta_y();
    out.block(oy, 0, n, n) = theta_y();
    out.block(of, oy, n, n) = f_y();
    out.block(oy, of, n, n) = f_y();
    out.block(oy, oy, n, n) = y_y();
    return out;
  }
};

/// t and s in Layout order for the training rows.
inline JointPrecision joint_precision(PrecisionBlocks prec,
                                      const Eigen::Ref<const Vector> &t_n,
                                      const Eigen::Ref<const Vector> &s_n) {
  require(t_n.size() == prec.theta_nn.rows() && s_n.size() == t_n.size(),
          ErrorCode::DimensionMismatch, "joint_precision: t / s length");
  require((s_n.array() > 0.0).all(), ErrorCode::InvalidArgument,
          "noise precision must be positive");
  return {std::move(prec), t_n, s_n};
}

/// Covariance blocks of (theta_n, theta_m, f_n, delta, y_n). In lazy form
/// only the theta_m rows and the (delta, y_n) square are present.
struct JointCovariance {
  bool lazy = false;
  Matrix theta_theta, theta_m, theta_delta, theta_y;
  Matrix m_m, m_delta, m_y;
  Matrix f_f, f_y;
  Matrix delta_delta, delta_y;
  Matrix y_y;

  /// Full joint covariance; requires the non-lazy form.
  Matrix dense() const {
    require(!lazy, ErrorCode::InvalidArgument, "dense() needs the full joint covariance");
    const Eigen::Index n = theta_theta.rows(), m = m_m.rows(), d = delta_delta.rows();
    Matrix out = Matrix::Zero(3 * n + m + d, 3 * n + m + d);
    const Eigen::Index om = n, of = n + m, od = 2 * n + m, oy = 2 * n + m + d;
    auto put = [&](Eigen::Index r, Eigen::Index c, const Matrix &blk) {
      out.block(r, c, blk.rows(), blk.cols()) = blk;
      if (r != c) out.block(c, r, blk.cols(), blk.rows()) = blk.transpose();
    };
    put(0, 0, theta_theta);
    put(0, om, theta_m);
    put(0, od, theta_delta);
    put(0, oy, theta_y);
    put(om, om, m_m);
    put(om, od, m_delta);
    put(om, oy, m_y);
    put(of, of, f_f);
    put(of, oy, f_y);
    put(od, od, delta_delta);
    put(od, oy, delta_y);
    put(oy, oy, y_y);
    return out;
  }
};

/*
 * Joint covariance from the joint precision by nested Schur complements:
 * peel y_n (its block is diagonal), which leaves the prior precision; peel
 * delta; split off f_n (decoupled); invert the 2x2 theta part; then recover
 * the delta and y_n rows.
 */
inline JointCovariance joint_covariance(const JointPrecision &jp) {
  const Vector s_inv = jp.s.cwiseInverse();
  const Matrix ty = jp.theta_y();
  const Matrix fy = jp.f_y();

  // M = A - B D^{-1} C with D = s I; the theta/f coupling cancels exactly.
  const Matrix M_tt = jp.theta_theta() - ty * s_inv.asDiagonal() * ty.transpose();
  const Matrix M_ff = jp.f_f() - fy * s_inv.asDiagonal() * fy.transpose();
  const Matrix &M_tm = jp.prior.theta_nm;
  const Matrix &M_mm = jp.prior.theta_mm;
  const Matrix &M_td = jp.prior.theta_n_delta;
  const Matrix &M_md = jp.prior.theta_m_delta;
  const Matrix &M_dd = jp.prior.delta_delta;

  JointCovariance out;
  const Matrix dd_inv = linalg::spd_inverse(M_dd, "Delta_delta_delta");
  const Matrix td_ddi = M_td * dd_inv;
  const Matrix md_ddi = M_md * dd_inv;
  const auto theta = detail::invert_two_by_two(
      M_tt - td_ddi * M_td.transpose(), M_tm - td_ddi * M_md.transpose(),
      M_mm - md_ddi * M_md.transpose(), "joint theta block");
  out.theta_theta = theta.top_left;
  out.theta_m = theta.top_right;
  out.m_m = theta.bottom_right;
  out.f_f = linalg::spd_inverse(M_ff, "Delta_ff");

  out.theta_delta = -(out.theta_theta * M_td + out.theta_m * M_md) * dd_inv;
  out.m_delta = -(out.theta_m.transpose() * M_td + out.m_m * M_md) * dd_inv;
  out.delta_delta = linalg::symmetrize(
      dd_inv - dd_inv * (M_td.transpose() * out.theta_delta +
                         M_md.transpose() * out.m_delta));

  // y_n column: -M^{-1} B D^{-1} with B = (theta_y, 0, f_y, 0).
  out.theta_y = -(out.theta_theta * ty) * s_inv.asDiagonal();
  out.m_y = -(out.theta_m.transpose() * ty) * s_inv.asDiagonal();
  out.f_y = -(out.f_f * fy) * s_inv.asDiagonal();
  out.delta_y = -(out.theta_delta.transpose() * ty) * s_inv.asDiagonal();
  Matrix yy = -(s_inv.asDiagonal() * (ty.transpose() * out.theta_y + fy.transpose() * out.f_y));
  yy.diagonal() += s_inv;
  out.y_y = linalg::symmetrize(yy);
  return out;
}

/// theta_m rows and the (delta, y_n) square of the joint covariance read off
/// the block prior directly: after y_n is peeled the remaining precision is
/// the prior's, so Sigma_hat over the latents is the prior covariance and
/// Sigma_hat_{., y} = Sigma_{., theta_n} T + Sigma_{., f_n}.
inline JointCovariance joint_covariance_lazy(const BlockPriorCovariance &prior,
                                             const Eigen::Ref<const Vector> &t_n,
                                             const Eigen::Ref<const Vector> &s_n) {
  JointCovariance out;
  out.lazy = true;
  const Matrix tnm = prior.dense_theta_nm();
  const Matrix tnd = prior.dense_theta_n_delta();
  out.m_m = prior.dense_theta_mm();
  out.m_delta = prior.dense_theta_m_delta();
  out.m_y = tnm.transpose() * t_n.asDiagonal();
  out.delta_delta = prior.dense_delta_delta();
  out.delta_y = tnd.transpose() * t_n.asDiagonal();
  Matrix yy = t_n.asDiagonal() * prior.dense_theta_nn() * t_n.asDiagonal();
  yy += prior.dense_f_nn();
  yy.diagonal() += s_n.cwiseInverse();
  out.y_y = std::move(yy);
  return out;
}

enum class PosteriorRoute {
  /// Block-sparse Schur algebra on the prior; never forms an n x n matrix.
  Structured,
  /// Dense prior precision -> joint precision -> joint covariance -> Gaussian
  /// conditioning. O((n + m + d)^3); meant for small problems and tests.
  PrecisionRecipe,
};

namespace detail {

inline Vector layout_values(const Layout &L, const Eigen::Ref<const Vector> &v) {
  return linalg::take(v, L.train_order);
}

inline Vector noise_precision(const PpkInputs &in, const Layout &L) {
  Vector s(L.n());
  for (int k = 0; k < L.K; ++k) {
    s.segment(L.train_offsets[k], L.n_k(k))
        .setConstant(in.hyper[static_cast<std::size_t>(k)].s_eps);
  }
  return s;
}

inline PosteriorHTE to_original_order(const Layout &L, const Vector &mean,
                                      const Matrix &cov) {
  PosteriorHTE out;
  const Eigen::Index m = L.m();
  out.mean.resize(m);
  out.covariance.resize(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    out.mean(L.test_order[a]) = mean(a);
    for (Eigen::Index b = 0; b < m; ++b) {
      out.covariance(L.test_order[a], L.test_order[b]) = cov(a, b);
    }
  }
  out.covariance = linalg::symmetrize(out.covariance);
  return out;
}

/// Gaussian conditioning of theta_m on D = (delta = 0, y_n).
inline PosteriorHTE condition_dense(const JointCovariance &jc,
                                    const Eigen::Ref<const Vector> &y_layout,
                                    const Layout &L) {
  const Eigen::Index n = y_layout.size(), m = jc.m_m.rows(), d = jc.delta_delta.rows();
  Matrix S_DD(d + n, d + n);
  S_DD.topLeftCorner(d, d) = jc.delta_delta;
  S_DD.topRightCorner(d, n) = jc.delta_y;
  S_DD.bottomLeftCorner(n, d) = jc.delta_y.transpose();
  S_DD.bottomRightCorner(n, n) = jc.y_y;
  Matrix S_mD(m, d + n);
  S_mD.leftCols(d) = jc.m_delta;
  S_mD.rightCols(n) = jc.m_y;
  Vector D = Vector::Zero(d + n);
  D.tail(n) = y_layout;
  const linalg::Cholesky chol(S_DD, "Sigma_hat_DD");
  const Matrix V = chol.solve_lower(S_mD.transpose());
  const Vector mean = V.transpose() * chol.solve_lower(D);
  const Matrix cov = jc.m_m - V.transpose() * V;
  return to_original_order(L, mean, cov);
}

inline PosteriorHTE posterior_structured(const PpkInputs &in,
                                         const BlockPriorCovariance &prior) {
  const Layout &L = prior.layout;
  const int K = L.K;
  const Eigen::Index B = L.B;
  const Eigen::Index m = L.m();
  const Vector t = layout_values(L, in.train.t_real());
  const Vector y = layout_values(L, in.train.y);

  auto seg = [&](const Vector &v, int k) {
    return v.segment(L.train_offsets[k], L.n_k(k));
  };

  // Region outcome covariances R_k and their factors.
  std::vector<linalg::Cholesky> R(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const Vector tk = seg(t, k);
    Matrix Rk = tk.asDiagonal() * prior.theta_nn[k] * tk.asDiagonal();
    Rk += prior.f_nn[k];
    Rk.diagonal().array() += 1.0 / in.hyper[static_cast<std::size_t>(k)].s_eps;
    R[k].compute(Rk, "outcome covariance of region " + std::to_string(k + 1));
  }

  // Q_k^T = Cov(y_k, delta) restricted to the boundaries touching region k:
  // boundary k - 1 (region k is its upper side) and boundary k (lower side).
  // W_k = L_k^{-1} Q_k^T.
  struct RegionCoupling {
    Matrix W_up, W_low;  // n_k x B or empty
  };
  std::vector<RegionCoupling> W(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const Vector tk = seg(t, k);
    if (k > 0) W[k].W_up = R[k].solve_lower(tk.asDiagonal() * prior.theta_n_delta_upper[k - 1]);
    if (k + 1 < K) W[k].W_low = R[k].solve_lower(tk.asDiagonal() * prior.theta_n_delta_lower[k]);
  }

  // Schur complement of the outcome block: Var(delta | y), block tridiagonal.
  std::vector<Matrix> diag(prior.delta_diag);
  std::vector<Matrix> sub(prior.delta_sub);
  for (int k = 0; k < K; ++k) {
    if (k > 0) diag[k - 1].noalias() -= W[k].W_up.transpose() * W[k].W_up;
    if (k + 1 < K) diag[k].noalias() -= W[k].W_low.transpose() * W[k].W_low;
    if (k > 0 && k + 1 < K) sub[k - 1].noalias() -= W[k].W_low.transpose() * W[k].W_up;
  }
  for (auto &blk : diag) blk = linalg::symmetrize(blk);
  const linalg::BlockTridiagonalCholesky schur(std::move(diag), std::move(sub));

  // w = S^{-1} Q R^{-1} y.
  std::vector<Vector> alpha(static_cast<std::size_t>(K));  // L_k^{-1} y_k
  Vector r = Vector::Zero(L.d());
  for (int k = 0; k < K; ++k) {
    alpha[k] = R[k].solve_lower(seg(y, k));
    if (k > 0) r.segment((k - 1) * B, B) += W[k].W_up.transpose() * alpha[k];
    if (k + 1 < K) r.segment(k * B, B) += W[k].W_low.transpose() * alpha[k];
  }
  const Vector w = L.d() > 0 ? Vector(schur.solve(r)) : Vector(0);

  Vector mean = Vector::Zero(m);
  Matrix cov = Matrix::Zero(m, m);
  Matrix H = Matrix::Zero(m, L.d());
  for (int k = 0; k < K; ++k) {
    const Eigen::Index mo = L.test_offsets[k];
    const Eigen::Index mk = L.m_k(k);
    if (mk == 0) continue;
    const Vector tk = seg(t, k);
    // V_k = L_k^{-1} Cov(y_k, theta_m_k).
    const Matrix V = R[k].solve_lower(tk.asDiagonal() * prior.theta_nm[k]);
    // L_k^{-1} (y_k + Q_k^T w)
    Vector z = alpha[k];
    if (k > 0) z += W[k].W_up * w.segment((k - 1) * B, B);
    if (k + 1 < K) z += W[k].W_low * w.segment(k * B, B);
    Vector mk_mean = V.transpose() * z;
    if (k > 0) {
      const Matrix &G = prior.theta_m_delta_upper[k - 1];
      mk_mean -= G * w.segment((k - 1) * B, B);
      H.block(mo, (k - 1) * B, mk, B) = G - V.transpose() * W[k].W_up;
    }
    if (k + 1 < K) {
      const Matrix &G = prior.theta_m_delta_lower[k];
      mk_mean -= G * w.segment(k * B, B);
      H.block(mo, k * B, mk, B) = G - V.transpose() * W[k].W_low;
    }
    mean.segment(mo, mk) = mk_mean;
    cov.block(mo, mo, mk, mk) = prior.theta_mm[k] - V.transpose() * V;
  }
  if (L.d() > 0 && m > 0) {
    const Matrix U = schur.solve_lower(H.transpose());
    cov.noalias() -= U.transpose() * U;
  }
  return to_original_order(L, mean, cov);
}

}  // namespace detail

/// Posterior of theta at the test inputs given y_n and delta = 0.
inline PosteriorHTE posterior_hte(const PpkInputs &in,
                                  PosteriorRoute route = PosteriorRoute::Structured,
                                  const EngineOptions &opts = {}) {
  const BlockPriorCovariance prior = build_prior(in, opts);
  if (route == PosteriorRoute::Structured) {
    return detail::posterior_structured(in, prior);
  }
  const Layout &L = prior.layout;
  const Vector t = detail::layout_values(L, in.train.t_real());
  const Vector y = detail::layout_values(L, in.train.y);
  const JointCovariance jc =
      joint_covariance(joint_precision(prior_precision(prior), t, detail::noise_precision(in, L)));
  return detail::condition_dense(jc, y, L);
}

struct OracleOptions {
  /// Largest joint dimension 3n + m + B(K - 1) the oracle accepts.
  Eigen::Index cap = 500;
};

/*
 * Reference posterior by textbook Gaussian conditioning on an explicitly
 * assembled joint covariance of (theta_n, theta_m, f_n, delta, y_n), in the
 * caller's row order. Every entry comes from a pointwise covariance rule:
 * each variable is a signed sum of "atoms" (process, region, location,
 * instance), two atoms covary through the region kernel when they belong to
 * the same process and region, and identical instances add the nugget.
 */
inline PosteriorHTE dense_oracle_posterior(const PpkInputs &in,
                                           const OracleOptions &opts = {}) {
  validate_inputs(in);
  const Eigen::Index n = in.train.n();
  const Eigen::Index m = in.test_X.rows();
  const int K = in.partition.K;
  const int B = K > 1 ? in.pseudo.B : 0;
  const Eigen::Index d = static_cast<Eigen::Index>(K - 1) * B;
  const Eigen::Index total = 3 * n + m + d;
  if (total > opts.cap) {
    fail(ErrorCode::CapExceeded, "joint dimension " + std::to_string(total) +
                                     " exceeds the oracle cap " + std::to_string(opts.cap));
  }

  enum class Process { Theta, F };
  struct Atom {
    Process process;
    int region;
    const double *x;
    long instance;
    double sign;
  };
  struct Variable {
    std::vector<Atom> atoms;
    double noise = 0.0;
  };
  const Eigen::Index p = in.train.p();
  const Matrix Xtr = in.train.X.transpose();  // column-major rows as columns
  const Matrix Xte = in.test_X.transpose();
  const Matrix Xps = in.pseudo.points.transpose();
  auto col = [&](const Matrix &M, Eigen::Index i) { return M.data() + i * p; };

  std::vector<Variable> vars;
  vars.reserve(static_cast<std::size_t>(total));
  long instance = 0;
  std::vector<long> theta_train_instance(static_cast<std::size_t>(n));
  std::vector<long> f_train_instance(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = in.partition.assignment[static_cast<std::size_t>(i)];
    theta_train_instance[i] = instance;
    vars.push_back({{{Process::Theta, k, col(Xtr, i), instance++, 1.0}}});
  }
  for (Eigen::Index j = 0; j < m; ++j) {
    const int k = in.test_region[static_cast<std::size_t>(j)];
    vars.push_back({{{Process::Theta, k, col(Xte, j), instance++, 1.0}}});
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = in.partition.assignment[static_cast<std::size_t>(i)];
    f_train_instance[i] = instance;
    vars.push_back({{{Process::F, k, col(Xtr, i), instance++, 1.0}}});
  }
  for (Eigen::Index r = 0; r < d; ++r) {
    const int b = in.pseudo.boundary_index[static_cast<std::size_t>(r)];
    // delta_{b,b+1}(x) = theta_b(x) - theta_{b+1}(x); each side is its own
    // instance of its process.
    Variable v;
    v.atoms.push_back({Process::Theta, b, col(Xps, r), instance++, 1.0});
    v.atoms.push_back({Process::Theta, b + 1, col(Xps, r), instance++, -1.0});
    vars.push_back(std::move(v));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = in.partition.assignment[static_cast<std::size_t>(i)];
    Variable v;
    v.atoms.push_back({Process::Theta, k, col(Xtr, i), theta_train_instance[i],
                       static_cast<double>(in.train.t(i))});
    v.atoms.push_back({Process::F, k, col(Xtr, i), f_train_instance[i], 1.0});
    v.noise = 1.0 / in.hyper[static_cast<std::size_t>(k - 1)].s_eps;
    vars.push_back(std::move(v));
  }

  auto atom_cov = [&](const Atom &a, const Atom &b) {
    if (a.process != b.process || a.region != b.region) return 0.0;
    const auto &hp = in.hyper[static_cast<std::size_t>(a.region - 1)];
    const double gamma = a.process == Process::Theta ? hp.gamma_theta : hp.gamma_f;
    double sq = 0.0;
    for (Eigen::Index c = 0; c < p; ++c) {
      const double diff = a.x[c] - b.x[c];
      sq += diff * diff;
    }
    double value = std::exp(-gamma * sq);
    if (a.instance == b.instance) value += linalg::kBaseJitter;
    return a.sign * b.sign * value;
  };

  Matrix joint(total, total);
  for (Eigen::Index a = 0; a < total; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      double value = 0.0;
      for (const auto &x : vars[a].atoms) {
        for (const auto &z : vars[b].atoms) value += atom_cov(x, z);
      }
      if (a == b) value += vars[a].noise;
      joint(a, b) = value;
      joint(b, a) = value;
    }
  }

  IndexVector m_idx, D_idx;
  for (Eigen::Index j = 0; j < m; ++j) m_idx.push_back(n + j);
  for (Eigen::Index r = 0; r < d; ++r) D_idx.push_back(2 * n + m + r);
  for (Eigen::Index i = 0; i < n; ++i) D_idx.push_back(2 * n + m + d + i);
  auto sub = [&](const IndexVector &rows, const IndexVector &cols) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t a = 0; a < rows.size(); ++a) {
      for (std::size_t b = 0; b < cols.size(); ++b) out(a, b) = joint(rows[a], cols[b]);
    }
    return out;
  };
  Vector D = Vector::Zero(d + n);
  D.tail(n) = in.train.y;

  const Eigen::LLT<Matrix> llt(sub(D_idx, D_idx));
  if (llt.info() != Eigen::Success) {
    fail(ErrorCode::NotPositiveDefinite, "oracle: Sigma_DD is not positive definite");
  }
  const Matrix cross = sub(m_idx, D_idx);
  PosteriorHTE out;
  out.mean = cross * llt.solve(D);
  out.covariance = linalg::symmetrize(sub(m_idx, m_idx) - cross * llt.solve(cross.transpose()));
  return out;
}

}  // namespace ppk
