#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "ppk/metrics.hpp"
#include "ppk/parallel.hpp"
#include "ppk/pipeline.hpp"
#include "ppk/synth_dgp.hpp"

namespace ppk {

enum class Method { Ppk, Local, Global };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::Ppk: return "ppk";
    case Method::Local: return "local";
    case Method::Global: return "global";
  }
  return "unknown";
}

inline Method parse_method(const std::string &name) {
  if (name == "ppk") return Method::Ppk;
  if (name == "local" || name == "local_gp") return Method::Local;
  if (name == "global" || name == "global_gp") return Method::Global;
  fail(ErrorCode::InvalidArgument, "unknown method '" + name + "'");
}

struct RunConfig {
  synth::Setup setup = synth::Setup::A;
  Eigen::Index n = 500;
  Eigen::Index test_m = 500;
  int K = 5;
  int B = 20;
  HyperGrid grid = HyperGrid::simulation_default();
  int replications = 100;
  std::uint64_t seed = 1;
  std::vector<Method> methods{Method::Ppk, Method::Local, Method::Global};
  /// Empty means quantile cutoffs; otherwise K = fixed_cutoffs.size() + 1.
  std::vector<double> fixed_cutoffs;
  double margin = 0.01;
  double level = 0.95;
  double noise_sd = 1.0;
  std::size_t min_region_size = 5;
  std::size_t workers = 1;
  GridSearchOptions search;

  void validate() const {
    require(n >= 1 && test_m >= 1, ErrorCode::InvalidArgument, "n and test_m must be positive");
    require(K >= 1, ErrorCode::InvalidK, "K must be at least 1");
    require(B >= 1, ErrorCode::InvalidArgument, "B must be at least 1");
    require(replications >= 1, ErrorCode::InvalidArgument, "replications must be positive");
    require(!methods.empty(), ErrorCode::InvalidArgument, "no methods requested");
    require(margin > 0.0, ErrorCode::InvalidArgument, "margin must be positive");
    require(level > 0.0 && level < 1.0, ErrorCode::InvalidArgument, "level must lie in (0, 1)");
    grid.gamma_theta.validate();
    grid.gamma_f.validate();
    grid.s_eps.validate();
    validate_cutoffs(fixed_cutoffs);
    require(fixed_cutoffs.empty() || static_cast<int>(fixed_cutoffs.size()) + 1 == K,
            ErrorCode::InvalidK, "fixed cutoffs imply K = " +
                                     std::to_string(fixed_cutoffs.size() + 1));
  }

  FitConfig fit_config(std::uint64_t rep_seed) const {
    FitConfig f;
    f.K = K;
    f.B = B;
    f.seed = rep_seed;
    f.grid = grid;
    f.fixed_cutoffs = fixed_cutoffs;
    f.min_region_size = min_region_size;
    f.search = search;
    return f;
  }
};

struct BoundaryBiasSummary {
  double cutoff = 0.0;
  /// Mean over replications with qualifying points of the per-replication
  /// signed bias, and of its absolute value.
  double bias = 0.0;
  double mean_abs_bias = 0.0;
  std::size_t replications = 0;
  bool empty = true;
};

struct MethodReport {
  Method method = Method::Ppk;
  Eigen::Index n = 0;
  int K = 0;
  double mse = 0.0;
  double mean_ci_length = 0.0;
  double coverage = 0.0;
  std::vector<BoundaryBiasSummary> boundary_bias;
  double wall_time_seconds = 0.0;
  int replications = 0;
};

struct ReplicationFailure {
  int replication = 0;
  std::string error;
};

struct MetricsReport {
  RunConfig config;
  std::vector<MethodReport> methods;
  std::vector<ReplicationFailure> failures;
  int replications_succeeded = 0;

  const MethodReport &method(Method m) const {
    for (const auto &r : methods) {
      if (r.method == m) return r;
    }
    fail(ErrorCode::InvalidArgument, "method " + method_name(m) + " not in report");
  }
};

/// One replication's raw results, per requested method.
struct ReplicationResult {
  struct PerMethod {
    PointMetrics metrics;
    std::vector<BoundaryBias> bias;
    double seconds = 0.0;
  };
  std::vector<PerMethod> methods;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Data generation through scoring for a single replication.
inline ReplicationResult run_replication(const RunConfig &cfg, int rep, std::size_t workers) {
  const std::uint64_t rep_seed = cfg.seed + static_cast<std::uint64_t>(rep);
  const auto train =
      synth::generate({cfg.setup, cfg.n, rep_seed, cfg.noise_sd, synth::Role::Train}).data;
  const auto test =
      synth::generate({cfg.setup, cfg.test_m, rep_seed, cfg.noise_sd, synth::Role::Test}).data;
  FitConfig fc = cfg.fit_config(rep_seed);
  fc.workers = workers;

  bool regional = false;
  for (Method m : cfg.methods) regional |= (m != Method::Global);
  RegionalFit fit;
  double regional_seconds = 0.0;
  if (regional) {
    const auto start = std::chrono::steady_clock::now();
    fit = fit_regions(train, test.X, fc);
    regional_seconds = detail::seconds_since(start);
  }
  // Scores and cutoffs for the boundary study; global-only runs still need
  // them, so fit the propensity model alone in that case.
  Vector test_scores;
  std::vector<double> cutoffs;
  if (regional) {
    test_scores = fit.test_scores;
    cutoffs = fit.partition.cutoffs;
  } else {
    const PropensityModel model = fit_logistic(train.X, train.t);
    test_scores = predict_propensity(model, test.X);
    cutoffs = cfg.fixed_cutoffs.empty()
                  ? quantile_cutoffs(predict_propensity(model, train.X), cfg.K)
                  : cfg.fixed_cutoffs;
  }

  ReplicationResult out;
  for (Method m : cfg.methods) {
    const auto start = std::chrono::steady_clock::now();
    PosteriorHTE post;
    double extra = 0.0;
    switch (m) {
      case Method::Ppk:
        post = fit_ppk(train, fit, fc);
        extra = regional_seconds;
        break;
      case Method::Local:
        post = fit_local(train, fit);
        extra = regional_seconds;
        break;
      case Method::Global:
        post = fit_global(train, test.X, fc);
        break;
    }
    ReplicationResult::PerMethod pm;
    pm.seconds = detail::seconds_since(start) + extra;
    pm.metrics = compute_metrics(post, *test.true_theta, cfg.level);
    pm.bias = boundary_bias(post.mean, *test.true_theta, test_scores, cutoffs, cfg.margin);
    out.methods.push_back(std::move(pm));
  }
  return out;
}

/// Aggregates successful replications in replication order.
inline MetricsReport aggregate(const RunConfig &cfg,
                               const std::vector<std::optional<ReplicationResult>> &reps,
                               std::vector<ReplicationFailure> failures) {
  MetricsReport report;
  report.config = cfg;
  report.failures = std::move(failures);
  for (const auto &r : reps) report.replications_succeeded += r ? 1 : 0;
  for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    MethodReport mr;
    mr.method = cfg.methods[mi];
    mr.n = cfg.n;
    mr.K = cfg.K;
    mr.replications = report.replications_succeeded;
    std::vector<BoundaryBiasSummary> bias;
    std::vector<double> cutoff_sum;
    std::vector<std::size_t> cutoff_count;
    for (const auto &r : reps) {
      if (!r) continue;
      const auto &pm = r->methods[mi];
      mr.mse += pm.metrics.mse;
      mr.mean_ci_length += pm.metrics.ci_length;
      mr.coverage += pm.metrics.coverage;
      mr.wall_time_seconds += pm.seconds;
      if (bias.size() < pm.bias.size()) {
        bias.resize(pm.bias.size());
        cutoff_sum.resize(pm.bias.size(), 0.0);
        cutoff_count.resize(pm.bias.size(), 0);
      }
      for (std::size_t j = 0; j < pm.bias.size(); ++j) {
        cutoff_sum[j] += pm.bias[j].cutoff;
        ++cutoff_count[j];
        if (pm.bias[j].empty) continue;
        bias[j].bias += pm.bias[j].bias;
        bias[j].mean_abs_bias += std::abs(pm.bias[j].bias);
        ++bias[j].replications;
      }
    }
    if (mr.replications > 0) {
      const double denom = mr.replications;
      mr.mse /= denom;
      mr.mean_ci_length /= denom;
      mr.coverage /= denom;
    }
    for (std::size_t j = 0; j < bias.size(); ++j) {
      bias[j].cutoff = cutoff_sum[j] / static_cast<double>(cutoff_count[j]);
      bias[j].empty = bias[j].replications == 0;
      if (!bias[j].empty) {
        bias[j].bias /= static_cast<double>(bias[j].replications);
        bias[j].mean_abs_bias /= static_cast<double>(bias[j].replications);
      }
    }
    mr.boundary_bias = std::move(bias);
    report.methods.push_back(std::move(mr));
  }
  return report;
}

/// Monte-Carlo study: replication r uses seed + r for data, pseudo points and
/// everything downstream. Failed replications are recorded and excluded.
inline MetricsReport run_simulation(const RunConfig &cfg) {
  cfg.validate();
  const auto R = static_cast<std::size_t>(cfg.replications);
  const std::size_t outer = std::min(cfg.workers, R);
  const std::size_t inner = outer > 1 ? 1 : cfg.workers;
  std::vector<std::optional<ReplicationResult>> reps(R);
  const auto errors = parallel_for(R, outer, [&](std::size_t r) {
    reps[r] = run_replication(cfg, static_cast<int>(r), inner);
  });
  std::vector<ReplicationFailure> failures;
  for (std::size_t r = 0; r < R; ++r) {
    if (!errors[r]) continue;
    reps[r].reset();
    try {
      std::rethrow_exception(errors[r]);
    } catch (const std::exception &e) {
      failures.push_back({static_cast<int>(r), e.what()});
    } catch (...) {
      failures.push_back({static_cast<int>(r), "unknown error"});
    }
  }
  return aggregate(cfg, reps, std::move(failures));
}

inline nlohmann::json grid_json(const TuningGrid &g) {
  return {{"min", g.min}, {"max", g.max}, {"step", g.step}};
}

inline nlohmann::json to_json(const MetricsReport &report) {
  using nlohmann::json;
  const RunConfig &c = report.config;
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(method_name(m));
  json config = {
      {"setup", std::string(1, synth::setup_name(c.setup))},
      {"n", c.n},
      {"test_m", c.test_m},
      {"k", c.K},
      {"b", c.B},
      {"grid",
       {{"gamma_theta", grid_json(c.grid.gamma_theta)},
        {"gamma_f", grid_json(c.grid.gamma_f)},
        {"s_eps", grid_json(c.grid.s_eps)}}},
      {"replications", c.replications},
      {"seed", c.seed},
      {"methods", methods},
      {"cutoffs", c.fixed_cutoffs.empty() ? json("quantile") : json(c.fixed_cutoffs)},
      {"margin", c.margin},
      {"level", c.level},
      {"noise_sd", c.noise_sd},
  };
  json out_methods = json::array();
  for (const auto &mr : report.methods) {
    json bias = json::array();
    for (const auto &b : mr.boundary_bias) {
      bias.push_back({{"cutoff", b.cutoff},
                      {"bias", b.empty ? json(nullptr) : json(b.bias)},
                      {"mean_abs_bias", b.empty ? json(nullptr) : json(b.mean_abs_bias)},
                      {"replications", b.replications},
                      {"empty", b.empty}});
    }
    out_methods.push_back({{"method", method_name(mr.method)},
                           {"n", mr.n},
                           {"k", mr.K},
                           {"mse", mr.mse},
                           {"mean_ci_length", mr.mean_ci_length},
                           {"coverage", mr.coverage},
                           {"boundary_bias", bias},
                           {"wall_time_seconds", mr.wall_time_seconds},
                           {"replications", mr.replications}});
  }
  json failures = json::array();
  for (const auto &f : report.failures) {
    failures.push_back({{"replication", f.replication}, {"error", f.error}});
  }
  return {{"config", config},
          {"replications_succeeded", report.replications_succeeded},
          {"failures", failures},
          {"methods", out_methods}};
}

/// Copy of a report document without its wall-time fields.
inline nlohmann::json strip_timing(nlohmann::json doc) {
  if (doc.is_object()) {
    doc.erase("wall_time_seconds");
    for (auto &[key, value] : doc.items()) value = strip_timing(value);
  } else if (doc.is_array()) {
    for (auto &value : doc) value = strip_timing(value);
  }
  return doc;
}

}  // namespace ppk
