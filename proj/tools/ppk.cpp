// Command-line front end: Monte-Carlo studies on the synthetic setups and
// fits on user CSV files.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ppk/harness.hpp"
#include "ppk/io.hpp"
#include "ppk/pipeline.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_cutoffs(const std::string &spec) {
  if (spec == "quantile") return {};
  std::vector<double> out;
  for (const auto &item : split_list(spec)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    ppk::require(used == item.size() && used > 0, ppk::ErrorCode::InvalidArgument,
                 "--cutoffs: cannot parse '" + item + "'");
    out.push_back(v);
  }
  ppk::require(!out.empty(), ppk::ErrorCode::InvalidArgument,
               "--cutoffs needs 'quantile' or a comma-separated list");
  return out;
}

struct GridFlags {
  double min = 0.1;
  double max = 5.0;
  double step = 0.2;

  void add(CLI::App *app) {
    app->add_option("--grid-min", min, "smallest grid value (all three hyperparameters)")
        ->capture_default_str();
    app->add_option("--grid-max", max, "largest grid value")->capture_default_str();
    app->add_option("--grid-step", step, "grid spacing")->capture_default_str();
  }
  ppk::HyperGrid grid() const { return ppk::HyperGrid::uniform({min, max, step}); }
};

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Patchwork-kriging estimation of heterogeneous treatment effects"};
  app.require_subcommand(1);
  std::size_t workers = ppk::default_workers();
  app.add_option("--workers", workers, "parallel workers for replications and tuning")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // simulate
  auto *sim = app.add_subcommand("simulate", "Monte-Carlo study on a synthetic setup");
  std::string setup = "A", methods = "ppk,local,global", cutoffs = "quantile", report_path;
  long long sim_n = 500, test_m = 500;
  int sim_k = 5, sim_b = 20, reps = 100;
  std::uint64_t sim_seed = 1;
  double margin = 0.01, level = 0.95, noise_sd = 1.0;
  std::size_t min_region = 5;
  GridFlags sim_grid;
  sim->add_option("--setup", setup, "A, B, C or D")->capture_default_str();
  sim->add_option("--n", sim_n, "training size")->capture_default_str();
  sim->add_option("--test-m", test_m, "test size")->capture_default_str();
  sim->add_option("--k", sim_k, "number of regions")->capture_default_str();
  sim->add_option("--b", sim_b, "pseudo points per boundary")->capture_default_str();
  sim->add_option("--reps", reps, "replications")->capture_default_str();
  sim->add_option("--seed", sim_seed, "base seed; replication r uses seed + r")
      ->capture_default_str();
  sim_grid.add(sim);
  sim->add_option("--methods", methods, "comma-separated subset of ppk,local,global")
      ->capture_default_str();
  sim->add_option("--cutoffs", cutoffs, "'quantile' or fixed list v1,v2,...")
      ->capture_default_str();
  sim->add_option("--margin", margin, "boundary-bias margin")->capture_default_str();
  sim->add_option("--level", level, "credible level")->capture_default_str();
  sim->add_option("--noise-sd", noise_sd, "outcome noise standard deviation")
      ->capture_default_str();
  sim->add_option("--min-region-size", min_region, "smallest admissible region")
      ->capture_default_str();
  sim->add_option("--out", report_path, "report JSON path")->required();

  // fit
  auto *fit = app.add_subcommand("fit", "Fit PPK on a CSV file and write test-point estimates");
  std::string data_path, test_path, estimates_path;
  int fit_k = 5, fit_b = 20;
  std::uint64_t fit_seed = 1;
  double fit_level = 0.95;
  std::size_t fit_min_region = 5;
  GridFlags fit_grid;
  fit->add_option("--data", data_path, "training CSV (y, t, x1..xp)")->required();
  fit->add_option("--test", test_path, "test CSV (x1..xp); defaults to the training covariates");
  fit->add_option("--k", fit_k, "number of regions")->capture_default_str();
  fit->add_option("--b", fit_b, "pseudo points per boundary")->capture_default_str();
  fit->add_option("--seed", fit_seed, "pseudo-point seed")->capture_default_str();
  fit_grid.add(fit);
  fit->add_option("--level", fit_level, "credible level")->capture_default_str();
  fit->add_option("--min-region-size", fit_min_region, "smallest admissible region")
      ->capture_default_str();
  fit->add_option("--out", estimates_path, "estimates CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (sim->parsed()) {
      ppk::RunConfig cfg;
      cfg.setup = ppk::synth::parse_setup(setup);
      cfg.n = sim_n;
      cfg.test_m = test_m;
      cfg.K = sim_k;
      cfg.B = sim_b;
      cfg.grid = sim_grid.grid();
      cfg.replications = reps;
      cfg.seed = sim_seed;
      cfg.methods.clear();
      for (const auto &m : split_list(methods)) cfg.methods.push_back(ppk::parse_method(m));
      cfg.fixed_cutoffs = parse_cutoffs(cutoffs);
      cfg.margin = margin;
      cfg.level = level;
      cfg.noise_sd = noise_sd;
      cfg.min_region_size = min_region;
      cfg.workers = workers;
      const auto report = ppk::run_simulation(cfg);
      ppk::io::write_report(report_path, report);
      for (const auto &f : report.failures) {
        std::cerr << "replication " << f.replication << " failed: " << f.error << "\n";
      }
      if (report.replications_succeeded == 0) {
        std::cerr << "error: every replication failed\n";
        return kExitNumerical;
      }
      return 0;
    }

    const ppk::Dataset train = ppk::io::read_csv(data_path);
    const ppk::Matrix test_X = test_path.empty() ? train.X : ppk::io::read_covariates(test_path);
    ppk::FitConfig cfg;
    cfg.K = fit_k;
    cfg.B = fit_b;
    cfg.seed = fit_seed;
    cfg.grid = fit_grid.grid();
    cfg.min_region_size = fit_min_region;
    cfg.workers = workers;
    const auto regional = ppk::fit_regions(train, test_X, cfg);
    const auto post = ppk::fit_ppk(train, regional, cfg);
    ppk::io::write_estimates(estimates_path, post, regional.test_scores, regional.test_region,
                             fit_level);
    return 0;
  } catch (const ppk::Error &e) {
    std::cerr << "error: " << e.what() << "\n";
    return ppk::is_usage_error(e.code()) ? kExitUsage : kExitNumerical;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
}
