#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cil/checkpoint.hpp"
#include "cil/config.hpp"
#include "cil/data.hpp"
#include "cil/experiment.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
  std::string seeds;
};

cil::ExperimentConfig build_config(const CommonOpts& opts) {
  cil::ConfigMap map;
  if (!opts.config_path.empty()) map = cil::load_config_file(opts.config_path);
  for (const auto& kv : opts.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw cil::ConfigError("--set expects section.key=value, got '" + kv + "'");
    map[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (!opts.seeds.empty()) map["run.seeds"] = opts.seeds;
  if (!opts.output.empty()) map["run.output"] = opts.output;
  cil::ExperimentConfig cfg = cil::config_from_map(map);
  if (const char* env = std::getenv("CIL_OUTPUT_DIR"); env && *env) cfg.output = env;
  return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("-c,--config", opts.config_path, "Config file (INI-style sections)");
  cmd->add_option("--set", opts.overrides, "Override a config key, e.g. --set solver.alpha=0.02");
  cmd->add_option("-o,--output", opts.output, "Output directory");
  cmd->add_option("--seeds", opts.seeds, "Comma-separated order seeds");
}

int run_cmd(const CommonOpts& opts) {
  const cil::ExperimentConfig cfg = build_config(opts);
  const cil::ExperimentSummary summary = cil::run_experiment(cfg);
  for (const auto& report : summary.reports) {
    std::printf("seed %llu: avg_acc=%.4f bwt=%+.4f fwt=%s model=%.2fMB exemplar=%.2fMB\n",
                static_cast<unsigned long long>(report.order_seed), report.avg_acc, report.bwt,
                report.fwt ? (std::to_string(*report.fwt).c_str()) : "n/a", report.model_mb,
                report.exemplar_mb);
  }
  std::printf("avg_acc over %zu seeds: %.4f +- %.4f\n", summary.reports.size(),
              summary.avg_acc_mean, summary.avg_acc_std);
  std::printf("reports written to %s\n", cfg.output.c_str());
  return 0;
}

int sweep_cmd(const CommonOpts& opts, const std::string& gammas_text) {
  const cil::ExperimentConfig cfg = build_config(opts);
  std::vector<double> gammas;
  for (const auto& part : cil::detail::split(gammas_text, ','))
    gammas.push_back(cil::detail::parse_double("--gammas", part));
  if (gammas.size() < 2) throw cil::ConfigError("sweep-gamma needs at least two gamma values");
  const auto rows = cil::run_tradeoff_sweep(cfg, gammas);
  for (const auto& row : rows)
    std::printf("gamma=%g: final avg_acc=%.4f bwt=%+.4f fwt=%+.4f\n", row.gamma,
                row.avg_acc_per_session.back(), row.bwt, row.fwt);
  std::printf("table written to %s/sweep_gamma.csv\n", cfg.output.c_str());
  return 0;
}

int order_cmd(const CommonOpts& opts, std::size_t n_orders) {
  const cil::ExperimentConfig cfg = build_config(opts);
  const cil::OrderRobustness result = cil::run_order_robustness(cfg, n_orders);
  std::printf("avg_acc over %zu task orders: %.4f +- %.4f\n", n_orders, result.mean,
              result.std_dev);
  return 0;
}

int gen_synthetic_cmd(std::size_t classes, std::size_t dim, std::size_t n_per_class,
                      double separation, std::uint64_t seed, const std::string& out_prefix) {
  const cil::LabeledData all = cil::synth_gaussian_data(classes, dim, n_per_class, separation, seed);
  // 80/20 per class, preserving source order, same convention as the task builder
  std::vector<std::size_t> train_rows, test_rows;
  const std::size_t per = n_per_class;
  for (std::size_t c = 0; c < classes; ++c) {
    const std::size_t n_train = (4 * per) / 5;
    for (std::size_t s = 0; s < per; ++s)
      (s < n_train ? train_rows : test_rows).push_back(c * per + s);
  }
  auto write = [&](const std::string& path, const std::vector<std::size_t>& rows) {
    cil::DenseMatrix x(rows.size(), all.x.cols());
    std::vector<int> labels;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      for (std::size_t j = 0; j < all.x.cols(); ++j) x(i, j) = all.x(rows[i], j);
      labels.push_back(all.labels[rows[i]]);
    }
    cil::save_feature_matrix(path, x, labels);
    std::printf("wrote %s (%zu rows x %zu cols)\n", path.c_str(), x.rows(), x.cols());
  };
  write(out_prefix + "_train.bin", train_rows);
  write(out_prefix + "_test.bin", test_rows);
  return 0;
}

int inspect_cmd(const std::string& path) {
  const cil::Checkpoint ckpt = cil::load_checkpoint(path);
  std::printf("checkpoint %s\n", path.c_str());
  std::printf("  solution: %zux%zu over tasks [", ckpt.solution.omega.rows(),
              ckpt.solution.omega.cols());
  for (std::size_t i = 0; i < ckpt.solution.trained_tasks.size(); ++i)
    std::printf("%s%d", i ? "," : "", ckpt.solution.trained_tasks[i]);
  std::printf("]\n");
  for (const auto& rec : ckpt.statistic.records) {
    double omega_max = 0.0, f_max = 0.0;
    for (std::size_t i = 0; i < rec.omega.size(); ++i)
      omega_max = std::max(omega_max, std::abs(rec.omega.data()[i]));
    for (std::size_t i = 0; i < rec.plasticity.size(); ++i)
      f_max = std::max(f_max, rec.plasticity.data()[i]);
    std::printf("  task %d: omega %zux%zu |max|=%.4g, plasticity max=%.4g, gamma=%g, N=%zu\n",
                rec.task_id, rec.omega.rows(), rec.omega.cols(), omega_max, f_max, rec.gamma,
                rec.n_samples);
  }
  for (const auto& [name, value] : ckpt.seeds)
    std::printf("  seed %s=%lld\n", name.c_str(), static_cast<long long>(value));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental learning runner: analytic consolidation over "
               "ADMM-refined random-feature representations"};
  app.require_subcommand(1);

  CommonOpts run_opts, sweep_opts, order_opts;
  std::string gammas_text;
  std::size_t n_orders = 5;

  auto* run = app.add_subcommand("run", "Run the incremental experiment for every order seed");
  add_common(run, run_opts);

  auto* sweep = app.add_subcommand("sweep-gamma", "Run the trade-off sweep over gamma values");
  add_common(sweep, sweep_opts);
  sweep->add_option("--gammas", gammas_text, "Comma-separated gamma values")->required();

  auto* order = app.add_subcommand("order-robustness", "Mean/std of Avg Acc over shuffled orders");
  add_common(order, order_opts);
  order->add_option("--orders", n_orders, "Number of distinct task orders");

  std::size_t g_classes = 10, g_dim = 20, g_npc = 300;
  double g_sep = 2.5;
  std::uint64_t g_seed = 7;
  std::string g_out = "synthetic";
  auto* gen = app.add_subcommand("gen-synthetic", "Write synthetic Gaussian feature files");
  gen->add_option("--classes", g_classes, "Number of classes");
  gen->add_option("--dim", g_dim, "Feature dimension");
  gen->add_option("--n-per-class", g_npc, "Samples per class");
  gen->add_option("--separation", g_sep, "Distance of class means from the origin");
  gen->add_option("--seed", g_seed, "Generator seed");
  gen->add_option("--out", g_out, "Output path prefix");

  std::string ckpt_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint archive's header");
  inspect->add_option("path", ckpt_path, "Checkpoint file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_cmd(run_opts);
    if (sweep->parsed()) return sweep_cmd(sweep_opts, gammas_text);
    if (order->parsed()) return order_cmd(order_opts, n_orders);
    if (gen->parsed()) return gen_synthetic_cmd(g_classes, g_dim, g_npc, g_sep, g_seed, g_out);
    if (inspect->parsed()) return inspect_cmd(ckpt_path);
  } catch (const cil::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const cil::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const cil::Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  }
  return 0;
}
