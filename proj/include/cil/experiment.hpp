#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cil/checkpoint.hpp"
#include "cil/classifier.hpp"
#include "cil/config.hpp"
#include "cil/data.hpp"
#include "cil/errors.hpp"
#include "cil/features.hpp"
#include "cil/metrics.hpp"

namespace cil {

struct SessionReport {
  int task_id = 0;
  std::vector<int> classes;  // original dataset labels learned this session
  double train_time_s = 0.0;
  std::vector<double> r_row;
};

struct RunReport {
  std::string config_digest;
  std::uint64_t order_seed = 0;
  std::uint64_t data_seed = 0;
  std::uint64_t feature_seed = 0;
  std::vector<SessionReport> sessions;
  AccuracyMatrix r;
  std::vector<double> r_ind;
  double avg_acc = 0.0;
  double bwt = 0.0;
  std::optional<double> fwt;
  double model_mb = 0.0;
  double exemplar_mb = 0.0;
};

namespace detail {

inline void apply_activation_in_place(DenseMatrix& m, Activation act) {
  if (act == Activation::none) return;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) = apply_activation(act, m(i, j));
}

inline DenseMatrix hcat(const std::vector<const DenseMatrix*>& blocks) {
  std::size_t cols = 0;
  for (const auto* b : blocks) cols += b->cols();
  const std::size_t rows = blocks.empty() ? 0 : blocks.front()->rows();
  DenseMatrix out(rows, cols);
  std::size_t at = 0;
  for (const auto* b : blocks) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < b->cols(); ++j) out(i, at + j) = (*b)(i, j);
    at += b->cols();
  }
  return out;
}

}  // namespace detail

// Subnetwork I wired to a config: frozen base, grouped random mappings, the
// one-time ADMM refinement, and the connection variants used by the
// representation ablations.
class FeaturePipeline {
 public:
  FeaturePipeline(const ExperimentConfig& cfg, std::size_t input_dim) : cfg_(&cfg) {
    base_ = cfg.base == BaseKind::frozen_affine
                ? make_frozen_affine(input_dim, cfg.hidden ? cfg.hidden : input_dim,
                                     cfg.feature_seed, cfg.base_activation)
                : make_identity_base();
    const std::size_t h = hidden_width(input_dim);
    if (cfg.groups > 0) groups_ = init_groups(h, cfg.groups, cfg.group_width, cfg.feature_seed + 1);
  }

  std::size_t hidden_width(std::size_t input_dim) const {
    return base_.kind == BaseKind::frozen_affine ? base_.weights.cols() : input_dim;
  }

  bool refined() const { return !refined_thetas_.empty() || groups_.size() == 0; }
  std::size_t refinement_version() const { return refinement_version_; }

  // Fits the lasso refinement on this batch's representation; reused for all
  // subsequent tasks unless the config re-refines per task.
  void refine(const DenseMatrix& x) {
    if (groups_.size() == 0) {
      ++refinement_version_;
      return;
    }
    const DenseMatrix z = base_forward(x, base_);
    refined_thetas_.clear();
    refined_thetas_.reserve(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      DenseMatrix gi = affine_forward(z, groups_.weights[g], groups_.biases[g]);
      detail::apply_activation_in_place(gi, cfg_->group_activation);
      refined_thetas_.push_back(
          admm_refine(gi, z, cfg_->alpha, cfg_->rho_admm, cfg_->admm_max_iter, cfg_->admm_tol));
    }
    ++refinement_version_;
  }

  AugmentedFeatures features(const DenseMatrix& x) const {
    const DenseMatrix z = base_forward(x, base_);
    if (groups_.size() == 0 || cfg_->connection == Connection::z) {
      AugmentedFeatures out;
      out.matrix = z;
      out.z_cols = z.cols();
      out.g_cols = 0;
      return out;
    }
    if (cfg_->connection == Connection::a && cfg_->group_activation == Activation::none)
      return augment(z, groups_, refined_thetas_);

    std::vector<DenseMatrix> blocks;
    blocks.reserve(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      DenseMatrix block;
      if (cfg_->connection == Connection::g) {
        block = affine_forward(z, groups_.weights[g], groups_.biases[g]);
      } else {
        block = affine_forward(z, transpose(refined_thetas_[g]), groups_.biases[g]);
      }
      detail::apply_activation_in_place(block, cfg_->group_activation);
      blocks.push_back(std::move(block));
    }
    std::vector<const DenseMatrix*> parts;
    const bool with_z = cfg_->connection == Connection::a;
    if (with_z) parts.push_back(&z);
    for (const auto& b : blocks) parts.push_back(&b);
    AugmentedFeatures out;
    out.matrix = detail::hcat(parts);
    out.z_cols = with_z ? z.cols() : 0;
    out.g_cols = out.matrix.cols() - out.z_cols;
    return out;
  }

  std::size_t param_count() const { return base_.param_count() + groups_.param_count(); }

 private:
  const ExperimentConfig* cfg_;
  BaseMapping base_;
  GroupMapping groups_;
  std::vector<DenseMatrix> refined_thetas_;
  std::size_t refinement_version_ = 0;
};

namespace detail {

inline TaskSequence load_sequence(const ExperimentConfig& cfg, std::uint64_t order_seed) {
  switch (cfg.kind) {
    case DataKind::synthetic:
      return synth_gaussian_tasks(cfg.classes, cfg.tasks, cfg.dim, cfg.n_per_class, cfg.separation,
                                  cfg.data_seed, order_seed);
    case DataKind::idx: {
      const LabeledData train = load_idx(cfg.train_images, cfg.train_labels);
      const LabeledData test = load_idx(cfg.test_images, cfg.test_labels);
      return split_classes(train, test, cfg.classes, cfg.tasks, order_seed, "idx");
    }
    case DataKind::features: {
      if (!cfg.train_path.empty() && !cfg.test_path.empty()) {
        return split_classes(load_feature_matrix(cfg.train_path), load_feature_matrix(cfg.test_path),
                             cfg.classes, cfg.tasks, order_seed, "features");
      }
      if (cfg.path.empty()) throw ConfigError("data.kind=features needs data.train/test or data.path");
      return split_classes(load_feature_matrix(cfg.path), cfg.classes, cfg.tasks, order_seed,
                           cfg.train_fraction, "features");
    }
  }
  throw ConfigError("unreachable data kind");
}

// Slices the zero-padded one-hot to the first n_cols columns.
inline DenseMatrix slice_cols(const DenseMatrix& m, std::size_t n_cols) {
  DenseMatrix out(m.rows(), n_cols);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < n_cols; ++j) out(i, j) = m(i, j);
  return out;
}

inline double accuracy_against(const std::vector<int>& predicted, const DenseMatrix& one_hot) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (one_hot(i, static_cast<std::size_t>(predicted[i])) == 1.0) ++hits;
  }
  return predicted.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace detail

// Accuracy of the identical pipeline trained on one task in isolation: fresh
// extractor refinement, fresh declarative parameter, argmax over the task's
// own classes.
inline double independent_task_accuracy(const ExperimentConfig& cfg, const TaskPair& pair) {
  FeaturePipeline pipeline(cfg, pair.train.x.cols());
  pipeline.refine(pair.train.x);
  const AugmentedFeatures a = pipeline.features(pair.train.x);
  const std::size_t col_begin = static_cast<std::size_t>(pair.train.class_ids.front());
  const std::size_t width = pair.train.class_ids.size();
  DenseMatrix y_local(pair.train.y.rows(), width);
  for (std::size_t i = 0; i < pair.train.y.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) y_local(i, j) = pair.train.y(i, col_begin + j);
  const DeclarativeRecord rec = compute_declarative(a, y_local, cfg.rho_ridge, pair.train.class_ids);

  ConsolidatedSolution sol;
  sol.omega = rec.omega;
  sol.feature_dim = rec.omega.rows();
  sol.total_classes = width;
  sol.trained_tasks = {pair.train.task_id};
  const AugmentedFeatures a_test = pipeline.features(pair.test.x);
  const Prediction pred = predict(a_test, sol);
  DenseMatrix y_test_local(pair.test.y.rows(), width);
  for (std::size_t i = 0; i < pair.test.y.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) y_test_local(i, j) = pair.test.y(i, col_begin + j);
  return detail::accuracy_against(pred.labels, y_test_local);
}

using RIndCache = std::map<std::uint64_t, std::vector<double>>;

// Algorithm-1 training loop over one ordered task sequence: Subnetwork I
// forward (one-time ADMM refinement), declarative parameter, plasticity,
// per-class consolidation, then evaluation on every seen test set. The forget
// schedule runs between sessions.
inline RunReport run_single(const ExperimentConfig& cfg, std::uint64_t order_seed,
                            RIndCache* r_ind_cache = nullptr) {
  const TaskSequence seq = detail::load_sequence(cfg, order_seed);
  const std::size_t n_tasks = seq.tasks.size();
  const std::size_t per_task = seq.classes_per_task;

  RunReport report;
  report.config_digest = config_digest(cfg);
  report.order_seed = order_seed;
  report.data_seed = cfg.data_seed;
  report.feature_seed = cfg.feature_seed;

  FeaturePipeline pipeline(cfg, seq.tasks.front().train.x.cols());
  MemoryStatistic statistic;
  ConsolidatedSolution solution;
  ConsolidateOptions options;
  options.update_new_columns_only = cfg.update_new_columns_only;
  options.use_plasticity_term = cfg.use_plasticity_term;
  options.use_anchor_term = cfg.use_anchor_term;

  std::vector<AugmentedFeatures> test_features(n_tasks);
  std::vector<std::size_t> test_features_version(n_tasks, 0);

  for (std::size_t t = 0; t < n_tasks; ++t) {
    const TaskPair& pair = seq.tasks[t];
    const int task_id = pair.train.task_id;
    try {
      for (const auto& entry : cfg.forget_schedule) {
        if (entry.before_task != task_id) continue;
        statistic = entry.task_ids.empty() ? forget_oldest(statistic, entry.oldest_count)
                                           : forget_tasks(statistic, entry.task_ids);
      }

      const auto session_start = std::chrono::steady_clock::now();
      if (!pipeline.refined() || cfg.refine_per_task) pipeline.refine(pair.train.x);
      const AugmentedFeatures a = pipeline.features(pair.train.x);
      const std::size_t cumulative = (t + 1) * per_task;
      const DenseMatrix y = detail::slice_cols(pair.train.y, cumulative);

      DeclarativeRecord rec = compute_declarative(a, y, cfg.rho_ridge, pair.train.class_ids);
      rec.task_id = task_id;
      rec.gamma = cfg.gamma_for_task(task_id);
      rec.plasticity = compute_plasticity(a, y, rec.omega);

      if (t == 0) {
        solution.omega = rec.omega;
        solution.trained_tasks = {task_id};
        solution.feature_dim = rec.omega.rows();
        solution.total_classes = cumulative;
      } else {
        const ConsolidatedSolution prev = pad_solution(solution, cumulative);
        solution = consolidate(a, y, statistic, prev, rec.gamma, task_id, &pair.train.class_ids,
                               options);
      }
      statistic.push(std::move(rec));
      const auto session_end = std::chrono::steady_clock::now();

      SessionReport session;
      session.task_id = task_id;
      for (int g : pair.train.class_ids) session.classes.push_back(seq.column_labels[g]);
      session.train_time_s = std::chrono::duration<double>(session_end - session_start).count();

      std::vector<double> row;
      for (std::size_t tau = 0; tau <= t; ++tau) {
        if (test_features_version[tau] != pipeline.refinement_version() ||
            test_features[tau].matrix.empty()) {
          test_features[tau] = pipeline.features(seq.tasks[tau].test.x);
          test_features_version[tau] = pipeline.refinement_version();
        }
        const Prediction pred = predict(test_features[tau], solution);
        const DenseMatrix y_test = detail::slice_cols(seq.tasks[tau].test.y, cumulative);
        row.push_back(detail::accuracy_against(pred.labels, y_test));
      }
      session.r_row = row;
      report.r.push_row(row);
      report.sessions.push_back(std::move(session));
    } catch (const SolveFailure& e) {
      throw SolveFailure("session " + std::to_string(task_id) + ": " + e.what(), e.rho(),
                         e.pivot_index());
    } catch (const NonFinite& e) {
      throw NonFinite("session " + std::to_string(task_id) + ": " + e.what());
    } catch (const DimensionMismatch& e) {
      throw DimensionMismatch("session " + std::to_string(task_id) + ": " + e.what());
    } catch (const EmptyTask& e) {
      throw EmptyTask("session " + std::to_string(task_id) + ": " + e.what());
    } catch (const UnknownTask& e) {
      throw UnknownTask("session " + std::to_string(task_id) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("session " + std::to_string(task_id) + ": " + e.what());
    }
  }

  report.avg_acc = avg_acc(report.r, n_tasks);
  report.bwt = n_tasks >= 2 ? bwt(report.r) : 0.0;
  if (cfg.compute_fwt && n_tasks >= 2) {
    std::vector<double> r_ind(n_tasks, 0.0);
    r_ind[0] = report.r.at(1, 1);  // session 1 is already an independent task-1 model
    if (r_ind_cache && r_ind_cache->count(order_seed)) {
      r_ind = (*r_ind_cache)[order_seed];
    } else {
      for (std::size_t t = 1; t < n_tasks; ++t)
        r_ind[t] = independent_task_accuracy(cfg, seq.tasks[t]);
      if (r_ind_cache) (*r_ind_cache)[order_seed] = r_ind;
    }
    report.r_ind = r_ind;
    report.fwt = fwt(report.r, r_ind);
  }

  const MemoryBudget budget =
      memory_budget(statistic, pipeline.param_count() + solution.omega.size());
  report.model_mb = budget.model_mb;
  report.exemplar_mb = budget.exemplar_mb;

  if (!cfg.checkpoint_path.empty()) {
    Checkpoint ckpt;
    ckpt.statistic = statistic;
    ckpt.solution = solution;
    ckpt.seeds = {{"order", static_cast<std::int64_t>(order_seed)},
                  {"data", static_cast<std::int64_t>(cfg.data_seed)},
                  {"features", static_cast<std::int64_t>(cfg.feature_seed)}};
    save_checkpoint(cfg.checkpoint_path + ".seed" + std::to_string(order_seed), ckpt);
  }
  return report;
}

namespace detail {

inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

inline void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out << content;
  }
  fs::rename(tmp, target);
}

}  // namespace detail

inline nlohmann::json report_to_json(const RunReport& report) {
  nlohmann::json j;
  j["config_digest"] = report.config_digest;
  j["seeds"] = {{"order", report.order_seed},
                {"data", report.data_seed},
                {"features", report.feature_seed}};
  j["per_session"] = nlohmann::json::array();
  for (const auto& s : report.sessions) {
    j["per_session"].push_back({{"task_id", s.task_id},
                                {"classes", s.classes},
                                {"train_time_s", detail::round3(s.train_time_s)},
                                {"R_row", s.r_row}});
  }
  j["avg_acc"] = report.avg_acc;
  j["bwt"] = report.bwt;
  if (report.fwt) j["fwt"] = *report.fwt; else j["fwt"] = nullptr;
  j["model_mb"] = report.model_mb;
  j["exemplar_mb"] = report.exemplar_mb;
  return j;
}

inline std::string r_matrix_csv(const AccuracyMatrix& r) {
  std::ostringstream out;
  out << "after_task";
  for (std::size_t t = 1; t <= r.sessions(); ++t) out << ",task_" << t;
  out << "\n";
  out.precision(10);
  for (std::size_t i = 1; i <= r.sessions(); ++i) {
    out << i;
    for (std::size_t t = 1; t <= r.sessions(); ++t) {
      out << ",";
      if (t <= i) out << r.at(i, t);
    }
    out << "\n";
  }
  return out.str();
}

struct ExperimentSummary {
  double avg_acc_mean = 0.0;
  double avg_acc_std = 0.0;
  std::vector<RunReport> reports;
};

// One full experiment: a run per order seed plus the cross-seed summary;
// report and accuracy-matrix files land in cfg.output.
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg, bool write_files = true,
                                        RIndCache* r_ind_cache = nullptr) {
  ExperimentSummary summary;
  RIndCache local_cache;
  if (!r_ind_cache) r_ind_cache = &local_cache;
  for (std::uint64_t seed : cfg.seeds)
    summary.reports.push_back(run_single(cfg, seed, r_ind_cache));

  double mean = 0.0;
  for (const auto& r : summary.reports) mean += r.avg_acc;
  mean /= static_cast<double>(summary.reports.size());
  double var = 0.0;
  for (const auto& r : summary.reports) var += (r.avg_acc - mean) * (r.avg_acc - mean);
  var /= static_cast<double>(summary.reports.size());
  summary.avg_acc_mean = mean;
  summary.avg_acc_std = std::sqrt(var);

  if (write_files) {
    namespace fs = std::filesystem;
    for (const auto& report : summary.reports) {
      const std::string stem = cfg.output + "/report_seed" + std::to_string(report.order_seed);
      detail::atomic_write(stem + ".json", report_to_json(report).dump(2) + "\n");
      detail::atomic_write(cfg.output + "/rmatrix_seed" + std::to_string(report.order_seed) + ".csv",
                           r_matrix_csv(report.r));
    }
    nlohmann::json j;
    j["config_digest"] = config_digest(cfg);
    j["order_seeds"] = cfg.seeds;
    j["avg_acc_mean"] = summary.avg_acc_mean;
    j["avg_acc_std"] = summary.avg_acc_std;
    detail::atomic_write(cfg.output + "/summary.json", j.dump(2) + "\n");
  }
  return summary;
}

struct SweepRow {
  double gamma = 0.0;
  std::vector<double> avg_acc_per_session;
  double bwt = 0.0;
  double fwt = 0.0;
};

// One run_experiment per gamma at fixed seeds; rows mirror the trade-off
// table layout (per-session Avg Acc, then final BWT and FWT).
inline std::vector<SweepRow> run_tradeoff_sweep(const ExperimentConfig& cfg,
                                                const std::vector<double>& gammas,
                                                bool write_files = true) {
  if (gammas.size() < 1) throw ConfigError("sweep: needs at least one gamma");
  std::vector<SweepRow> rows;
  RIndCache cache;
  for (double gamma : gammas) {
    if (!(gamma > 0.0)) throw ConfigError("sweep: gammas must be positive");
    ExperimentConfig run_cfg = cfg;
    run_cfg.gamma = gamma;
    run_cfg.gamma_overrides.clear();
    const ExperimentSummary summary = run_experiment(run_cfg, false, &cache);
    SweepRow row;
    row.gamma = gamma;
    row.avg_acc_per_session.assign(cfg.tasks, 0.0);
    for (const auto& report : summary.reports) {
      for (std::size_t t = 1; t <= cfg.tasks; ++t)
        row.avg_acc_per_session[t - 1] += avg_acc(report.r, t);
      row.bwt += report.bwt;
      row.fwt += report.fwt.value_or(0.0);
    }
    const double n = static_cast<double>(summary.reports.size());
    for (auto& v : row.avg_acc_per_session) v /= n;
    row.bwt /= n;
    row.fwt /= n;
    rows.push_back(std::move(row));
  }
  if (write_files) {
    std::ostringstream out;
    out << "gamma";
    for (std::size_t t = 1; t <= cfg.tasks; ++t) out << ",avg_acc_" << t;
    out << ",bwt,fwt\n";
    out.precision(10);
    for (const auto& row : rows) {
      out << row.gamma;
      for (double v : row.avg_acc_per_session) out << "," << v;
      out << "," << row.bwt << "," << row.fwt << "\n";
    }
    detail::atomic_write(cfg.output + "/sweep_gamma.csv", out.str());
  }
  return rows;
}

struct OrderRobustness {
  double mean = 0.0;
  double std_dev = 0.0;  // population
  std::vector<double> avg_accs;
};

inline OrderRobustness run_order_robustness(const ExperimentConfig& cfg, std::size_t n_orders,
                                            bool write_files = true) {
  if (n_orders < 2) throw ConfigError("order-robustness: needs at least two orders");
  std::vector<std::uint64_t> order_seeds = cfg.seeds;
  while (order_seeds.size() < n_orders) order_seeds.push_back(order_seeds.back() + 1);
  order_seeds.resize(n_orders);

  OrderRobustness result;
  RIndCache cache;
  for (std::uint64_t seed : order_seeds)
    result.avg_accs.push_back(run_single(cfg, seed, &cache).avg_acc);
  for (double v : result.avg_accs) result.mean += v;
  result.mean /= static_cast<double>(n_orders);
  double var = 0.0;
  for (double v : result.avg_accs) var += (v - result.mean) * (v - result.mean);
  result.std_dev = std::sqrt(var / static_cast<double>(n_orders));

  if (write_files) {
    nlohmann::json j;
    j["config_digest"] = config_digest(cfg);
    j["order_seeds"] = order_seeds;
    j["avg_accs"] = result.avg_accs;
    j["mean"] = result.mean;
    j["std"] = result.std_dev;
    detail::atomic_write(cfg.output + "/order_robustness.json", j.dump(2) + "\n");
  }
  return result;
}

}  // namespace cil
