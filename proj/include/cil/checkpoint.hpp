#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cil/classifier.hpp"
#include "cil/errors.hpp"

namespace cil {

// Single-archive checkpoint: magic, a length-prefixed JSON header (shapes,
// task ids, class ids, gammas, seeds) and the matrices as little-endian
// 64-bit floats. Round trips are bit-exact.
struct Checkpoint {
  MemoryStatistic statistic;
  ConsolidatedSolution solution;
  std::map<std::string, std::int64_t> seeds;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'C', 'I', 'L', 'C', 'K', 'P', 'T', '1'};

inline void write_matrix(std::ofstream& out, const DenseMatrix& m) {
  static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian");
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
}

inline DenseMatrix read_matrix(std::ifstream& in, std::size_t rows, std::size_t cols,
                               const std::string& path) {
  DenseMatrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) throw TruncatedFile(path + ": checkpoint payload truncated");
  return m;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["records"] = nlohmann::json::array();
  for (const auto& rec : ckpt.statistic.records) {
    header["records"].push_back({{"task_id", rec.task_id},
                                 {"gamma", rec.gamma},
                                 {"n_samples", rec.n_samples},
                                 {"class_ids", rec.class_ids},
                                 {"omega_rows", rec.omega.rows()},
                                 {"omega_cols", rec.omega.cols()},
                                 {"plasticity_rows", rec.plasticity.rows()},
                                 {"plasticity_cols", rec.plasticity.cols()}});
  }
  header["solution"] = {{"rows", ckpt.solution.omega.rows()},
                        {"cols", ckpt.solution.omega.cols()},
                        {"trained_tasks", ckpt.solution.trained_tasks},
                        {"feature_dim", ckpt.solution.feature_dim},
                        {"total_classes", ckpt.solution.total_classes}};
  header["seeds"] = ckpt.seeds;
  if (ckpt.statistic.capacity) header["capacity"] = *ckpt.statistic.capacity;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  const std::string head = header.dump();
  const std::uint64_t len = head.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& rec : ckpt.statistic.records) {
    detail::write_matrix(out, rec.omega);
    detail::write_matrix(out, rec.plasticity);
  }
  detail::write_matrix(out, ckpt.solution.omega);
  if (!out) throw DataError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TruncatedFile("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCheckpointMagic, sizeof(magic)) != 0)
    throw BadMagic(path + ": not a checkpoint archive");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in) throw TruncatedFile(path + ": header length truncated");
  std::string head(len, '\0');
  in.read(head.data(), static_cast<std::streamsize>(len));
  if (!in) throw TruncatedFile(path + ": header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(head);
  } catch (const nlohmann::json::exception& e) {
    throw HeaderMismatch(path + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ckpt;
  if (header.contains("capacity")) ckpt.statistic.capacity = header["capacity"].get<std::size_t>();
  for (const auto& rj : header["records"]) {
    DeclarativeRecord rec;
    rec.task_id = rj["task_id"].get<int>();
    rec.gamma = rj["gamma"].get<double>();
    rec.n_samples = rj["n_samples"].get<std::size_t>();
    rec.class_ids = rj["class_ids"].get<std::vector<int>>();
    rec.omega = detail::read_matrix(in, rj["omega_rows"].get<std::size_t>(),
                                    rj["omega_cols"].get<std::size_t>(), path);
    rec.plasticity = detail::read_matrix(in, rj["plasticity_rows"].get<std::size_t>(),
                                         rj["plasticity_cols"].get<std::size_t>(), path);
    ckpt.statistic.records.push_back(std::move(rec));
  }
  const auto& sj = header["solution"];
  ckpt.solution.trained_tasks = sj["trained_tasks"].get<std::vector<int>>();
  ckpt.solution.feature_dim = sj["feature_dim"].get<std::size_t>();
  ckpt.solution.total_classes = sj["total_classes"].get<std::size_t>();
  ckpt.solution.omega =
      detail::read_matrix(in, sj["rows"].get<std::size_t>(), sj["cols"].get<std::size_t>(), path);
  if (header.contains("seeds"))
    ckpt.seeds = header["seeds"].get<std::map<std::string, std::int64_t>>();
  return ckpt;
}

}  // namespace cil
