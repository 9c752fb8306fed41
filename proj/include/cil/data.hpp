#pragma once

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cil/errors.hpp"
#include "cil/matrix.hpp"
#include "cil/rng.hpp"

namespace cil {

enum class Split { train, test };

// One task's samples with zero-padded one-hot labels over the global class
// axis; class_ids are the global columns this task owns.
struct TaskBatch {
  int task_id = -1;
  DenseMatrix x;
  DenseMatrix y;
  std::vector<int> class_ids;
  Split split = Split::train;
};

struct TaskPair {
  TaskBatch train;
  TaskBatch test;
};

struct TaskSequence {
  std::vector<TaskPair> tasks;
  std::uint64_t order_seed = 0;
  std::string dataset;
  std::size_t total_classes = 0;
  std::size_t classes_per_task = 0;
  std::vector<int> column_labels;  // original dataset label behind each global column
};

struct LabeledData {
  DenseMatrix x;
  std::vector<int> labels;
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TruncatedFile("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
         std::uint32_t(p[3]);
}

}  // namespace detail

// Big-endian IDX ingestion: magic 0x00000803 rank-3 unsigned bytes for
// images, 0x00000801 for labels. Pixels are scaled to [0, 1]; image p is
// flattened row-major into row p.
inline LabeledData load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = detail::read_file_bytes(images_path);
  if (img.size() < 16) throw TruncatedFile(images_path + ": IDX image header truncated");
  if (detail::read_be32(img.data()) != 0x00000803u)
    throw BadMagic(images_path + ": expected IDX magic 0x00000803");
  const std::size_t count = detail::read_be32(img.data() + 4);
  const std::size_t rows = detail::read_be32(img.data() + 8);
  const std::size_t cols = detail::read_be32(img.data() + 12);
  if (img.size() != 16 + count * rows * cols)
    throw TruncatedFile(images_path + ": pixel payload does not match header dimensions");

  const auto lab = detail::read_file_bytes(labels_path);
  if (lab.size() < 8) throw TruncatedFile(labels_path + ": IDX label header truncated");
  if (detail::read_be32(lab.data()) != 0x00000801u)
    throw BadMagic(labels_path + ": expected IDX magic 0x00000801");
  const std::size_t label_count = detail::read_be32(lab.data() + 4);
  if (lab.size() != 8 + label_count) throw TruncatedFile(labels_path + ": label payload truncated");
  if (label_count != count)
    throw CountMismatch("IDX image count " + std::to_string(count) + " != label count " +
                        std::to_string(label_count));

  LabeledData out;
  out.x = DenseMatrix(count, rows * cols);
  const unsigned char* px = img.data() + 16;
  for (std::size_t p = 0; p < count; ++p)
    for (std::size_t j = 0; j < rows * cols; ++j)
      out.x(p, j) = static_cast<double>(px[p * rows * cols + j]) / 255.0;
  out.labels.resize(count);
  for (std::size_t p = 0; p < count; ++p) out.labels[p] = lab[8 + p];
  return out;
}

// Feature file: one JSON header line {rows, cols, label_count}, then
// little-endian float32 features and int32 labels.
inline void save_feature_matrix(const std::string& path, const DenseMatrix& x,
                                const std::vector<int>& labels) {
  if (x.rows() != labels.size())
    throw CountMismatch("save_feature_matrix: row count != label count");
  static_assert(std::endian::native == std::endian::little, "feature files assume little-endian");
  nlohmann::json header = {{"rows", x.rows()}, {"cols", x.cols()}, {"label_count", labels.size()}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << header.dump() << '\n';
  std::vector<float> row(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) row[j] = static_cast<float>(x(i, j));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  for (int lab : labels) {
    const std::int32_t v = lab;
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
}

namespace detail {

inline LabeledData load_feature_binary(const std::string& path,
                                       const std::vector<unsigned char>& bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
  if (nl == bytes.end()) throw HeaderMismatch(path + ": missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(std::string(bytes.begin(), nl));
  } catch (const nlohmann::json::exception& e) {
    throw HeaderMismatch(path + ": bad JSON header: " + e.what());
  }
  if (!header.contains("rows") || !header.contains("cols") || !header.contains("label_count"))
    throw HeaderMismatch(path + ": header must declare rows, cols, label_count");
  const std::size_t rows = header["rows"].get<std::size_t>();
  const std::size_t cols = header["cols"].get<std::size_t>();
  const std::size_t label_count = header["label_count"].get<std::size_t>();
  if (label_count != rows) throw HeaderMismatch(path + ": label_count must equal rows");

  const std::size_t payload = rows * cols * sizeof(float) + label_count * sizeof(std::int32_t);
  const std::size_t offset = static_cast<std::size_t>(nl - bytes.begin()) + 1;
  if (bytes.size() != offset + payload)
    throw HeaderMismatch(path + ": payload size does not match header");

  LabeledData out;
  out.x = DenseMatrix(rows, cols);
  const unsigned char* p = bytes.data() + offset;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      float v;
      std::memcpy(&v, p, sizeof(v));
      p += sizeof(v);
      if (!std::isfinite(v)) throw NonFinite(path + ": non-finite feature value");
      out.x(i, j) = v;
    }
  out.labels.resize(label_count);
  for (std::size_t i = 0; i < label_count; ++i) {
    std::int32_t v;
    std::memcpy(&v, p, sizeof(v));
    p += sizeof(v);
    if (v < 0) throw BadLabel(path + ": negative label");
    out.labels[i] = v;
  }
  return out;
}

inline LabeledData load_feature_csv(const std::string& path,
                                    const std::vector<unsigned char>& bytes) {
  LabeledData out;
  std::vector<double> values;
  std::size_t cols = 0;
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() < 2) throw HeaderMismatch(path + ": CSV rows need features plus a label");
    if (cols == 0) cols = row.size();
    if (row.size() != cols) throw HeaderMismatch(path + ": ragged CSV row");
    const double lab = row.back();
    if (!(lab >= 0.0) || lab != std::floor(lab))
      throw BadLabel(path + ": labels must be nonnegative integers");
    out.labels.push_back(static_cast<int>(lab));
    values.insert(values.end(), row.begin(), row.end() - 1);
    ++rows;
  }
  out.x = DenseMatrix(rows, cols - 1);
  std::copy(values.begin(), values.end(), out.x.data());
  ensure_finite(out.x, path);
  return out;
}

}  // namespace detail

inline LabeledData load_feature_matrix(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.empty()) throw TruncatedFile(path + ": empty file");
  std::size_t first = 0;
  while (first < bytes.size() && std::isspace(bytes[first])) ++first;
  if (first < bytes.size() && bytes[first] == '{') return detail::load_feature_binary(path, bytes);
  return detail::load_feature_csv(path, bytes);
}

namespace detail {

// Shuffled original-label order; column g of the global one-hot axis carries
// original class column_labels[g].
inline std::vector<int> shuffled_classes(std::size_t c, std::uint64_t order_seed) {
  std::vector<int> order(c);
  for (std::size_t i = 0; i < c; ++i) order[i] = static_cast<int>(i);
  Rng rng(order_seed);
  rng.shuffle(order);
  return order;
}

inline TaskBatch build_batch(const LabeledData& data, const std::vector<int>& global_of_label,
                             int task_id, std::size_t col_begin, std::size_t col_end,
                             std::size_t total_classes, Split split) {
  std::vector<std::size_t> rows;
  for (std::size_t p = 0; p < data.labels.size(); ++p) {
    const std::size_t g = static_cast<std::size_t>(global_of_label[data.labels[p]]);
    if (g >= col_begin && g < col_end) rows.push_back(p);
  }
  TaskBatch batch;
  batch.task_id = task_id;
  batch.split = split;
  batch.x = DenseMatrix(rows.size(), data.x.cols());
  batch.y = DenseMatrix(rows.size(), total_classes);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < data.x.cols(); ++j) batch.x(i, j) = data.x(rows[i], j);
    batch.y(i, static_cast<std::size_t>(global_of_label[data.labels[rows[i]]])) = 1.0;
  }
  for (std::size_t g = col_begin; g < col_end; ++g) batch.class_ids.push_back(static_cast<int>(g));
  return batch;
}

}  // namespace detail

// Classes are shuffled by order_seed and partitioned into T consecutive
// groups of C/T; within each task, rows keep their source order.
inline TaskSequence split_classes(const LabeledData& train, const LabeledData& test, std::size_t c,
                                  std::size_t t, std::uint64_t order_seed,
                                  const std::string& dataset_name = "dataset") {
  if (t == 0 || c == 0 || c % t != 0)
    throw IndivisibleSplit("split_classes: T must divide C (got C=" + std::to_string(c) +
                           ", T=" + std::to_string(t) + ")");
  for (const auto* part : {&train, &test}) {
    for (int lab : part->labels) {
      if (lab < 0 || static_cast<std::size_t>(lab) >= c)
        throw BadLabel("split_classes: label " + std::to_string(lab) + " outside 0.." +
                       std::to_string(c - 1));
    }
  }
  std::vector<std::size_t> train_count(c, 0), test_count(c, 0);
  for (int lab : train.labels) ++train_count[static_cast<std::size_t>(lab)];
  for (int lab : test.labels) ++test_count[static_cast<std::size_t>(lab)];
  for (std::size_t k = 0; k < c; ++k) {
    if (train_count[k] == 0 || test_count[k] == 0)
      throw MissingClass("split_classes: class " + std::to_string(k) + " has no samples");
  }

  TaskSequence seq;
  seq.order_seed = order_seed;
  seq.dataset = dataset_name;
  seq.total_classes = c;
  seq.classes_per_task = c / t;
  seq.column_labels = detail::shuffled_classes(c, order_seed);
  std::vector<int> global_of_label(c);
  for (std::size_t g = 0; g < c; ++g)
    global_of_label[static_cast<std::size_t>(seq.column_labels[g])] = static_cast<int>(g);

  for (std::size_t k = 0; k < t; ++k) {
    const std::size_t lo = k * seq.classes_per_task;
    const std::size_t hi = lo + seq.classes_per_task;
    TaskPair pair;
    pair.train = detail::build_batch(train, global_of_label, static_cast<int>(k + 1), lo, hi, c,
                                     Split::train);
    pair.test =
        detail::build_batch(test, global_of_label, static_cast<int>(k + 1), lo, hi, c, Split::test);
    seq.tasks.push_back(std::move(pair));
  }
  return seq;
}

// Single-matrix variant: per-class 80/20 (or train_fraction) split that
// preserves source order within each class.
inline TaskSequence split_classes(const LabeledData& all, std::size_t c, std::size_t t,
                                  std::uint64_t order_seed, double train_fraction = 0.8,
                                  const std::string& dataset_name = "dataset") {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("split_classes: train_fraction must be inside (0, 1)");
  std::vector<std::vector<std::size_t>> per_class(c);
  for (std::size_t p = 0; p < all.labels.size(); ++p) {
    const int lab = all.labels[p];
    if (lab < 0 || static_cast<std::size_t>(lab) >= c)
      throw BadLabel("split_classes: label " + std::to_string(lab) + " outside 0.." +
                     std::to_string(c - 1));
    per_class[static_cast<std::size_t>(lab)].push_back(p);
  }
  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(per_class[k].size())));
    for (std::size_t i = 0; i < per_class[k].size(); ++i)
      (i < n_train ? train_rows : test_rows).push_back(per_class[k][i]);
  }
  auto take = [&](const std::vector<std::size_t>& rows) {
    std::vector<std::size_t> sorted = rows;
    std::sort(sorted.begin(), sorted.end());  // keep source order
    LabeledData part;
    part.x = DenseMatrix(sorted.size(), all.x.cols());
    part.labels.reserve(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      for (std::size_t j = 0; j < all.x.cols(); ++j) part.x(i, j) = all.x(sorted[i], j);
      part.labels.push_back(all.labels[sorted[i]]);
    }
    return part;
  };
  return split_classes(take(train_rows), take(test_rows), c, t, order_seed, dataset_name);
}

// Desk-scale verification data: class c samples are an isotropic unit-variance
// Gaussian at separation * u_c for seeded pseudo-random unit vectors u_c,
// split 80/20 per class.
inline LabeledData synth_gaussian_data(std::size_t c, std::size_t dim, std::size_t n_per_class,
                                       double separation, std::uint64_t seed) {
  if (c == 0 || dim == 0 || n_per_class == 0)
    throw ConfigError("synth_gaussian_data: counts must be positive");
  if (separation < 0.0) throw ConfigError("synth_gaussian_data: separation must be nonnegative");
  Rng rng(seed);
  LabeledData out;
  out.x = DenseMatrix(c * n_per_class, dim);
  out.labels.resize(c * n_per_class);
  for (std::size_t k = 0; k < c; ++k) {
    std::vector<double> u(dim);
    double norm = 0.0;
    for (auto& v : u) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : u) v /= norm > 0 ? norm : 1.0;
    for (std::size_t s = 0; s < n_per_class; ++s) {
      const std::size_t row = k * n_per_class + s;
      for (std::size_t j = 0; j < dim; ++j) out.x(row, j) = separation * u[j] + rng.normal();
      out.labels[row] = static_cast<int>(k);
    }
  }
  return out;
}

inline TaskSequence synth_gaussian_tasks(std::size_t c, std::size_t t, std::size_t dim,
                                         std::size_t n_per_class, double separation,
                                         std::uint64_t seed) {
  return split_classes(synth_gaussian_data(c, dim, n_per_class, separation, seed), c, t, seed, 0.8,
                       "synthetic");
}

inline TaskSequence synth_gaussian_tasks(std::size_t c, std::size_t t, std::size_t dim,
                                         std::size_t n_per_class, double separation,
                                         std::uint64_t seed, std::uint64_t order_seed) {
  return split_classes(synth_gaussian_data(c, dim, n_per_class, separation, seed), c, t, order_seed,
                       0.8, "synthetic");
}

}  // namespace cil
