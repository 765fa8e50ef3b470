#include "advtl/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <string_view>

#include "advtl/rng.hpp"

namespace advtl {

namespace {

LabeledDataset sample_task(const Tensor& fine_means, const std::vector<int>& fine_ids,
                           int per_class, double spread, std::uint64_t seed) {
  const auto dim = fine_means.cols();
  LabeledDataset out;
  out.num_classes = static_cast<int>(fine_ids.size());
  out.inputs.resize(static_cast<Eigen::Index>(fine_ids.size()) * per_class, dim);
  out.labels.reserve(static_cast<std::size_t>(out.inputs.rows()));
  Rng rng(seed);
  Eigen::Index row = 0;
  for (std::size_t label = 0; label < fine_ids.size(); ++label) {
    const auto mean = fine_means.row(fine_ids[label]);
    for (int i = 0; i < per_class; ++i, ++row) {
      for (Eigen::Index k = 0; k < dim; ++k) {
        out.inputs(row, k) = std::clamp(mean(k) + spread * rng.normal(), -1.0, 1.0);
      }
      out.labels.push_back(static_cast<int>(label));
    }
  }
  return out;
}

Tensor json_to_tensor(const nlohmann::json& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = n == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(rows.at(0).size());
  Tensor t(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows.at(static_cast<std::size_t>(i));
    if (static_cast<Eigen::Index>(row.size()) != d) throw ValidationError("ragged matrix in record");
    for (Eigen::Index j = 0; j < d; ++j) t(i, j) = row.at(static_cast<std::size_t>(j)).get<double>();
  }
  return t;
}

nlohmann::json tensor_to_json(const Tensor& t) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < t.cols(); ++j) row.push_back(t(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

void LabeledDataset::validate() const {
  if (num_classes < 1) throw ValidationError(fmt::format("dataset: num_classes {} < 1", num_classes));
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw ValidationError(
        fmt::format("dataset: {} input rows but {} labels", inputs.rows(), labels.size()));
  }
  for (Eigen::Index i = 0; i < inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
      const double v = inputs(i, j);
      if (!(v >= -1.0 && v <= 1.0)) {
        throw ValidationError(fmt::format("dataset: row {} column {} value {} outside [-1, 1]", i,
                                          j, v));
      }
    }
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) {
      throw ValidationError(
          fmt::format("dataset: row {} label {} outside [0, {})", i, y, num_classes));
    }
  }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), inputs.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Eigen::Index>(i)) = inputs.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

Tensor rescale(const Tensor& raw, double lo, double hi) {
  if (!(hi > lo)) throw ValidationError(fmt::format("rescale: need hi > lo, got [{}, {}]", lo, hi));
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const double v = raw.data()[i];
    if (!(v >= lo && v <= hi)) {
      throw ValidationError(fmt::format("rescale: value {} at index {} outside [{}, {}]", v, i, lo, hi));
    }
  }
  Tensor out = (2.0 * (raw.array() - lo) / (hi - lo) - 1.0).matrix();
  // Rounding can push the endpoints a hair past +-1.
  return out.cwiseMax(-1.0).cwiseMin(1.0);
}

void SynthOptions::validate() const {
  if (dim < 1) throw ValidationError(fmt::format("synth: dim {} < 1", dim));
  if (superclasses < 1) throw ValidationError(fmt::format("synth: superclasses {} < 1", superclasses));
  if (fine_per_super < 2) {
    throw ValidationError(fmt::format(
        "synth: fine_per_super {} < 2 leaves no fine classes for the target task", fine_per_super));
  }
  if (train_per_class < 1 || test_per_class < 1) {
    throw ValidationError(fmt::format("synth: per-class counts must be >= 1 (train {}, test {})",
                                      train_per_class, test_per_class));
  }
  if (!(spread > 0.0)) throw ValidationError(fmt::format("synth: spread {} must be > 0", spread));
  if (!(radius > 0.0)) throw ValidationError(fmt::format("synth: radius {} must be > 0", radius));
  if (!(offset_scale >= 0.0)) {
    throw ValidationError(fmt::format("synth: offset_scale {} must be >= 0", offset_scale));
  }
}

TaskPair synth_task_pair(const SynthOptions& o) {
  o.validate();
  GenerativeRecord rec;
  rec.options = o;
  Rng rng(derive_seed(o.seed, "means"));

  rec.superclass_means.resize(o.superclasses, o.dim);
  for (int s = 0; s < o.superclasses; ++s) {
    auto row = rec.superclass_means.row(s);
    for (int k = 0; k < o.dim; ++k) row(k) = rng.normal();
    row *= o.radius / row.norm();
  }

  const double offset_std = o.offset_scale / std::sqrt(static_cast<double>(o.dim));
  rec.fine_means.resize(o.superclasses * o.fine_per_super, o.dim);
  const int source_half = (o.fine_per_super + 1) / 2;
  for (int s = 0; s < o.superclasses; ++s) {
    for (int j = 0; j < o.fine_per_super; ++j) {
      const int fine = s * o.fine_per_super + j;
      for (int k = 0; k < o.dim; ++k) {
        rec.fine_means(fine, k) = rec.superclass_means(s, k) + offset_std * rng.normal();
      }
      (j < source_half ? rec.source_fine : rec.target_fine).push_back(fine);
    }
  }

  TaskPair pair;
  pair.source_train = sample_task(rec.fine_means, rec.source_fine, o.train_per_class, o.spread,
                                  derive_seed(o.seed, "source_train"));
  pair.source_test = sample_task(rec.fine_means, rec.source_fine, o.test_per_class, o.spread,
                                 derive_seed(o.seed, "source_test"));
  pair.target_train = sample_task(rec.fine_means, rec.target_fine, o.train_per_class, o.spread,
                                  derive_seed(o.seed, "target_train"));
  pair.target_test = sample_task(rec.fine_means, rec.target_fine, o.test_per_class, o.spread,
                                 derive_seed(o.seed, "target_test"));
  pair.record = std::move(rec);
  return pair;
}

TaskPair synth_task_pair(std::uint64_t seed, int dim, int superclasses, int fine_per_super,
                         int n_per_class, double spread) {
  SynthOptions o;
  o.seed = seed;
  o.dim = dim;
  o.superclasses = superclasses;
  o.fine_per_super = fine_per_super;
  o.train_per_class = n_per_class;
  o.test_per_class = n_per_class;
  o.spread = spread;
  return synth_task_pair(o);
}

nlohmann::json GenerativeRecord::to_json() const {
  const auto& o = options;
  return {
      {"options",
       {{"seed", o.seed},
        {"dim", o.dim},
        {"superclasses", o.superclasses},
        {"fine_per_super", o.fine_per_super},
        {"train_per_class", o.train_per_class},
        {"test_per_class", o.test_per_class},
        {"spread", o.spread},
        {"radius", o.radius},
        {"offset_scale", o.offset_scale}}},
      {"superclass_means", tensor_to_json(superclass_means)},
      {"fine_means", tensor_to_json(fine_means)},
      {"source_fine", source_fine},
      {"target_fine", target_fine},
  };
}

GenerativeRecord GenerativeRecord::from_json(const nlohmann::json& j) {
  GenerativeRecord rec;
  const auto& o = j.at("options");
  rec.options.seed = o.at("seed").get<std::uint64_t>();
  rec.options.dim = o.at("dim").get<int>();
  rec.options.superclasses = o.at("superclasses").get<int>();
  rec.options.fine_per_super = o.at("fine_per_super").get<int>();
  rec.options.train_per_class = o.at("train_per_class").get<int>();
  rec.options.test_per_class = o.at("test_per_class").get<int>();
  rec.options.spread = o.at("spread").get<double>();
  rec.options.radius = o.at("radius").get<double>();
  rec.options.offset_scale = o.at("offset_scale").get<double>();
  rec.superclass_means = json_to_tensor(j.at("superclass_means"));
  rec.fine_means = json_to_tensor(j.at("fine_means"));
  rec.source_fine = j.at("source_fine").get<std::vector<int>>();
  rec.target_fine = j.at("target_fine").get<std::vector<int>>();
  return rec;
}

LabeledDataset load_csv(const std::filesystem::path& path, int num_classes,
                        std::optional<RescaleRange> range) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open dataset");
  if (num_classes < 1) throw ValidationError(fmt::format("load_csv: num_classes {} < 1", num_classes));

  std::vector<std::vector<double>> rows;
  Labels labels;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view text = trim(line);
    if (text.empty()) continue;
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = text.find(',', start);
      cells.push_back(trim(text.substr(start, comma - start)));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (cells.size() < 2) throw ParseError(lineno, "expected `label,v1,...,vd`");
    if (width == 0) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw ParseError(lineno, fmt::format("row has {} cells, previous rows have {}", cells.size(), width));
    }
    int label = 0;
    {
      const auto cell = cells[0];
      const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
      if (ec != std::errc{} || p != cell.data() + cell.size()) {
        throw ParseError(lineno, fmt::format("label '{}' is not an integer", cell));
      }
    }
    if (label < 0 || label >= num_classes) {
      throw ParseError(lineno, fmt::format("label {} outside [0, {})", label, num_classes));
    }
    std::vector<double> values;
    values.reserve(cells.size() - 1);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      double v = 0;
      const auto cell = cells[c];
      const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || p != cell.data() + cell.size() || !std::isfinite(v)) {
        throw ParseError(lineno, fmt::format("column {}: '{}' is not a finite number", c + 1, cell));
      }
      if (range) {
        if (!(v >= range->lo && v <= range->hi)) {
          throw ParseError(lineno, fmt::format("column {}: {} outside [{}, {}]", c + 1, v,
                                               range->lo, range->hi));
        }
      } else if (!(v >= -1.0 && v <= 1.0)) {
        throw ParseError(lineno, fmt::format("column {}: {} outside [-1, 1]", c + 1, v));
      }
      values.push_back(v);
    }
    rows.push_back(std::move(values));
    labels.push_back(label);
  }
  if (rows.empty()) throw ValidationError(fmt::format("{}: no data rows", path.string()));

  LabeledDataset out;
  out.num_classes = num_classes;
  out.labels = std::move(labels);
  out.inputs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      out.inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  if (range) out.inputs = rescale(out.inputs, range->lo, range->hi);
  out.validate();
  return out;
}

void write_csv(const LabeledDataset& data, const std::filesystem::path& path) {
  data.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  fmt::memory_buffer buf;
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    fmt::format_to(std::back_inserter(buf), "{}", data.labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) {
      // Shortest representation that round-trips exactly.
      fmt::format_to(std::back_inserter(buf), ",{}", data.inputs(i, j));
    }
    buf.push_back('\n');
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError(path, "write failed");
}

}  // namespace advtl
