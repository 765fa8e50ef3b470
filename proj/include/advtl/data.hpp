#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "advtl/tensor.hpp"
#include "json.hpp"

namespace advtl {

// Inputs in [-1, 1]^d, one row per example, with labels in [0, num_classes).
struct LabeledDataset {
  Tensor inputs;
  Labels labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  int dim() const { return static_cast<int>(inputs.cols()); }

  // Throws ValidationError naming the first offending row.
  void validate() const;
  LabeledDataset subset(std::span<const std::size_t> rows) const;

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
    return a.num_classes == b.num_classes && a.labels == b.labels &&
           exactly_equal(a.inputs, b.inputs);
  }
};

// Affine map of [lo, hi] onto [-1, 1].
Tensor rescale(const Tensor& raw, double lo, double hi);

struct SynthOptions {
  std::uint64_t seed = 0;
  int dim = 128;
  int superclasses = 5;
  int fine_per_super = 3;
  int train_per_class = 200;
  int test_per_class = 100;
  double spread = 0.1;
  // l2 norm of every superclass mean.
  double radius = 0.8;
  // Expected l2 norm of a fine-class offset from its superclass mean.
  double offset_scale = 0.5;

  void validate() const;
  friend bool operator==(const SynthOptions&, const SynthOptions&) = default;
};

// Everything needed to regenerate a TaskPair; stored alongside each run.
struct GenerativeRecord {
  SynthOptions options;
  Tensor superclass_means;  // superclasses x dim
  Tensor fine_means;        // superclasses * fine_per_super x dim, grouped by superclass
  std::vector<int> source_fine;  // source label -> fine class index
  std::vector<int> target_fine;  // target label -> fine class index

  nlohmann::json to_json() const;
  static GenerativeRecord from_json(const nlohmann::json& j);

  friend bool operator==(const GenerativeRecord& a, const GenerativeRecord& b) {
    return a.options == b.options && a.source_fine == b.source_fine &&
           a.target_fine == b.target_fine && exactly_equal(a.superclass_means, b.superclass_means) &&
           exactly_equal(a.fine_means, b.fine_means);
  }
};

struct TaskPair {
  LabeledDataset source_train;
  LabeledDataset source_test;
  LabeledDataset target_train;
  LabeledDataset target_test;
  GenerativeRecord record;

  friend bool operator==(const TaskPair&, const TaskPair&) = default;
};

// Hierarchical Gaussian mixture. Superclass means lie on a sphere; each
// superclass owns fine_per_super fine classes. The source task labels the
// first ceil(f/2) fine classes of every superclass, the target task the
// remaining floor(f/2), so the tasks are disjoint but share superclass
// structure. Samples are clamped into [-1, 1].
TaskPair synth_task_pair(const SynthOptions& options);
TaskPair synth_task_pair(std::uint64_t seed, int dim, int superclasses, int fine_per_super,
                         int n_per_class, double spread);

struct RescaleRange {
  double lo;
  double hi;
};

// Rows are `label,v1,...,vd`. With `rescale`, values are mapped from
// [lo, hi] into [-1, 1] before validation.
LabeledDataset load_csv(const std::filesystem::path& path, int num_classes,
                        std::optional<RescaleRange> rescale = std::nullopt);
void write_csv(const LabeledDataset& data, const std::filesystem::path& path);

}  // namespace advtl
