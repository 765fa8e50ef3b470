#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "advtl/attacks.hpp"
#include "advtl/data.hpp"
#include "advtl/model.hpp"

namespace advtl {

inline constexpr std::size_t kEvalColumns = 5;
inline constexpr std::array<std::string_view, kEvalColumns> kColumnNames = {
    "Natural", "BB-FGSM", "BB-PGD", "WB-FGSM", "WB-PGD"};

enum Column : std::size_t { kNatural = 0, kBbFgsm, kBbPgd, kWbFgsm, kWbPgd };

using Accuracies = std::array<double, kEvalColumns>;

struct EvalRow {
  std::string name;
  Accuracies accuracy{};
  // Rows sharing a group are drawn between the same separators; not part of
  // the CSV.
  std::string group;
};

struct EvalMatrix {
  std::vector<EvalRow> rows;

  // Accuracies in [0, 1], unique row names.
  void validate() const;
  const EvalRow& row(std::string_view name) const;
};

struct ColumnRange {
  double min = 0;
  double max = 0;
};

struct Heatmap {
  std::vector<std::string> names;
  std::vector<std::string> groups;
  std::vector<Accuracies> values;
  std::array<ColumnRange, kEvalColumns> range{};
};

// Accuracy of `net` on adversarial examples crafted against `net` itself.
double white_box_eval(const BlockNetwork& net, const LabeledDataset& test, const AttackConfig& cfg,
                      AttackKind kind);

// Adversarial test inputs crafted against `surrogate` with the true labels,
// whatever label policy `cfg` names.
Tensor black_box_examples(const BlockNetwork& surrogate, const LabeledDataset& test,
                          const AttackConfig& cfg, AttackKind kind);

double black_box_eval(const BlockNetwork& net, const BlockNetwork& surrogate,
                      const LabeledDataset& test, const AttackConfig& cfg, AttackKind kind);

// Black-box sets are generated once per (surrogate, test set, config) and
// shared by every row of a matrix.
struct BlackBoxSets {
  Tensor fgsm;
  Tensor pgd;
};

BlackBoxSets make_black_box_sets(const BlockNetwork& surrogate, const LabeledDataset& test,
                                 const AttackConfig& cfg_fgsm, const AttackConfig& cfg_pgd);

struct NamedNetwork {
  std::string name;
  const BlockNetwork* net;
  std::string group;
};

Accuracies evaluate_row(const BlockNetwork& net, const BlackBoxSets& bb, const LabeledDataset& test,
                        const AttackConfig& cfg_fgsm, const AttackConfig& cfg_pgd);

EvalMatrix build_matrix(std::span<const NamedNetwork> nets, const BlockNetwork& surrogate,
                        const LabeledDataset& test, const AttackConfig& cfg_fgsm,
                        const AttackConfig& cfg_pgd);

// Per column v -> (v - min) / (max - min); a constant column maps to zeros.
Heatmap normalize_columns(const EvalMatrix& m);

struct ReportFiles {
  std::filesystem::path matrix_csv;
  std::filesystem::path heatmap_csv;
  std::filesystem::path heatmap_svg;
};

// matrix.csv (percent, one decimal), heatmap.csv (three decimals) and
// heatmap.svg. Creates `outdir` if needed.
ReportFiles render_report(const EvalMatrix& m, const Heatmap& h, const std::filesystem::path& outdir);

std::string matrix_csv(const EvalMatrix& m);
std::string heatmap_csv(const Heatmap& h);
std::string heatmap_svg(const Heatmap& h);

// Parses matrix.csv back into fractions.
EvalMatrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace advtl
