#include "advtl/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "advtl/training.hpp"

namespace advtl {

namespace {

void check_test(const BlockNetwork& net, const LabeledDataset& test) {
  if (test.size() == 0) throw ValidationError("evaluation set is empty");
  if (test.dim() != net.arch().input_dim) {
    throw ValidationError(fmt::format("test width {} does not match network input width {}",
                                      test.dim(), net.arch().input_dim));
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot open for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError(tmp, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path, "cannot move report into place: " + ec.message());
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Light yellow at 0 through orange to dark red at 1.
std::string cell_colour(double v) {
  static constexpr std::array<std::array<double, 3>, 3> stops = {{
      {255, 255, 204},
      {253, 141, 60},
      {128, 0, 38},
  }};
  v = std::clamp(v, 0.0, 1.0);
  const double pos = v * 2.0;
  const auto lo = static_cast<std::size_t>(std::min(pos, 1.0));
  const double t = pos - static_cast<double>(lo);
  std::array<int, 3> rgb{};
  for (std::size_t k = 0; k < 3; ++k) {
    rgb[k] = static_cast<int>(std::lround(stops[lo][k] + t * (stops[lo + 1][k] - stops[lo][k])));
  }
  return fmt::format("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2]);
}

}  // namespace

void EvalMatrix::validate() const {
  std::set<std::string> names;
  for (const auto& r : rows) {
    if (!names.insert(r.name).second) {
      throw ValidationError(fmt::format("matrix: duplicate row '{}'", r.name));
    }
    for (std::size_t c = 0; c < kEvalColumns; ++c) {
      const double v = r.accuracy[c];
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError(
            fmt::format("matrix: {} {} = {} outside [0, 1]", r.name, kColumnNames[c], v));
      }
    }
  }
}

const EvalRow& EvalMatrix::row(std::string_view name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw ValidationError(fmt::format("matrix has no row '{}'", name));
}

double white_box_eval(const BlockNetwork& net, const LabeledDataset& test, const AttackConfig& cfg,
                      AttackKind kind) {
  check_test(net, test);
  return accuracy(net, attack(kind, net, test.inputs, test.labels, cfg), test.labels);
}

Tensor black_box_examples(const BlockNetwork& surrogate, const LabeledDataset& test,
                          const AttackConfig& cfg, AttackKind kind) {
  check_test(surrogate, test);
  AttackConfig true_labels = cfg;
  true_labels.label_policy = LabelPolicy::TrueLabel;
  return attack(kind, surrogate, test.inputs, test.labels, true_labels);
}

double black_box_eval(const BlockNetwork& net, const BlockNetwork& surrogate,
                      const LabeledDataset& test, const AttackConfig& cfg, AttackKind kind) {
  if (net.arch().input_dim != surrogate.arch().input_dim) {
    throw ValidationError(fmt::format("surrogate input width {} differs from network input width {}",
                                      surrogate.arch().input_dim, net.arch().input_dim));
  }
  check_test(net, test);
  return accuracy(net, black_box_examples(surrogate, test, cfg, kind), test.labels);
}

BlackBoxSets make_black_box_sets(const BlockNetwork& surrogate, const LabeledDataset& test,
                                 const AttackConfig& cfg_fgsm, const AttackConfig& cfg_pgd) {
  return BlackBoxSets{black_box_examples(surrogate, test, cfg_fgsm, AttackKind::Fgsm),
                      black_box_examples(surrogate, test, cfg_pgd, AttackKind::Pgd)};
}

Accuracies evaluate_row(const BlockNetwork& net, const BlackBoxSets& bb, const LabeledDataset& test,
                        const AttackConfig& cfg_fgsm, const AttackConfig& cfg_pgd) {
  check_test(net, test);
  Accuracies a{};
  a[kNatural] = evaluate_accuracy(net, test);
  a[kBbFgsm] = accuracy(net, bb.fgsm, test.labels);
  a[kBbPgd] = accuracy(net, bb.pgd, test.labels);
  a[kWbFgsm] = white_box_eval(net, test, cfg_fgsm, AttackKind::Fgsm);
  a[kWbPgd] = white_box_eval(net, test, cfg_pgd, AttackKind::Pgd);
  return a;
}

EvalMatrix build_matrix(std::span<const NamedNetwork> nets, const BlockNetwork& surrogate,
                        const LabeledDataset& test, const AttackConfig& cfg_fgsm,
                        const AttackConfig& cfg_pgd) {
  if (nets.empty()) throw ValidationError("build_matrix: no networks to evaluate");
  for (const auto& n : nets) {
    if (n.net->arch().input_dim != surrogate.arch().input_dim) {
      throw ValidationError(fmt::format("{}: input width {} differs from surrogate input width {}",
                                        n.name, n.net->arch().input_dim,
                                        surrogate.arch().input_dim));
    }
  }
  const BlackBoxSets bb = make_black_box_sets(surrogate, test, cfg_fgsm, cfg_pgd);
  EvalMatrix m;
  for (const auto& n : nets) {
    m.rows.push_back(EvalRow{n.name, evaluate_row(*n.net, bb, test, cfg_fgsm, cfg_pgd), n.group});
  }
  m.validate();
  return m;
}

Heatmap normalize_columns(const EvalMatrix& m) {
  if (m.rows.empty()) throw ValidationError("normalize_columns: matrix has no rows");
  Heatmap h;
  for (std::size_t c = 0; c < kEvalColumns; ++c) {
    double lo = m.rows.front().accuracy[c];
    double hi = lo;
    for (const auto& r : m.rows) {
      lo = std::min(lo, r.accuracy[c]);
      hi = std::max(hi, r.accuracy[c]);
    }
    h.range[c] = ColumnRange{lo, hi};
  }
  for (const auto& r : m.rows) {
    Accuracies v{};
    for (std::size_t c = 0; c < kEvalColumns; ++c) {
      const auto [lo, hi] = h.range[c];
      v[c] = hi > lo ? (r.accuracy[c] - lo) / (hi - lo) : 0.0;
    }
    h.names.push_back(r.name);
    h.groups.push_back(r.group);
    h.values.push_back(v);
  }
  return h;
}

std::string matrix_csv(const EvalMatrix& m) {
  std::string out = "network";
  for (auto c : kColumnNames) out += fmt::format(",{}", c);
  out += '\n';
  for (const auto& r : m.rows) {
    out += r.name;
    for (double v : r.accuracy) out += fmt::format(",{:.1f}", 100.0 * v);
    out += '\n';
  }
  return out;
}

std::string heatmap_csv(const Heatmap& h) {
  std::string out = "network";
  for (auto c : kColumnNames) out += fmt::format(",{}", c);
  out += '\n';
  for (std::size_t i = 0; i < h.names.size(); ++i) {
    out += h.names[i];
    for (double v : h.values[i]) out += fmt::format(",{:.3f}", v);
    out += '\n';
  }
  return out;
}

std::string heatmap_svg(const Heatmap& h) {
  constexpr int kLabelWidth = 190;
  constexpr int kCellWidth = 96;
  constexpr int kCellHeight = 24;
  constexpr int kHeaderHeight = 48;
  constexpr int kMargin = 8;
  const int rows = static_cast<int>(h.names.size());
  const int width = kMargin * 2 + kLabelWidth + kCellWidth * static_cast<int>(kEvalColumns);
  const int height = kMargin * 2 + kHeaderHeight + kCellHeight * rows;

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
      "font-family=\"Helvetica, Arial, sans-serif\" font-size=\"12\">\n",
      width, height, width, height);
  s += fmt::format("  <rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n", width,
                   height);

  const int x0 = kMargin + kLabelWidth;
  const int y0 = kMargin + kHeaderHeight;
  for (std::size_t c = 0; c < kEvalColumns; ++c) {
    const int cx = x0 + kCellWidth * static_cast<int>(c) + kCellWidth / 2;
    s += fmt::format(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-weight=\"bold\">{}</text>\n", cx,
        kMargin + 16, kColumnNames[c]);
    s += fmt::format(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{:.1f}% / {:.1f}%</text>\n",
        cx, kMargin + 34, 100.0 * h.range[c].min, 100.0 * h.range[c].max);
  }

  for (int i = 0; i < rows; ++i) {
    const int y = y0 + kCellHeight * i;
    const auto& name = h.names[static_cast<std::size_t>(i)];
    s += fmt::format("  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", x0 - 6,
                     y + kCellHeight / 2 + 4, xml_escape(name));
    for (std::size_t c = 0; c < kEvalColumns; ++c) {
      const double v = h.values[static_cast<std::size_t>(i)][c];
      const int x = x0 + kCellWidth * static_cast<int>(c);
      s += fmt::format(
          "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" stroke=\"#ffffff\"/>\n",
          x, y, kCellWidth, kCellHeight, cell_colour(v));
      s += fmt::format("  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{}\">{:.3f}</text>\n",
                       x + kCellWidth / 2, y + kCellHeight / 2 + 4, v > 0.6 ? "#ffffff" : "#000000",
                       v);
    }
    if (i > 0 && h.groups[static_cast<std::size_t>(i)] != h.groups[static_cast<std::size_t>(i - 1)]) {
      s += fmt::format(
          "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#d00000\" stroke-width=\"2\"/>\n",
          kMargin, y, width - kMargin, y);
    }
  }

  // Clean accuracy | robustness columns.
  s += fmt::format(
      "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#d00000\" stroke-width=\"2\"/>\n",
      x0 + kCellWidth, kMargin, x0 + kCellWidth, height - kMargin);
  s += "</svg>\n";
  return s;
}

ReportFiles render_report(const EvalMatrix& m, const Heatmap& h, const std::filesystem::path& outdir) {
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw IoError(outdir, "cannot create report directory: " + ec.message());
  ReportFiles files{outdir / "matrix.csv", outdir / "heatmap.csv", outdir / "heatmap.svg"};
  write_text(files.matrix_csv, matrix_csv(m));
  write_text(files.heatmap_csv, heatmap_csv(h));
  write_text(files.heatmap_svg, heatmap_svg(h));
  return files;
}

EvalMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path, "cannot open matrix");
  std::string line;
  std::size_t lineno = 0;
  EvalMatrix m;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != kEvalColumns + 1) {
      throw ParseError(lineno, fmt::format("expected {} cells, found {}", kEvalColumns + 1, cells.size()));
    }
    if (lineno == 1) {
      for (std::size_t c = 0; c < kEvalColumns; ++c) {
        if (cells[c + 1] != kColumnNames[c]) {
          throw ParseError(lineno, fmt::format("column {} is '{}', expected '{}'", c + 2,
                                               cells[c + 1], kColumnNames[c]));
        }
      }
      continue;
    }
    EvalRow row;
    row.name = cells[0];
    for (std::size_t c = 0; c < kEvalColumns; ++c) {
      const auto& cell = cells[c + 1];
      double pct = 0;
      const auto [p, err] = std::from_chars(cell.data(), cell.data() + cell.size(), pct);
      if (err != std::errc{} || p != cell.data() + cell.size()) {
        throw ParseError(lineno, fmt::format("'{}' is not a number", cell));
      }
      row.accuracy[c] = pct / 100.0;
    }
    m.rows.push_back(std::move(row));
  }
  m.validate();
  return m;
}

}  // namespace advtl
