#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <fstream>
#include <sstream>

#include "advtl/evaluation.hpp"
#include "advtl/training.hpp"
#include "oracles.hpp"
#include "reference_matrix.hpp"
#include "support.hpp"

using namespace advtl;
using testing_support::arch;
using testing_support::TempDir;

namespace {

EvalMatrix reference_matrix() {
  EvalMatrix m;
  for (const auto& r : reference::kMatrix) {
    EvalRow row;
    row.name = std::string(r.name);
    for (std::size_t c = 0; c < kEvalColumns; ++c) row.accuracy[c] = r.percent[c] / 100.0;
    m.rows.push_back(row);
  }
  return m;
}

struct Fixture {
  TaskPair task = testing_support::tiny_task(3);
  BlockNetwork net;
  BlockNetwork surrogate;

  Fixture() {
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.batch_clean = 20;
    cfg.learning_rate = 0.05;
    cfg.seed = 1;
    net = train(BlockNetwork::init(arch(16, {{16}, {16}}, task.target_train.num_classes), 1),
                task.target_train, cfg)
              .net;
    surrogate = train(BlockNetwork::init(arch(16, {{24}}, task.target_train.num_classes), 2),
                      task.target_train, cfg)
                    .net;
  }
};

AttackConfig fgsm_cfg(double eps = 0.0625) {
  AttackConfig c;
  c.epsilon = eps;
  c.alpha = eps > 0 ? eps : 1.0;
  c.iterations = 1;
  return c;
}

AttackConfig pgd_cfg(double eps = 0.0625) {
  AttackConfig c;
  c.epsilon = eps;
  c.alpha = eps > 0 ? eps / 4 : 1.0;
  return c;
}

}  // namespace

TEST(WhiteBox, ZeroEpsilonEqualsNatural) {
  Fixture f;
  const double natural = evaluate_accuracy(f.net, f.task.target_test);
  EXPECT_EQ(white_box_eval(f.net, f.task.target_test, fgsm_cfg(0), AttackKind::Fgsm), natural);
  EXPECT_EQ(white_box_eval(f.net, f.task.target_test, pgd_cfg(0), AttackKind::Pgd), natural);
}

TEST(WhiteBox, PgdNoWeakerThanFgsmOnCleanNets) {
  Fixture f;
  for (double eps : {0.05, 0.1, 0.2}) {
    const double wf = white_box_eval(f.net, f.task.target_test, fgsm_cfg(eps), AttackKind::Fgsm);
    const double wp = white_box_eval(f.net, f.task.target_test, pgd_cfg(eps), AttackKind::Pgd);
    EXPECT_GE(wf, 0.0);
    EXPECT_LE(wf, 1.0);
    EXPECT_LE(wp, wf + 0.02) << eps;
  }
}

TEST(BlackBox, DegenerateSurrogateEqualsWhiteBox) {
  Fixture f;
  for (auto kind : {AttackKind::Fgsm, AttackKind::Pgd}) {
    const auto cfg = kind == AttackKind::Fgsm ? fgsm_cfg() : pgd_cfg();
    EXPECT_EQ(black_box_eval(f.net, f.net, f.task.target_test, cfg, kind),
              white_box_eval(f.net, f.task.target_test, cfg, kind));
  }
}

TEST(BlackBox, ZeroEpsilonEqualsNatural) {
  Fixture f;
  EXPECT_EQ(black_box_eval(f.net, f.surrogate, f.task.target_test, pgd_cfg(0), AttackKind::Pgd),
            evaluate_accuracy(f.net, f.task.target_test));
}

TEST(BlackBox, UsesTrueLabelsRegardlessOfPolicy) {
  Fixture f;
  auto predicted = pgd_cfg();
  predicted.label_policy = LabelPolicy::PredictedLabel;
  EXPECT_TRUE(exactly_equal(black_box_examples(f.surrogate, f.task.target_test, predicted, AttackKind::Pgd),
                            black_box_examples(f.surrogate, f.task.target_test, pgd_cfg(), AttackKind::Pgd)));
}

TEST(BlackBox, CachedSetsMatchRegeneration) {
  Fixture f;
  const auto a = make_black_box_sets(f.surrogate, f.task.target_test, fgsm_cfg(), pgd_cfg());
  const auto b = make_black_box_sets(f.surrogate, f.task.target_test, fgsm_cfg(), pgd_cfg());
  EXPECT_TRUE(exactly_equal(a.fgsm, b.fgsm));
  EXPECT_TRUE(exactly_equal(a.pgd, b.pgd));
  EXPECT_TRUE(exactly_equal(a.pgd, black_box_examples(f.surrogate, f.task.target_test, pgd_cfg(), AttackKind::Pgd)));
}

TEST(BlackBox, InputWidthMismatch) {
  Fixture f;
  const auto other = BlockNetwork::init(arch(8, {{4}}, f.task.target_train.num_classes), 1);
  EXPECT_THROW(black_box_eval(f.net, other, f.task.target_test, pgd_cfg(), AttackKind::Pgd), ValidationError);
}

TEST(BuildMatrix, MatchesCellByCellCalls) {
  Fixture f;
  const auto& test = f.task.target_test;
  const std::vector<NamedNetwork> nets{{"a", &f.net, "baseline"}, {"b", &f.surrogate, "full"}};
  const auto m = build_matrix(nets, f.surrogate, test, fgsm_cfg(), pgd_cfg());
  ASSERT_EQ(m.rows.size(), 2u);
  for (std::size_t i = 0; i < nets.size(); ++i) {
    const auto& net = *nets[i].net;
    const auto& acc = m.rows[i].accuracy;
    EXPECT_EQ(m.rows[i].name, nets[i].name);
    EXPECT_EQ(m.rows[i].group, nets[i].group);
    EXPECT_EQ(acc[kNatural], evaluate_accuracy(net, test));
    EXPECT_EQ(acc[kBbFgsm], black_box_eval(net, f.surrogate, test, fgsm_cfg(), AttackKind::Fgsm));
    EXPECT_EQ(acc[kBbPgd], black_box_eval(net, f.surrogate, test, pgd_cfg(), AttackKind::Pgd));
    EXPECT_EQ(acc[kWbFgsm], white_box_eval(net, test, fgsm_cfg(), AttackKind::Fgsm));
    EXPECT_EQ(acc[kWbPgd], white_box_eval(net, test, pgd_cfg(), AttackKind::Pgd));
  }
  const auto again = build_matrix(nets, f.surrogate, test, fgsm_cfg(), pgd_cfg());
  EXPECT_EQ(matrix_csv(again), matrix_csv(m));
  EXPECT_THROW(build_matrix({}, f.surrogate, test, fgsm_cfg(), pgd_cfg()), ValidationError);
}

TEST(BuildMatrix, ZeroEpsilonCollapsesToNatural) {
  Fixture f;
  const std::vector<NamedNetwork> nets{{"a", &f.net, "baseline"}};
  const auto m = build_matrix(nets, f.surrogate, f.task.target_test, fgsm_cfg(0), pgd_cfg(0));
  for (std::size_t c = 1; c < kEvalColumns; ++c) EXPECT_EQ(m.rows[0].accuracy[c], m.rows[0].accuracy[kNatural]);
}

TEST(Normalize, ReferenceMatrixPinnedValues) {
  const auto h = normalize_columns(reference_matrix());
  EXPECT_NEAR(h.values[15][kWbPgd], 0.874, 0.005);  // R_pgd
  EXPECT_NEAR(h.values[0][kNatural], 0.998, 0.005);  // R_nat
  EXPECT_DOUBLE_EQ(h.range[kNatural].min, 0.522);
  EXPECT_DOUBLE_EQ(h.range[kNatural].max, 0.926);
  EXPECT_DOUBLE_EQ(h.range[kWbPgd].max, 0.413);
}

TEST(Normalize, AgreesWithLonghandOracle) {
  const auto m = reference_matrix();
  std::vector<std::vector<double>> rows;
  for (const auto& r : m.rows) rows.emplace_back(r.accuracy.begin(), r.accuracy.end());
  const auto want = oracle::min_max(rows);
  const auto h = normalize_columns(m);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < kEvalColumns; ++c) EXPECT_NEAR(h.values[i][c], want[i][c], 1e-12);
  }
}

TEST(Normalize, ExtremesAreExactAndOrderPreserved) {
  const auto m = reference_matrix();
  const auto h = normalize_columns(m);
  for (std::size_t c = 0; c < kEvalColumns; ++c) {
    bool has0 = false, has1 = false;
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
      has0 |= h.values[i][c] == 0.0;
      has1 |= h.values[i][c] == 1.0;
      for (std::size_t j = 0; j < m.rows.size(); ++j) {
        if (m.rows[i].accuracy[c] < m.rows[j].accuracy[c]) {
          EXPECT_LT(h.values[i][c], h.values[j][c]);
        }
      }
    }
    EXPECT_TRUE(has0 && has1) << c;
  }
}

TEST(Normalize, DegenerateColumnIsZero) {
  EvalMatrix m;
  m.rows.push_back({"a", {0.5, 0.3, 0.3, 0.1, 0.0}, ""});
  m.rows.push_back({"b", {0.5, 0.6, 0.2, 0.1, 0.0}, ""});
  const auto h = normalize_columns(m);
  for (const auto& v : h.values) {
    EXPECT_EQ(v[kNatural], 0.0);
    EXPECT_EQ(v[kWbFgsm], 0.0);
  }
  EXPECT_THROW(normalize_columns(EvalMatrix{}), ValidationError);
}

TEST(Normalize, ConstantShiftInvariant) {
  // Dyadic entries keep the shifted arithmetic exact.
  EvalMatrix m;
  m.rows.push_back({"a", {0.25, 0.5, 0.125, 0.375, 0.0}, ""});
  m.rows.push_back({"b", {0.75, 0.25, 0.5, 0.0625, 0.125}, ""});
  m.rows.push_back({"c", {0.5, 0.0, 0.25, 0.25, 0.0625}, ""});
  EvalMatrix shifted = m;
  for (auto& r : shifted.rows) {
    for (auto& v : r.accuracy) v += 0.125;
  }
  const auto a = normalize_columns(m);
  const auto b = normalize_columns(shifted);
  for (std::size_t i = 0; i < m.rows.size(); ++i) EXPECT_EQ(a.values[i], b.values[i]);
}

TEST(Report, FilesRoundTripAndParse) {
  TempDir dir("report");
  const auto m = reference_matrix();
  const auto files = render_report(m, normalize_columns(m), dir / "nested" / "reports");
  ASSERT_TRUE(std::filesystem::exists(files.matrix_csv));
  ASSERT_TRUE(std::filesystem::exists(files.heatmap_csv));
  ASSERT_TRUE(std::filesystem::exists(files.heatmap_svg));

  const auto back = read_matrix_csv(files.matrix_csv);
  ASSERT_EQ(back.rows.size(), m.rows.size());
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].name, m.rows[i].name);
    for (std::size_t c = 0; c < kEvalColumns; ++c) EXPECT_NEAR(back.rows[i].accuracy[c], m.rows[i].accuracy[c], 1e-3);
  }

  std::ifstream in(files.heatmap_csv);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "network,Natural,BB-FGSM,BB-PGD,WB-FGSM,WB-PGD");
  EXPECT_EQ(first, "R_nat,0.998,0.081,0.000,0.155,0.000");
}

TEST(Report, MatrixCsvFormatting) {
  const auto csv = matrix_csv(reference_matrix());
  std::istringstream in(csv);
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(first, "R_nat,92.5,34.7,12.6,20.0,0.0");
}

TEST(Report, SvgIsWellFormed) {
  EvalMatrix m = reference_matrix();
  m.rows[0].name = "R_<odd> & \"name\"";
  m.rows[0].group = "baseline";
  for (std::size_t i = 1; i < m.rows.size(); ++i) m.rows[i].group = i < 4 ? "baseline" : "transfer";
  const std::string svg = heatmap_svg(normalize_columns(m));
  std::istringstream in(svg);
  boost::property_tree::ptree tree;
  ASSERT_NO_THROW(boost::property_tree::read_xml(in, tree));
  EXPECT_EQ(tree.count("svg"), 1u);
  EXPECT_NE(svg.find("52.2% / 92.6%"), std::string::npos);
  EXPECT_NE(svg.find("&lt;odd&gt; &amp;"), std::string::npos);
  // One group boundary plus the clean-accuracy separator.
  std::size_t lines = 0;
  for (auto pos = svg.find("<line"); pos != std::string::npos; pos = svg.find("<line", pos + 1)) ++lines;
  EXPECT_EQ(lines, 2u);
}

TEST(Report, ReadRejectsBadHeader) {
  TempDir dir("report");
  std::ofstream(dir / "bad.csv") << "network,A,B,C,D,E\nx,1,2,3,4,5\n";
  EXPECT_THROW(read_matrix_csv(dir / "bad.csv"), ParseError);
  std::ofstream(dir / "cell.csv") << "network,Natural,BB-FGSM,BB-PGD,WB-FGSM,WB-PGD\nx,1,2,three,4,5\n";
  try {
    read_matrix_csv(dir / "cell.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Matrix, ValidateRejectsDuplicatesAndRange) {
  EvalMatrix m;
  m.rows.push_back({"a", {0.5, 0.5, 0.5, 0.5, 0.5}, ""});
  m.rows.push_back({"a", {0.5, 0.5, 0.5, 0.5, 0.5}, ""});
  EXPECT_THROW(m.validate(), ValidationError);
  m.rows[1].name = "b";
  m.rows[1].accuracy[2] = 1.2;
  EXPECT_THROW(m.validate(), ValidationError);
}
