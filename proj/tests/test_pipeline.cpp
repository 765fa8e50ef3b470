#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "advtl/pipeline.hpp"
#include "support.hpp"

using namespace advtl;
using nlohmann::json;
using testing_support::TempDir;

namespace {

json tiny_config() {
  return json::parse(R"({
    "seed": 3,
    "data": {"kind": "synthetic", "dim": 12, "superclasses": 3, "fine_per_super": 3,
             "train_per_class": 12, "test_per_class": 6},
    "arch": {"blocks": [{"name": "block1", "widths": [8, 8]},
                        {"name": "block2", "widths": [8, 8]},
                        {"name": "block3", "widths": [8, 8]}]},
    "surrogate_arch": {"blocks": [{"name": "block1", "widths": [12]}]},
    "training": {"default": {"epochs": 2, "batch_clean": 12, "learning_rate": 0.05}},
    "attacks": {"pgd": {"iterations": 3}},
    "baselines": ["nat", "pgd"],
    "combinations": [{"source": "nat", "target": "nat", "strategy": "full"},
                     {"source": "pgd", "target": "pgd", "strategy": "final-layer"}]
  })");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string error_of(const json& j) {
  try {
    RunConfig::from_json(j);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

RunOptions options(const std::filesystem::path& root, bool resume = false) {
  RunOptions o;
  o.output_root = root;
  o.resume = resume;
  return o;
}

}  // namespace

TEST(Config, ParsesAndFillsDefaults) {
  const auto c = RunConfig::from_json(tiny_config());
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.data.synth.dim, 12);
  EXPECT_EQ(c.data.synth.spread, SynthOptions{}.spread);
  EXPECT_EQ(c.arch.size(), 3u);
  EXPECT_EQ(c.train_transfer.epochs, 2);
  EXPECT_EQ(c.train_transfer.momentum, 0.9);
  EXPECT_EQ(c.pgd.iterations, 3);
  EXPECT_EQ(c.pgd.epsilon, 0.0625);
  EXPECT_EQ(c.fgsm.iterations, 1);
  EXPECT_EQ(c.fgsm.alpha, c.fgsm.epsilon);
  EXPECT_EQ(c.baselines.size(), 2u);
  EXPECT_EQ(c.combinations.size(), 2u);
}

TEST(Config, PerPhaseOverridesDefault) {
  auto j = tiny_config();
  j["training"]["transfer"] = {{"epochs", 5}};
  const auto c = RunConfig::from_json(j);
  EXPECT_EQ(c.train_transfer.epochs, 5);
  EXPECT_EQ(c.train_transfer.learning_rate, 0.05);
  EXPECT_EQ(c.train_source.epochs, 2);
}

TEST(Config, AllCombinations) {
  auto j = tiny_config();
  j["combinations"] = "all";
  EXPECT_EQ(RunConfig::from_json(j).combinations.size(), 27u);
  j.erase("combinations");
  EXPECT_EQ(RunConfig::from_json(j).combinations.size(), 27u);
}

TEST(Config, ErrorsCarryFieldPaths) {
  auto j = tiny_config();
  j["training"]["source"] = {{"epocs", 3}};
  EXPECT_NE(error_of(j).find("training.source.epocs"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["attacks"]["pgd"]["epsilon"] = "big";
  EXPECT_NE(error_of(j).find("attacks.pgd.epsilon"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["arch"]["blocks"][1]["widths"] = {8, 0};
  EXPECT_NE(error_of(j).find("arch"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["training"]["default"]["learning_rate"] = -1;
  EXPECT_NE(error_of(j).find("training.default"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["data"]["fine_per_super"] = 1;
  EXPECT_NE(error_of(j).find("data"), std::string::npos) << error_of(j);

  j = tiny_config();
  j["seed"] = -4;
  EXPECT_NE(error_of(j).find("seed"), std::string::npos) << error_of(j);
}

TEST(Config, SurrogateMustDiffer) {
  auto j = tiny_config();
  j["surrogate_arch"] = j["arch"];
  EXPECT_NE(error_of(j).find("surrogate_arch"), std::string::npos);
}

TEST(Config, CombinationsRestrictedToThreeModes) {
  auto j = tiny_config();
  j["combinations"] = json::array({{{"source", "fgsm_no_ll"}, {"target", "nat"}, {"strategy", "full"}}});
  EXPECT_NE(error_of(j).find("combinations[0]"), std::string::npos);
  j["combinations"] = json::array({{{"source", "nat"}, {"target", "nat"}, {"strategy", "sideways"}}});
  EXPECT_FALSE(error_of(j).empty());
  j["combinations"] = json::array({{{"source", "nat"}, {"target", "nat"}, {"strategy", "full"}},
                                   {{"source", "nat"}, {"target", "nat"}, {"strategy", "full"}}});
  EXPECT_NE(error_of(j).find("duplicates"), std::string::npos);
}

TEST(Config, HashTracksContentNotOutputDir) {
  const auto a = RunConfig::from_json(tiny_config());
  auto j = tiny_config();
  j["output"] = "/somewhere/else";
  const auto b = RunConfig::from_json(j);
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
  j["seed"] = 4;
  EXPECT_NE(RunConfig::from_json(j).hash(), a.hash());
  EXPECT_EQ(RunConfig::from_json(a.to_json()).hash(), a.hash());
}

TEST(Config, LoadFileErrors) {
  TempDir dir("cfg");
  EXPECT_THROW(load_config(dir / "absent.json"), IoError);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_THROW(load_config(dir / "broken.json"), ValidationError);
}

TEST(Run, LayoutAndDeterministicSourceCheckpoint) {
  TempDir a("run"), b("run");
  const auto cfg = RunConfig::from_json(tiny_config());
  advtl::Run ra(cfg, options(a.path()));
  advtl::Run rb(cfg, options(b.path()));
  EXPECT_EQ(ra.dir(), a.path() / cfg.hash());
  for (const char* sub : {"checkpoints", "logs", "reports", "data"}) {
    EXPECT_TRUE(std::filesystem::is_directory(ra.dir() / sub)) << sub;
  }
  ra.train_source(TrainingMode::Pgd);
  rb.train_source(TrainingMode::Pgd);
  EXPECT_EQ(slurp(ra.source_checkpoint(TrainingMode::Pgd)), slurp(rb.source_checkpoint(TrainingMode::Pgd)));
  const auto net = load(ra.source_checkpoint(TrainingMode::Pgd));
  EXPECT_EQ(net.arch().num_classes, 6);
}

TEST(Run, ResumeSkipsCompletedPhase) {
  TempDir dir("run");
  const auto cfg = RunConfig::from_json(tiny_config());
  {
    advtl::Run run(cfg, options(dir.path()));
    EXPECT_EQ(run.train_source(TrainingMode::Nat), PhaseOutcome::Ran);
  }
  advtl::Run again(cfg, options(dir.path(), true));
  const auto ckpt = again.source_checkpoint(TrainingMode::Nat);
  const auto stamp = std::filesystem::last_write_time(ckpt);
  const auto bytes = slurp(ckpt);
  EXPECT_EQ(again.train_source(TrainingMode::Nat), PhaseOutcome::Skipped);
  EXPECT_EQ(std::filesystem::last_write_time(ckpt), stamp);

  // A damaged output invalidates the phase.
  std::ofstream(ckpt, std::ios::app) << "x";
  EXPECT_EQ(again.train_source(TrainingMode::Nat), PhaseOutcome::Ran);
  EXPECT_EQ(slurp(ckpt), bytes);

  // Without --resume every phase reruns.
  advtl::Run fresh(cfg, options(dir.path()));
  EXPECT_EQ(fresh.train_source(TrainingMode::Nat), PhaseOutcome::Ran);
}

TEST(Run, TransferNeedsSourceCheckpoint) {
  TempDir dir("run");
  RunOptions o = options(dir.path());
  o.config_path = "exp.json";
  advtl::Run run(RunConfig::from_json(tiny_config()), o);
  try {
    run.transfer(Combination{TrainingMode::Pgd, TrainingMode::Nat, TransferStrategy::FullNetwork});
    FAIL();
  } catch (const MissingPrerequisite& e) {
    EXPECT_NE(e.command().find("advtl train-source --mode pgd --config exp.json"), std::string::npos)
        << e.command();
  }
}

TEST(Run, EvaluateNeedsSurrogate) {
  TempDir dir("run");
  advtl::Run run(RunConfig::from_json(tiny_config()), options(dir.path()));
  try {
    run.evaluate();
    FAIL();
  } catch (const MissingPrerequisite& e) {
    EXPECT_NE(e.command().find("train-surrogate"), std::string::npos);
  }
}

TEST(Run, TransferNameAndFreeze) {
  TempDir dir("run");
  advtl::Run run(RunConfig::from_json(tiny_config()), options(dir.path()));
  run.train_source(TrainingMode::Pgd);
  const Combination c{TrainingMode::Pgd, TrainingMode::Pgd, TransferStrategy::FinalLayerOnly};
  run.transfer(c);
  EXPECT_EQ(run.transfer_name(c), "R_pgd->pgd_1");
  EXPECT_EQ(run.transfer_checkpoint(c).filename(), "R_pgd->pgd_1.ckpt");
  const auto src = load(run.source_checkpoint(TrainingMode::Pgd));
  const auto out = load(run.transfer_checkpoint(c));
  for (std::size_t b = 0; b < src.blocks().size(); ++b) {
    for (std::size_t l = 0; l < src.blocks()[b].layers.size(); ++l) {
      EXPECT_TRUE(exactly_equal(src.blocks()[b].layers[l].weight, out.blocks()[b].layers[l].weight));
    }
  }
}

TEST(Run, NineCombinationSweepGivesDistinctCheckpoints) {
  TempDir dir("run");
  auto j = tiny_config();
  j["combinations"] = json::array();
  for (const char* s : {"nat", "fgsm", "pgd"}) {
    for (const char* t : {"nat", "fgsm", "pgd"}) {
      j["combinations"].push_back({{"source", s}, {"target", t}, {"strategy", "last-block"}});
    }
  }
  j["training"]["default"]["epochs"] = 1;
  advtl::Run run(RunConfig::from_json(j), options(dir.path()));
  for (auto m : {TrainingMode::Nat, TrainingMode::Fgsm, TrainingMode::Pgd}) run.train_source(m);
  std::set<std::string> names, contents;
  for (const auto& c : run.config().combinations) {
    run.transfer(c);
    names.insert(run.transfer_checkpoint(c).filename().string());
    contents.insert(slurp(run.transfer_checkpoint(c)));
  }
  EXPECT_EQ(names.size(), 9u);
  EXPECT_EQ(contents.size(), 9u);
  EXPECT_TRUE(names.count("R_fgsm->pgd_3.ckpt"));
}

TEST(Run, PipelineRowOrderReportsAndManifest) {
  TempDir dir("run");
  auto j = tiny_config();
  j["combinations"] = json::array({{{"source", "nat"}, {"target", "nat"}, {"strategy", "full"}},
                                   {{"source", "pgd"}, {"target", "pgd"}, {"strategy", "final-layer"}},
                                   {{"source", "nat"}, {"target", "pgd"}, {"strategy", "last-block"}}});
  advtl::Run run(RunConfig::from_json(j), options(dir.path()));
  const auto m = run.pipeline();
  std::vector<std::string> names;
  for (const auto& r : m.rows) names.push_back(r.name);
  EXPECT_EQ(names, (std::vector<std::string>{"R_nat", "R_pgd", "R_pgd->pgd_1", "R_nat->pgd_3", "R_nat->nat_7"}));
  EXPECT_EQ(m.rows[2].group, "final-layer");

  const auto reports = run.reports_dir();
  const auto back = read_matrix_csv(reports / "matrix.csv");
  EXPECT_EQ(back.rows.size(), 5u);
  EXPECT_TRUE(std::filesystem::exists(reports / "heatmap.csv"));
  EXPECT_TRUE(std::filesystem::exists(reports / "heatmap.svg"));

  // Every file in the run directory is reachable from the manifest.
  const auto manifest = json::parse(slurp(run.manifest_path()));
  std::set<std::string> listed{"manifest.json"};
  for (const auto& [phase, entry] : manifest["phases"].items()) {
    for (const auto& [rel, hash] : entry["outputs"].items()) listed.insert(rel);
  }
  for (const auto& e : std::filesystem::recursive_directory_iterator(run.dir())) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), run.dir()).generic_string();
    EXPECT_TRUE(listed.count(rel)) << "orphan " << rel;
  }
  EXPECT_TRUE(listed.count("data/generative_record.json"));
  EXPECT_TRUE(listed.count("logs/R_nat->nat_7.csv"));
}

TEST(Run, InterruptedPipelineResumesWithoutRetraining) {
  TempDir dir("run");
  const auto cfg = RunConfig::from_json(tiny_config());
  std::filesystem::file_time_type stamp;
  {
    advtl::Run partial(cfg, options(dir.path()));
    partial.prepare_data();
    partial.train_source(TrainingMode::Nat);
    partial.train_source(TrainingMode::Pgd);
    partial.train_baseline(TrainingMode::Nat);
    stamp = std::filesystem::last_write_time(partial.source_checkpoint(TrainingMode::Pgd));
  }
  std::ostringstream log;
  RunOptions o = options(dir.path(), true);
  o.log = &log;
  advtl::Run resumed(cfg, o);
  const auto m = resumed.pipeline();
  EXPECT_EQ(std::filesystem::last_write_time(resumed.source_checkpoint(TrainingMode::Pgd)), stamp);
  EXPECT_NE(log.str().find("source:pgd: up to date"), std::string::npos) << log.str();
  EXPECT_NE(log.str().find("baseline:nat: up to date"), std::string::npos);
  EXPECT_NE(log.str().find("baseline:pgd: train accuracy"), std::string::npos);

  // A clean run from scratch gives the same reports.
  TempDir other("run");
  advtl::Run clean(cfg, options(other.path()));
  clean.pipeline();
  EXPECT_EQ(slurp(resumed.reports_dir() / "matrix.csv"), slurp(clean.reports_dir() / "matrix.csv"));
  EXPECT_EQ(slurp(resumed.reports_dir() / "heatmap.csv"), slurp(clean.reports_dir() / "heatmap.csv"));

  // Fully resumed evaluation returns the recorded matrix.
  advtl::Run third(cfg, options(dir.path(), true));
  const auto again = third.evaluate();
  ASSERT_EQ(again.rows.size(), m.rows.size());
  for (std::size_t i = 0; i < m.rows.size(); ++i) EXPECT_EQ(again.rows[i].accuracy, m.rows[i].accuracy);
}

TEST(Run, EmptyCombinationsEvaluatesBaselinesOnly) {
  TempDir dir("run");
  auto j = tiny_config();
  j["combinations"] = json::array();
  advtl::Run run(RunConfig::from_json(j), options(dir.path()));
  const auto m = run.pipeline();
  ASSERT_EQ(m.rows.size(), 2u);
  EXPECT_EQ(m.rows[0].name, "R_nat");
  EXPECT_EQ(m.rows[1].name, "R_pgd");
  EXPECT_FALSE(std::filesystem::exists(run.source_checkpoint(TrainingMode::Nat)));
}

TEST(Run, CsvDataSource) {
  TempDir dir("run");
  const auto task = testing_support::tiny_task(2);
  write_csv(task.source_train, dir / "st.csv");
  write_csv(task.source_test, dir / "se.csv");
  write_csv(task.target_train, dir / "tt.csv");
  write_csv(task.target_test, dir / "te.csv");
  auto j = tiny_config();
  j["data"] = {{"kind", "csv"},
               {"source_train", "st.csv"},
               {"source_test", "se.csv"},
               {"target_train", "tt.csv"},
               {"target_test", "te.csv"},
               {"source_classes", task.source_train.num_classes},
               {"target_classes", task.target_train.num_classes}};
  j["combinations"] = json::array({{{"source", "nat"}, {"target", "nat"}, {"strategy", "full"}}});
  advtl::Run run(RunConfig::from_json(j, dir.path()), options(dir / "runs"));
  EXPECT_TRUE(run.data().target_test == task.target_test);
  const auto m = run.pipeline();
  EXPECT_EQ(m.rows.size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(run.dir() / "data" / "sources.json"));
}
