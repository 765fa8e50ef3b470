#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "advtl/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kIo = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "experiment config (JSON)")->required();
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_flag("--resume", c.resume, "skip phases whose inputs and outputs are unchanged");
  app->add_option("--out", c.out, "root directory for run directories");
}

advtl::Run open_run(const Common& c) {
  auto config = advtl::load_config(c.config);
  if (c.seed) config.seed = *c.seed;
  advtl::RunOptions opts;
  opts.output_root = c.out.empty() ? config.output_dir : std::filesystem::path(c.out);
  opts.resume = c.resume;
  opts.log = &std::cerr;
  opts.config_path = c.config;
  return advtl::Run(std::move(config), opts);
}

void print_matrix(const advtl::EvalMatrix& m) {
  std::cout << advtl::matrix_csv(m);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial robustness under transfer learning"};
  app.require_subcommand(1);

  Common common;
  std::string mode;
  bool no_ll = false;
  std::string src, tar, strategy;

  auto* source = app.add_subcommand("train-source", "train a source-task network");
  add_common(source, common);
  source->add_option("--mode", mode, "nat, fgsm or pgd")->required()->check(CLI::IsMember({"nat", "fgsm", "pgd"}));
  source->add_flag("--no-ll", no_ll, "fgsm without label-leak mitigation");

  auto* baseline = app.add_subcommand("train-baseline", "train a target-task network without transfer");
  add_common(baseline, common);
  baseline->add_option("--mode", mode, "nat, fgsm or pgd")->required()->check(CLI::IsMember({"nat", "fgsm", "pgd"}));
  baseline->add_flag("--no-ll", no_ll, "fgsm without label-leak mitigation");

  auto* surrogate = app.add_subcommand("train-surrogate", "train the black-box surrogate");
  add_common(surrogate, common);

  auto* transfer = app.add_subcommand("transfer", "fine-tune a source network on the target task");
  add_common(transfer, common);
  transfer->add_option("--src", src, "source training mode")->required()->check(CLI::IsMember({"nat", "fgsm", "pgd"}));
  transfer->add_option("--tar", tar, "target training mode")->required()->check(CLI::IsMember({"nat", "fgsm", "pgd"}));
  transfer->add_option("--strategy", strategy, "final-layer, last-block or full")
      ->required()
      ->check(CLI::IsMember({"final-layer", "last-block", "full"}));

  auto* evaluate = app.add_subcommand("evaluate", "build the accuracy matrix and reports");
  add_common(evaluate, common);

  auto* pipeline = app.add_subcommand("pipeline", "run every phase in order");
  add_common(pipeline, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  auto train_mode = [&] {
    auto m = advtl::parse_training_mode(mode);
    if (no_ll) {
      if (m != advtl::TrainingMode::Fgsm) throw advtl::ValidationError("--no-ll only applies to --mode fgsm");
      m = advtl::TrainingMode::FgsmNoLl;
    }
    return m;
  };

  try {
    auto run = open_run(common);
    if (source->parsed()) {
      run.prepare_data();
      run.train_source(train_mode());
      std::cout << run.source_checkpoint(train_mode()).string() << '\n';
    } else if (baseline->parsed()) {
      run.prepare_data();
      run.train_baseline(train_mode());
      std::cout << run.baseline_checkpoint(train_mode()).string() << '\n';
    } else if (surrogate->parsed()) {
      run.prepare_data();
      run.train_surrogate();
      std::cout << run.surrogate_checkpoint().string() << '\n';
    } else if (transfer->parsed()) {
      const advtl::Combination c{advtl::parse_training_mode(src), advtl::parse_training_mode(tar),
                                 advtl::parse_strategy(strategy)};
      run.prepare_data();
      run.transfer(c);
      std::cout << run.transfer_checkpoint(c).string() << '\n';
    } else if (evaluate->parsed()) {
      print_matrix(run.evaluate());
    } else if (pipeline->parsed()) {
      print_matrix(run.pipeline());
    }
  } catch (const advtl::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const advtl::FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const advtl::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  }
  return kOk;
}
