#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "advtl/attacks.hpp"
#include "advtl/data.hpp"
#include "advtl/evaluation.hpp"
#include "advtl/model.hpp"
#include "advtl/training.hpp"
#include "advtl/transfer.hpp"
#include "json.hpp"

namespace advtl {

struct CsvSources {
  std::filesystem::path source_train;
  std::filesystem::path source_test;
  std::filesystem::path target_train;
  std::filesystem::path target_test;
  int source_classes = 0;
  int target_classes = 0;
  std::optional<RescaleRange> rescale;
};

struct DataConfig {
  enum class Kind { Synthetic, Csv };
  Kind kind = Kind::Synthetic;
  // The generator seed is derived from RunConfig::seed.
  SynthOptions synth;
  CsvSources csv;
};

struct Combination {
  TrainingMode source = TrainingMode::Nat;
  TrainingMode target = TrainingMode::Nat;
  TransferStrategy strategy = TransferStrategy::FullNetwork;

  friend bool operator==(const Combination&, const Combination&) = default;
};

// Every (source, target) pair over {nat, fgsm, pgd} for every strategy.
std::vector<Combination> all_combinations();

// One experiment. Seed fields inside the training and attack sections are
// ignored; every phase seed is derived from `seed`.
struct RunConfig {
  std::uint64_t seed = 0;
  DataConfig data;
  std::vector<BlockSpec> arch;
  std::vector<BlockSpec> surrogate_arch;
  TrainConfig train_source;
  TrainConfig train_baseline;
  TrainConfig train_surrogate;
  TrainConfig train_transfer;
  AttackConfig fgsm;
  AttackConfig pgd;
  std::vector<TrainingMode> baselines;
  std::vector<Combination> combinations;
  // Root for run directories. Not part of the hash.
  std::filesystem::path output_dir = "runs";

  // Throws ValidationError with the offending field path.
  static RunConfig from_json(const nlohmann::json& j,
                             const std::filesystem::path& base_dir = {});
  nlohmann::json to_json() const;
  void validate() const;
  // 16 hex digits over the canonical JSON form.
  std::string hash() const;
};

RunConfig load_config(const std::filesystem::path& path);

// Raised when a phase needs an artifact that an earlier command produces.
class MissingPrerequisite : public IoError {
 public:
  MissingPrerequisite(const std::filesystem::path& path, const std::string& command)
      : IoError(path, fmt::format("missing; run `{}` first", command)), command_(command) {}
  const std::string& command() const { return command_; }

 private:
  std::string command_;
};

struct RunOptions {
  std::filesystem::path output_root = "runs";
  bool resume = false;
  std::ostream* log = nullptr;
  // Only used to phrase hints in error messages.
  std::filesystem::path config_path;
};

enum class PhaseOutcome { Ran, Skipped };

// A run directory `<output_root>/<config hash>/` holding checkpoints/, logs/,
// reports/, data/ and manifest.json. Each phase is recorded in the manifest
// under a key hashing its configuration and upstream artifacts; with
// `resume`, a phase whose key and outputs are unchanged is skipped.
class Run {
 public:
  Run(RunConfig config, RunOptions options);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path manifest_path() const { return dir_ / "manifest.json"; }

  PhaseOutcome prepare_data();
  PhaseOutcome train_source(TrainingMode mode);
  PhaseOutcome train_baseline(TrainingMode mode);
  PhaseOutcome train_surrogate();
  PhaseOutcome transfer(const Combination& c);
  EvalMatrix evaluate();
  EvalMatrix pipeline();

  std::filesystem::path source_checkpoint(TrainingMode mode) const;
  std::filesystem::path baseline_checkpoint(TrainingMode mode) const;
  std::filesystem::path surrogate_checkpoint() const;
  std::filesystem::path transfer_checkpoint(const Combination& c) const;
  std::string transfer_name(const Combination& c) const;
  std::filesystem::path reports_dir() const { return dir_ / "reports"; }

  const TaskPair& data();
  ArchSpec main_arch(int num_classes) const;
  ArchSpec surrogate_arch(int num_classes) const;

  struct RowSource {
    std::string name;
    std::filesystem::path checkpoint;
    std::string group;
    std::string command;  // produces the checkpoint
  };
  // Evaluation rows in report order: baselines first, then one group per
  // strategy (final-layer, last-block, full).
  std::vector<RowSource> evaluation_rows() const;

  nlohmann::json manifest() const;

 private:
  bool up_to_date(const std::string& phase, const std::string& key) const;
  void record(const std::string& phase, const std::string& key,
              const std::vector<std::filesystem::path>& outputs);
  std::string file_hash(const std::filesystem::path& p) const;
  std::string require(const std::filesystem::path& p, const std::string& command) const;
  std::string phase_key(const nlohmann::json& inputs) const;
  std::string command(const std::string& sub) const;
  std::string data_key();
  AttackConfig attack_config(AttackKind kind) const;
  TrainConfig phase_config(const TrainConfig& base, TrainingMode mode, std::string_view stream) const;
  PhaseOutcome train_phase(const std::string& phase, const std::string& stream, TrainingMode mode,
                           const ArchSpec& arch, const TrainConfig& base,
                           const LabeledDataset& train_set, const std::filesystem::path& ckpt);
  void say(const std::string& line) const;

  RunConfig config_;
  RunOptions options_;
  std::filesystem::path dir_;
  std::optional<TaskPair> data_;
  nlohmann::json manifest_;
};

}  // namespace advtl
