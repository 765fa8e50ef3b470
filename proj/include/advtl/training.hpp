#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "advtl/attacks.hpp"
#include "advtl/data.hpp"
#include "advtl/model.hpp"

namespace advtl {

// How a network was trained: clean (nat), FGSM with predicted labels (fgsm),
// FGSM with true labels (fgsm_no_ll), or PGD.
enum class TrainingMode { Nat, Fgsm, FgsmNoLl, Pgd };

std::string_view to_string(TrainingMode mode);
TrainingMode parse_training_mode(std::string_view text);

struct Adversary {
  AttackKind kind = AttackKind::Pgd;
  AttackConfig config;
};

struct TrainConfig {
  int epochs = 20;
  // N clean examples per step; adversarial steps add N adversarial copies.
  int batch_clean = 100;
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // Empty for clean training.
  std::optional<Adversary> adversary;

  void validate() const;
  TrainingMode mode() const;
};

// Copy of `base` set up for `mode`. FGSM training attacks the predicted label
// unless the mode is FgsmNoLl.
TrainConfig configure(TrainConfig base, TrainingMode mode, const AttackConfig& fgsm,
                      const AttackConfig& pgd);

struct StepRecord {
  int epoch = 0;
  double clean_loss = 0;
  double adv_loss = 0;  // NaN for clean training
  double total_loss = 0;
};

struct EpochRecord {
  int epoch = 0;
  double clean_loss = 0;
  double adv_loss = 0;  // NaN for clean training
  double total_loss = 0;
  double train_accuracy = 0;
};

struct TrainingLog {
  bool adversarial = false;
  std::vector<EpochRecord> epochs;
  std::vector<StepRecord> steps;

  // Columns: epoch,clean_loss,adv_loss,total_loss,train_acc
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  BlockNetwork net;
  TrainingLog log;
};

// SGD with momentum on mean softmax cross-entropy. In adversarial mode each
// step attacks the current batch with the current parameters and minimises
// (L_adv + L_clean) / 2. Frozen blocks and a frozen head are never updated.
TrainResult train(BlockNetwork net, const LabeledDataset& data, const TrainConfig& cfg);

double accuracy(const BlockNetwork& net, const Tensor& x, const Labels& y);
double evaluate_accuracy(const BlockNetwork& net, const LabeledDataset& data);

}  // namespace advtl
