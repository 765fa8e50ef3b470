#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "advtl/data.hpp"
#include "advtl/model.hpp"
#include "advtl/training.hpp"

namespace advtl {

enum class TransferStrategy {
  FinalLayerOnly,  // every block frozen, head retrained
  LastBlock,       // last block and head retrained
  FullNetwork,     // nothing frozen; the source is only an initialisation
};

std::string_view to_string(TransferStrategy s);
TransferStrategy parse_strategy(std::string_view text);

// Copies every block bit-exactly and replaces the head with a freshly
// He-initialised layer for `target_classes`, even when the class count is
// unchanged. Freeze flags are cleared.
BlockNetwork rehead(const BlockNetwork& source, int target_classes, std::uint64_t seed);

BlockNetwork apply_strategy(BlockNetwork net, TransferStrategy s);

// Trainable dense layers under the strategy, head included: 1 for
// FinalLayerOnly, |last block| + 1 for LastBlock, all layers + 1 for FullNetwork.
int unfrozen_layer_count(const ArchSpec& arch, TransferStrategy s);

// "R_<src>-><tar>_<unfrozen>", e.g. R_nat->pgd_7.
std::string canonical_name(TrainingMode source, TrainingMode target, int unfrozen_layers);
// "R_<mode>" for networks trained on the target task without transfer.
std::string baseline_name(TrainingMode mode);

struct TransferResult {
  BlockNetwork net;
  TrainingLog log;
  std::string name;
};

// rehead -> apply_strategy -> train. The target mode is read from cfg.
TransferResult transfer_train(const BlockNetwork& source, TrainingMode source_mode,
                              const LabeledDataset& target, TransferStrategy s,
                              const TrainConfig& cfg, std::uint64_t head_seed);
TransferResult transfer_train(const std::filesystem::path& source_ckpt, TrainingMode source_mode,
                              const LabeledDataset& target, TransferStrategy s,
                              const TrainConfig& cfg, std::uint64_t head_seed);

}  // namespace advtl
