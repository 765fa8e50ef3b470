#include "advtl/transfer.hpp"

#include <cmath>

#include "advtl/rng.hpp"

namespace advtl {

std::string_view to_string(TransferStrategy s) {
  switch (s) {
    case TransferStrategy::FinalLayerOnly: return "final-layer";
    case TransferStrategy::LastBlock: return "last-block";
    case TransferStrategy::FullNetwork: return "full";
  }
  return "?";
}

TransferStrategy parse_strategy(std::string_view text) {
  if (text == "final-layer") return TransferStrategy::FinalLayerOnly;
  if (text == "last-block") return TransferStrategy::LastBlock;
  if (text == "full") return TransferStrategy::FullNetwork;
  throw ValidationError(
      fmt::format("unknown strategy '{}' (expected final-layer|last-block|full)", text));
}

BlockNetwork rehead(const BlockNetwork& source, int target_classes, std::uint64_t seed) {
  if (target_classes < 2) {
    throw ValidationError(fmt::format("rehead: target_classes {} < 2", target_classes));
  }
  const auto fan_in = source.head().weight.rows();
  Rng rng(seed);
  DenseLayer head;
  head.weight.resize(fan_in, target_classes);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < head.weight.size(); ++i) head.weight.data()[i] = rng.normal(0.0, stddev);
  head.bias = Tensor::Zero(1, target_classes);

  BlockNetwork out = source;
  out.replace_head(std::move(head));
  out.freeze_all(false);
  return out;
}

BlockNetwork apply_strategy(BlockNetwork net, TransferStrategy s) {
  const std::size_t blocks = net.blocks().size();
  if (s == TransferStrategy::LastBlock && blocks < 2) {
    throw ValidationError("last-block transfer needs at least two blocks; with one block it is "
                          "the full-network strategy");
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    bool frozen = false;
    switch (s) {
      case TransferStrategy::FinalLayerOnly: frozen = true; break;
      case TransferStrategy::LastBlock: frozen = b + 1 < blocks; break;
      case TransferStrategy::FullNetwork: frozen = false; break;
    }
    net.set_block_frozen(b, frozen);
  }
  net.set_head_frozen(false);
  return net;
}

int unfrozen_layer_count(const ArchSpec& arch, TransferStrategy s) {
  switch (s) {
    case TransferStrategy::FinalLayerOnly: return 1;
    case TransferStrategy::LastBlock: return static_cast<int>(arch.blocks.back().widths.size()) + 1;
    case TransferStrategy::FullNetwork: return arch.hidden_layer_count() + 1;
  }
  return 0;
}

std::string canonical_name(TrainingMode source, TrainingMode target, int unfrozen_layers) {
  return fmt::format("R_{}->{}_{}", to_string(source), to_string(target), unfrozen_layers);
}

std::string baseline_name(TrainingMode mode) { return fmt::format("R_{}", to_string(mode)); }

TransferResult transfer_train(const BlockNetwork& source, TrainingMode source_mode,
                              const LabeledDataset& target, TransferStrategy s,
                              const TrainConfig& cfg, std::uint64_t head_seed) {
  if (target.dim() != source.arch().input_dim) {
    throw ValidationError(fmt::format("target data width {} does not match source input width {}",
                                      target.dim(), source.arch().input_dim));
  }
  BlockNetwork net = apply_strategy(rehead(source, target.num_classes, head_seed), s);
  const std::string name =
      canonical_name(source_mode, cfg.mode(), unfrozen_layer_count(net.arch(), s));
  auto trained = train(std::move(net), target, cfg);
  return TransferResult{std::move(trained.net), std::move(trained.log), name};
}

TransferResult transfer_train(const std::filesystem::path& source_ckpt, TrainingMode source_mode,
                              const LabeledDataset& target, TransferStrategy s,
                              const TrainConfig& cfg, std::uint64_t head_seed) {
  return transfer_train(load(source_ckpt), source_mode, target, s, cfg, head_seed);
}

}  // namespace advtl
