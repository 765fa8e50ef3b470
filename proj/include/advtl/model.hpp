#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "advtl/autodiff.hpp"
#include "advtl/tensor.hpp"

namespace advtl {

struct BlockSpec {
  std::string name;
  std::vector<int> widths;

  friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

// Dense classifier layout: input -> blocks of relu layers -> linear head.
struct ArchSpec {
  int input_dim = 0;
  std::vector<BlockSpec> blocks;
  int num_classes = 0;

  void validate() const;
  // Hidden layers across all blocks, excluding the head.
  int hidden_layer_count() const;
  std::string describe() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

// y = x W + b with W stored fan_in x fan_out and b as a 1 x fan_out row.
struct DenseLayer {
  Tensor weight;
  Tensor bias;
};

struct Block {
  std::string name;
  std::vector<DenseLayer> layers;
  bool frozen = false;
};

struct ParameterRef {
  std::string name;
  Tensor* value;
  bool frozen;
};

struct ConstParameterRef {
  std::string name;
  const Tensor* value;
  bool frozen;
};

// Nodes created by BlockNetwork::record on a tape. `parameters` follows the
// order of BlockNetwork::parameters().
struct ForwardTrace {
  Var logits;
  std::vector<Var> parameters;
};

class BlockNetwork {
 public:
  BlockNetwork() = default;
  // Checks that layer shapes chain from arch.input_dim to arch.num_classes.
  BlockNetwork(ArchSpec arch, std::vector<Block> blocks, DenseLayer head, bool head_frozen = false);

  // He-normal weights (stddev sqrt(2 / fan_in)), zero biases.
  static BlockNetwork init(const ArchSpec& arch, std::uint64_t seed);

  const ArchSpec& arch() const { return arch_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  const DenseLayer& head() const { return head_; }
  bool head_frozen() const { return head_frozen_; }

  void set_block_frozen(std::size_t block, bool frozen);
  void set_head_frozen(bool frozen) { head_frozen_ = frozen; }
  void freeze_all(bool frozen);

  // Replaces the head; the arch's class count follows the new head.
  void replace_head(DenseLayer head);

  // Logits, n x num_classes. No softmax.
  Tensor forward(const Tensor& x) const;
  Labels predict(const Tensor& x) const;

  // Records the forward pass on `tape`. Parameters are leaves aliasing this
  // network's storage; they are tracked when `track_parameters` is set and
  // the owning block (or head) is not frozen.
  ForwardTrace record(Tape<double>& tape, Var input, bool track_parameters) const;

  // Canonical order: every block's layers (weight, bias), then the head.
  std::vector<ParameterRef> parameters();
  std::vector<ConstParameterRef> parameters() const;
  std::size_t parameter_count() const;

  // Bitwise equality of arch, parameters and freeze flags.
  friend bool operator==(const BlockNetwork& a, const BlockNetwork& b);

 private:
  void check_input(const Tensor& x) const;

  ArchSpec arch_;
  std::vector<Block> blocks_;
  DenseLayer head_;
  bool head_frozen_ = false;
};

// Row-wise argmax; ties resolve to the lowest index.
Labels argmax_rows(const Tensor& logits);

// Checkpoints: magic "ADVTLNET", u32 version, arch descriptor, freeze flags,
// then every parameter as little-endian f64 in canonical order.
std::vector<std::uint8_t> serialize(const BlockNetwork& net);
BlockNetwork deserialize(std::span<const std::uint8_t> bytes);

void save(const BlockNetwork& net, const std::filesystem::path& path);
BlockNetwork load(const std::filesystem::path& path);

}  // namespace advtl
