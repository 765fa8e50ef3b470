#include "advtl/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "advtl/rng.hpp"

namespace advtl {

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'T', 'L', 'N', 'E', 'T'};
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint32_t kMaxCount = 1u << 24;

DenseLayer he_layer(int fan_in, int fan_out, Rng& rng) {
  DenseLayer layer;
  layer.weight.resize(fan_in, fan_out);
  const double stddev = std::sqrt(2.0 / fan_in);
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    layer.weight.data()[i] = rng.normal(0.0, stddev);
  }
  layer.bias = Tensor::Zero(1, fan_out);
  return layer;
}

void check_layer(const DenseLayer& layer, Eigen::Index fan_in, const std::string& where) {
  if (layer.weight.rows() != fan_in || layer.bias.rows() != 1 ||
      layer.bias.cols() != layer.weight.cols()) {
    throw DimensionError(fmt::format("{}: weight {} / bias {} do not chain from width {}", where,
                                     shape_string(layer.weight), shape_string(layer.bias),
                                     fan_in));
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint64_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError(pos_, fmt::format("truncated while reading {} ({} of {} bytes left)", what,
                                          in_.size() - pos_, n));
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::uint32_t count(const char* what) {
    const auto at = pos_;
    const auto v = u32(what);
    if (v > kMaxCount) throw FormatError(at, fmt::format("implausible {} {}", what, v));
    return v;
  }
  std::string str(const char* what) {
    const auto n = count(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool flag(const char* what) {
    const auto at = pos_;
    const auto v = u8(what);
    if (v > 1) throw FormatError(at, fmt::format("{} flag has value {}", what, v));
    return v == 1;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

void ArchSpec::validate() const {
  if (input_dim < 1) throw ValidationError(fmt::format("arch: input_dim {} < 1", input_dim));
  if (num_classes < 1) throw ValidationError(fmt::format("arch: num_classes {} < 1", num_classes));
  if (blocks.empty()) throw ValidationError("arch: at least one block is required");
  std::set<std::string> names;
  for (const auto& b : blocks) {
    if (b.name.empty()) throw ValidationError("arch: block names must be non-empty");
    if (!names.insert(b.name).second) {
      throw ValidationError(fmt::format("arch: duplicate block name '{}'", b.name));
    }
    if (b.widths.empty()) {
      throw ValidationError(fmt::format("arch: block '{}' has no layers", b.name));
    }
    for (int w : b.widths) {
      if (w < 1) throw ValidationError(fmt::format("arch: block '{}' has width {}", b.name, w));
    }
  }
}

int ArchSpec::hidden_layer_count() const {
  int n = 0;
  for (const auto& b : blocks) n += static_cast<int>(b.widths.size());
  return n;
}

std::string ArchSpec::describe() const {
  std::string s = fmt::format("{}", input_dim);
  for (const auto& b : blocks) {
    s += fmt::format(" -> {}[", b.name);
    for (std::size_t i = 0; i < b.widths.size(); ++i) {
      s += fmt::format("{}{}", i ? "," : "", b.widths[i]);
    }
    s += "]";
  }
  return s + fmt::format(" -> {}", num_classes);
}

BlockNetwork::BlockNetwork(ArchSpec arch, std::vector<Block> blocks, DenseLayer head,
                           bool head_frozen)
    : arch_(std::move(arch)),
      blocks_(std::move(blocks)),
      head_(std::move(head)),
      head_frozen_(head_frozen) {
  arch_.validate();
  if (blocks_.size() != arch_.blocks.size()) {
    throw DimensionError(fmt::format("network has {} blocks, arch declares {}", blocks_.size(),
                                     arch_.blocks.size()));
  }
  Eigen::Index width = arch_.input_dim;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto& spec = arch_.blocks[b];
    if (blocks_[b].name != spec.name || blocks_[b].layers.size() != spec.widths.size()) {
      throw DimensionError(fmt::format("block {} does not match arch block '{}'", b, spec.name));
    }
    for (std::size_t l = 0; l < spec.widths.size(); ++l) {
      check_layer(blocks_[b].layers[l], width, fmt::format("{}.{}", spec.name, l));
      if (blocks_[b].layers[l].weight.cols() != spec.widths[l]) {
        throw DimensionError(fmt::format("{}.{}: width {} != arch width {}", spec.name, l,
                                         blocks_[b].layers[l].weight.cols(), spec.widths[l]));
      }
      width = spec.widths[l];
    }
  }
  check_layer(head_, width, "head");
  if (head_.weight.cols() != arch_.num_classes) {
    throw DimensionError(fmt::format("head has {} outputs, arch declares {} classes",
                                     head_.weight.cols(), arch_.num_classes));
  }
}

BlockNetwork BlockNetwork::init(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  std::vector<Block> blocks;
  int width = arch.input_dim;
  for (const auto& spec : arch.blocks) {
    Block block{spec.name, {}, false};
    for (int w : spec.widths) {
      block.layers.push_back(he_layer(width, w, rng));
      width = w;
    }
    blocks.push_back(std::move(block));
  }
  DenseLayer head = he_layer(width, arch.num_classes, rng);
  return BlockNetwork(arch, std::move(blocks), std::move(head));
}

void BlockNetwork::set_block_frozen(std::size_t block, bool frozen) {
  if (block >= blocks_.size()) {
    throw ValidationError(fmt::format("no block {} (network has {})", block, blocks_.size()));
  }
  blocks_[block].frozen = frozen;
}

void BlockNetwork::freeze_all(bool frozen) {
  for (auto& b : blocks_) b.frozen = frozen;
  head_frozen_ = frozen;
}

void BlockNetwork::replace_head(DenseLayer head) {
  const Eigen::Index width =
      blocks_.empty() ? arch_.input_dim : blocks_.back().layers.back().weight.cols();
  check_layer(head, width, "head");
  if (head.weight.cols() < 1) throw ValidationError("head must have at least one output");
  head_ = std::move(head);
  arch_.num_classes = static_cast<int>(head_.weight.cols());
}

void BlockNetwork::check_input(const Tensor& x) const {
  if (x.cols() != arch_.input_dim) {
    throw DimensionError(fmt::format("input {} has width {}, network expects {}", shape_string(x),
                                     x.cols(), arch_.input_dim));
  }
}

Tensor BlockNetwork::forward(const Tensor& x) const {
  check_input(x);
  Tensor h = x;
  for (const auto& block : blocks_) {
    for (const auto& layer : block.layers) {
      Tensor z = h * layer.weight;
      z.rowwise() += layer.bias.row(0);
      h = z.cwiseMax(0.0);
    }
  }
  Tensor logits = h * head_.weight;
  logits.rowwise() += head_.bias.row(0);
  return logits;
}

Labels BlockNetwork::predict(const Tensor& x) const { return argmax_rows(forward(x)); }

ForwardTrace BlockNetwork::record(Tape<double>& tape, Var input, bool track_parameters) const {
  check_input(tape.value(input));
  ForwardTrace trace;
  trace.parameters.reserve(parameter_count());
  Var h = input;
  for (const auto& block : blocks_) {
    const bool track = track_parameters && !block.frozen;
    for (const auto& layer : block.layers) {
      const Var w = tape.leaf_ref(layer.weight, track);
      const Var b = tape.leaf_ref(layer.bias, track);
      trace.parameters.push_back(w);
      trace.parameters.push_back(b);
      h = tape.relu(tape.add_bias(tape.matmul(h, w), b));
    }
  }
  const bool track = track_parameters && !head_frozen_;
  const Var w = tape.leaf_ref(head_.weight, track);
  const Var b = tape.leaf_ref(head_.bias, track);
  trace.parameters.push_back(w);
  trace.parameters.push_back(b);
  trace.logits = tape.add_bias(tape.matmul(h, w), b);
  return trace;
}

std::vector<ParameterRef> BlockNetwork::parameters() {
  std::vector<ParameterRef> out;
  for (auto& block : blocks_) {
    for (std::size_t l = 0; l < block.layers.size(); ++l) {
      out.push_back({fmt::format("{}.{}.weight", block.name, l), &block.layers[l].weight,
                     block.frozen});
      out.push_back({fmt::format("{}.{}.bias", block.name, l), &block.layers[l].bias,
                     block.frozen});
    }
  }
  out.push_back({"head.weight", &head_.weight, head_frozen_});
  out.push_back({"head.bias", &head_.bias, head_frozen_});
  return out;
}

std::vector<ConstParameterRef> BlockNetwork::parameters() const {
  std::vector<ConstParameterRef> out;
  for (const auto& block : blocks_) {
    for (std::size_t l = 0; l < block.layers.size(); ++l) {
      out.push_back({fmt::format("{}.{}.weight", block.name, l), &block.layers[l].weight,
                     block.frozen});
      out.push_back({fmt::format("{}.{}.bias", block.name, l), &block.layers[l].bias,
                     block.frozen});
    }
  }
  out.push_back({"head.weight", &head_.weight, head_frozen_});
  out.push_back({"head.bias", &head_.bias, head_frozen_});
  return out;
}

std::size_t BlockNetwork::parameter_count() const {
  std::size_t n = 2;
  for (const auto& b : blocks_) n += 2 * b.layers.size();
  return n;
}

bool operator==(const BlockNetwork& a, const BlockNetwork& b) {
  if (!(a.arch_ == b.arch_) || a.head_frozen_ != b.head_frozen_) return false;
  if (a.blocks_.size() != b.blocks_.size()) return false;
  for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
    if (a.blocks_[i].frozen != b.blocks_[i].frozen) return false;
  }
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bitwise_equal(*pa[i].value, *pb[i].value)) return false;
  }
  return true;
}

Labels argmax_rows(const Tensor& logits) {
  Labels out(static_cast<std::size_t>(logits.rows()), 0);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<std::uint8_t> serialize(const BlockNetwork& net) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kFormatVersion);
  const auto& arch = net.arch();
  w.u32(static_cast<std::uint32_t>(arch.input_dim));
  w.u32(static_cast<std::uint32_t>(arch.num_classes));
  w.u32(static_cast<std::uint32_t>(arch.blocks.size()));
  for (std::size_t b = 0; b < arch.blocks.size(); ++b) {
    w.str(arch.blocks[b].name);
    w.u32(static_cast<std::uint32_t>(arch.blocks[b].widths.size()));
    for (int width : arch.blocks[b].widths) w.u32(static_cast<std::uint32_t>(width));
    w.u8(net.blocks()[b].frozen ? 1 : 0);
  }
  w.u8(net.head_frozen() ? 1 : 0);
  const auto params = net.parameters();
  std::uint64_t values = 0;
  for (const auto& p : params) values += static_cast<std::uint64_t>(p.value->size());
  w.u64(values);
  for (const auto& p : params) {
    for (Eigen::Index i = 0; i < p.value->size(); ++i) w.f64(p.value->data()[i]);
  }
  return w.take();
}

BlockNetwork deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(sizeof kMagic, "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw FormatError(0, "not a network checkpoint (bad magic)");
  }
  for (std::size_t i = 0; i < sizeof kMagic; ++i) r.u8("magic");
  const auto version_at = r.offset();
  const auto version = r.u32("format version");
  if (version != kFormatVersion) {
    throw FormatError(version_at, fmt::format("unsupported format version {} (expected {})",
                                              version, kFormatVersion));
  }
  ArchSpec arch;
  arch.input_dim = static_cast<int>(r.count("input_dim"));
  arch.num_classes = static_cast<int>(r.count("num_classes"));
  const auto nblocks = r.count("block count");
  std::vector<bool> frozen;
  for (std::uint32_t b = 0; b < nblocks; ++b) {
    BlockSpec spec;
    spec.name = r.str("block name");
    const auto nlayers = r.count("layer count");
    for (std::uint32_t l = 0; l < nlayers; ++l) spec.widths.push_back(static_cast<int>(r.count("width")));
    frozen.push_back(r.flag("block frozen"));
    arch.blocks.push_back(std::move(spec));
  }
  const bool head_frozen = r.flag("head frozen");
  const auto arch_end = r.offset();
  try {
    arch.validate();
  } catch (const ValidationError& e) {
    throw FormatError(arch_end, fmt::format("invalid arch descriptor: {}", e.what()));
  }

  const auto count_at = r.offset();
  const auto values = r.u64("parameter count");
  std::uint64_t expected = 0;
  {
    std::uint64_t width = static_cast<std::uint64_t>(arch.input_dim);
    for (const auto& b : arch.blocks) {
      for (int w : b.widths) {
        expected += width * static_cast<std::uint64_t>(w) + static_cast<std::uint64_t>(w);
        width = static_cast<std::uint64_t>(w);
      }
    }
    expected += width * static_cast<std::uint64_t>(arch.num_classes) +
                static_cast<std::uint64_t>(arch.num_classes);
  }
  if (values != expected) {
    throw FormatError(count_at, fmt::format("payload declares {} values, arch implies {}", values,
                                            expected));
  }

  auto read_layer = [&](int fan_in, int fan_out) {
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    layer.bias.resize(1, fan_out);
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = r.f64("weight");
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias.data()[i] = r.f64("bias");
    return layer;
  };
  std::vector<Block> blocks;
  int width = arch.input_dim;
  for (std::size_t b = 0; b < arch.blocks.size(); ++b) {
    Block block{arch.blocks[b].name, {}, frozen[b]};
    for (int w : arch.blocks[b].widths) {
      block.layers.push_back(read_layer(width, w));
      width = w;
    }
    blocks.push_back(std::move(block));
  }
  DenseLayer head = read_layer(width, arch.num_classes);
  if (!r.at_end()) throw FormatError(r.offset(), "trailing bytes after parameter payload");
  return BlockNetwork(std::move(arch), std::move(blocks), std::move(head), head_frozen);
}

void save(const BlockNetwork& net, const std::filesystem::path& path) {
  const auto bytes = serialize(net);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp, "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path, "cannot move checkpoint into place: " + ec.message());
}

BlockNetwork load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open checkpoint");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace advtl
