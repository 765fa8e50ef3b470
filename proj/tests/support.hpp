#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <string>

#include "advtl/data.hpp"
#include "advtl/model.hpp"
#include "advtl/rng.hpp"

namespace testing_support {

using advtl::Tensor;

inline advtl::ArchSpec arch(int input_dim, std::vector<std::vector<int>> blocks, int classes) {
  advtl::ArchSpec a;
  a.input_dim = input_dim;
  a.num_classes = classes;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    a.blocks.push_back({"block" + std::to_string(i + 1), blocks[i]});
  }
  return a;
}

inline Tensor uniform(advtl::Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

inline advtl::Labels labels(advtl::Rng& rng, int n, int classes) {
  advtl::Labels y(n);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

// Small task pair that trains in well under a second.
inline advtl::TaskPair tiny_task(std::uint64_t seed = 7) {
  advtl::SynthOptions o;
  o.seed = seed;
  o.dim = 16;
  o.superclasses = 3;
  o.fine_per_super = 3;
  o.train_per_class = 20;
  o.test_per_class = 10;
  return advtl::synth_task_pair(o);
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    advtl::Rng rng(std::hash<std::string>{}(tag) ^ static_cast<std::uint64_t>(
                                                       std::chrono::steady_clock::now().time_since_epoch().count()));
    path_ = std::filesystem::temp_directory_path() / fmt::format("advtl-{}-{:x}", tag, rng.next_u64());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
