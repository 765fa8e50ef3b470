#pragma once

#include <cstdint>
#include <functional>
#include <string_view>

#include "advtl/model.hpp"
#include "advtl/rng.hpp"
#include "advtl/tensor.hpp"

namespace advtl {

enum class LabelPolicy {
  TrueLabel,
  // Attack the model's own argmax prediction instead of the true label,
  // which removes the label-leaking shortcut during FGSM training.
  PredictedLabel,
};

enum class AttackKind { Fgsm, Pgd };

std::string_view to_string(LabelPolicy policy);
std::string_view to_string(AttackKind kind);
LabelPolicy parse_label_policy(std::string_view text);
AttackKind parse_attack_kind(std::string_view text);

// l-infinity threat model. The allowed set is the epsilon ball around the
// clean input intersected with the data range [clip_lo, clip_hi].
struct AttackConfig {
  double epsilon = 0.0625;
  double alpha = 0.0625 / 4;
  int iterations = 7;
  LabelPolicy label_policy = LabelPolicy::TrueLabel;
  double clip_lo = -1.0;
  double clip_hi = 1.0;
  bool random_start = false;
  // Seeds the random start when no generator is supplied.
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

// d mean-xent / d x for the batch.
Tensor input_gradient(const BlockNetwork& model, const Tensor& x, const Labels& y);

// Clamp into [center - eps, center + eps], then into [lo, hi].
Tensor project_linf(const Tensor& candidate, const Tensor& center, double epsilon, double clip_lo,
                    double clip_hi);

// x' = clip(x + eps * sign(grad_x J)).
Tensor fgsm(const BlockNetwork& model, const Tensor& x, const Labels& y, const AttackConfig& cfg);

using IterateObserver = std::function<void(int iteration, const Tensor& iterate)>;

// k signed steps of size alpha, each followed by project_linf around x.
// The observer, if set, sees x^0 and every later iterate.
Tensor pgd(const BlockNetwork& model, const Tensor& x, const Labels& y, const AttackConfig& cfg,
           Rng& rng, const IterateObserver& observe = {});
Tensor pgd(const BlockNetwork& model, const Tensor& x, const Labels& y, const AttackConfig& cfg);

Tensor attack(AttackKind kind, const BlockNetwork& model, const Tensor& x, const Labels& y,
              const AttackConfig& cfg);
Tensor attack(AttackKind kind, const BlockNetwork& model, const Tensor& x, const Labels& y,
              const AttackConfig& cfg, Rng& rng);

}  // namespace advtl
