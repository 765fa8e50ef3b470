#include "advtl/attacks.hpp"

#include "advtl/autodiff.hpp"

namespace advtl {

namespace {

void check_batch(const BlockNetwork& model, const Tensor& x, const Labels& y,
                 const AttackConfig& cfg) {
  cfg.validate();
  if (x.cols() != model.arch().input_dim) {
    throw DimensionError(fmt::format("attack input {} does not match model input width {}",
                                     shape_string(x), model.arch().input_dim));
  }
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw DimensionError(fmt::format("attack input has {} rows but {} labels", x.rows(), y.size()));
  }
  if (x.size() > 0 && (x.minCoeff() < cfg.clip_lo || x.maxCoeff() > cfg.clip_hi)) {
    throw ValidationError(fmt::format("attack input leaves the data range [{}, {}]", cfg.clip_lo,
                                      cfg.clip_hi));
  }
}

Labels attack_labels(const BlockNetwork& model, const Tensor& x, const Labels& y,
                     const AttackConfig& cfg) {
  return cfg.label_policy == LabelPolicy::PredictedLabel ? model.predict(x) : y;
}

}  // namespace

std::string_view to_string(LabelPolicy policy) {
  return policy == LabelPolicy::TrueLabel ? "true" : "predicted";
}

std::string_view to_string(AttackKind kind) { return kind == AttackKind::Fgsm ? "fgsm" : "pgd"; }

LabelPolicy parse_label_policy(std::string_view text) {
  if (text == "true") return LabelPolicy::TrueLabel;
  if (text == "predicted") return LabelPolicy::PredictedLabel;
  throw ValidationError(fmt::format("unknown label policy '{}' (expected true|predicted)", text));
}

AttackKind parse_attack_kind(std::string_view text) {
  if (text == "fgsm") return AttackKind::Fgsm;
  if (text == "pgd") return AttackKind::Pgd;
  throw ValidationError(fmt::format("unknown attack '{}' (expected fgsm|pgd)", text));
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ValidationError(fmt::format("attack: epsilon {} < 0", epsilon));
  if (!(alpha > 0.0)) throw ValidationError(fmt::format("attack: alpha {} must be > 0", alpha));
  if (iterations < 1) throw ValidationError(fmt::format("attack: iterations {} < 1", iterations));
  if (!(clip_lo < clip_hi)) {
    throw ValidationError(fmt::format("attack: clip range [{}, {}] is empty", clip_lo, clip_hi));
  }
}

Tensor input_gradient(const BlockNetwork& model, const Tensor& x, const Labels& y) {
  Tape<double> tape;
  const Var input = tape.leaf_ref(x, true);
  const ForwardTrace trace = model.record(tape, input, false);
  const Var loss = tape.softmax_xent(trace.logits, y);
  return tape.backward(loss).at(input);
}

Tensor project_linf(const Tensor& candidate, const Tensor& center, double epsilon, double clip_lo,
                    double clip_hi) {
  if (candidate.rows() != center.rows() || candidate.cols() != center.cols()) {
    throw DimensionError(fmt::format("project_linf: candidate {} vs center {}",
                                     shape_string(candidate), shape_string(center)));
  }
  Tensor out(candidate.rows(), candidate.cols());
  for (Eigen::Index i = 0; i < candidate.size(); ++i) {
    const double c = center.data()[i];
    const double v = std::clamp(candidate.data()[i], c - epsilon, c + epsilon);
    out.data()[i] = std::clamp(v, clip_lo, clip_hi);
  }
  return out;
}

Tensor fgsm(const BlockNetwork& model, const Tensor& x, const Labels& y, const AttackConfig& cfg) {
  check_batch(model, x, y, cfg);
  const Labels target = attack_labels(model, x, y, cfg);
  const Tensor step = cfg.epsilon * sign(input_gradient(model, x, target));
  return project_linf(x + step, x, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
}

Tensor pgd(const BlockNetwork& model, const Tensor& x, const Labels& y, const AttackConfig& cfg,
           Rng& rng, const IterateObserver& observe) {
  check_batch(model, x, y, cfg);
  const Labels target = attack_labels(model, x, y, cfg);
  Tensor current = x;
  if (cfg.random_start) {
    Tensor start(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < start.size(); ++i) {
      start.data()[i] = x.data()[i] + rng.uniform(-cfg.epsilon, cfg.epsilon);
    }
    current = project_linf(start, x, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
  }
  if (observe) observe(0, current);
  for (int k = 1; k <= cfg.iterations; ++k) {
    const Tensor step = cfg.alpha * sign(input_gradient(model, current, target));
    current = project_linf(current + step, x, cfg.epsilon, cfg.clip_lo, cfg.clip_hi);
    if (observe) observe(k, current);
  }
  return current;
}

Tensor pgd(const BlockNetwork& model, const Tensor& x, const Labels& y, const AttackConfig& cfg) {
  Rng rng(cfg.seed);
  return pgd(model, x, y, cfg, rng);
}

Tensor attack(AttackKind kind, const BlockNetwork& model, const Tensor& x, const Labels& y,
              const AttackConfig& cfg) {
  return kind == AttackKind::Fgsm ? fgsm(model, x, y, cfg) : pgd(model, x, y, cfg);
}

Tensor attack(AttackKind kind, const BlockNetwork& model, const Tensor& x, const Labels& y,
              const AttackConfig& cfg, Rng& rng) {
  return kind == AttackKind::Fgsm ? fgsm(model, x, y, cfg) : pgd(model, x, y, cfg, rng);
}

}  // namespace advtl
