#include "advtl/training.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "advtl/autodiff.hpp"
#include "advtl/rng.hpp"

namespace advtl {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_data(const BlockNetwork& net, const LabeledDataset& data) {
  if (data.size() == 0) throw ValidationError("training data is empty");
  if (data.dim() != net.arch().input_dim) {
    throw ValidationError(fmt::format("data width {} does not match network input width {}",
                                      data.dim(), net.arch().input_dim));
  }
  if (data.num_classes != net.arch().num_classes) {
    throw ValidationError(fmt::format("data has {} classes, network head has {}",
                                      data.num_classes, net.arch().num_classes));
  }
}

}  // namespace

std::string_view to_string(TrainingMode mode) {
  switch (mode) {
    case TrainingMode::Nat: return "nat";
    case TrainingMode::Fgsm: return "fgsm";
    case TrainingMode::FgsmNoLl: return "fgsm_no_ll";
    case TrainingMode::Pgd: return "pgd";
  }
  return "?";
}

TrainingMode parse_training_mode(std::string_view text) {
  if (text == "nat") return TrainingMode::Nat;
  if (text == "fgsm") return TrainingMode::Fgsm;
  if (text == "fgsm_no_ll") return TrainingMode::FgsmNoLl;
  if (text == "pgd") return TrainingMode::Pgd;
  throw ValidationError(
      fmt::format("unknown training mode '{}' (expected nat|fgsm|fgsm_no_ll|pgd)", text));
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError(fmt::format("train: epochs {} < 0", epochs));
  if (batch_clean < 1) throw ValidationError(fmt::format("train: batch_clean {} < 1", batch_clean));
  if (!(learning_rate > 0.0)) {
    throw ValidationError(fmt::format("train: learning_rate {} must be > 0", learning_rate));
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ValidationError(fmt::format("train: momentum {} outside [0, 1)", momentum));
  }
  if (adversary) adversary->config.validate();
}

TrainingMode TrainConfig::mode() const {
  if (!adversary) return TrainingMode::Nat;
  if (adversary->kind == AttackKind::Pgd) return TrainingMode::Pgd;
  return adversary->config.label_policy == LabelPolicy::PredictedLabel ? TrainingMode::Fgsm
                                                                       : TrainingMode::FgsmNoLl;
}

TrainConfig configure(TrainConfig base, TrainingMode mode, const AttackConfig& fgsm,
                      const AttackConfig& pgd) {
  switch (mode) {
    case TrainingMode::Nat:
      base.adversary.reset();
      break;
    case TrainingMode::Fgsm:
      base.adversary = Adversary{AttackKind::Fgsm, fgsm};
      base.adversary->config.label_policy = LabelPolicy::PredictedLabel;
      break;
    case TrainingMode::FgsmNoLl:
      base.adversary = Adversary{AttackKind::Fgsm, fgsm};
      base.adversary->config.label_policy = LabelPolicy::TrueLabel;
      break;
    case TrainingMode::Pgd:
      base.adversary = Adversary{AttackKind::Pgd, pgd};
      break;
  }
  return base;
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path, "cannot open for writing");
  out << "epoch,clean_loss,adv_loss,total_loss,train_acc\n";
  for (const auto& e : epochs) {
    out << fmt::format("{},{:.9g},{},{:.9g},{:.6f}\n", e.epoch, e.clean_loss,
                       std::isnan(e.adv_loss) ? std::string("NA") : fmt::format("{:.9g}", e.adv_loss),
                       e.total_loss, e.train_accuracy);
  }
  if (!out) throw IoError(path, "write failed");
}

TrainResult train(BlockNetwork net, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_data(net, data);

  TrainResult result;
  result.log.adversarial = cfg.adversary.has_value();

  auto params = net.parameters();
  std::vector<Tensor> velocity;
  velocity.reserve(params.size());
  for (const auto& p : params) velocity.push_back(Tensor::Zero(p.value->rows(), p.value->cols()));

  Rng attack_rng(derive_seed(cfg.seed, "attack"));
  std::vector<std::size_t> order(data.size());
  const auto batch = static_cast<std::size_t>(cfg.batch_clean);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, "shuffle"), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(std::span<std::size_t>(order));

    double clean_sum = 0, adv_sum = 0, total_sum = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto rows = std::span<const std::size_t>(order).subspan(
          start, std::min(batch, order.size() - start));
      const LabeledDataset clean = data.subset(rows);

      Tape<double> tape;
      const ForwardTrace clean_trace = net.record(tape, tape.leaf_ref(clean.inputs, false), true);
      const Var clean_loss = tape.softmax_xent(clean_trace.logits, clean.labels);

      StepRecord step{epoch, tape.scalar(clean_loss), kNaN, tape.scalar(clean_loss)};
      Var objective = clean_loss;
      Tensor adversarial;
      std::optional<ForwardTrace> adv_trace;
      if (cfg.adversary) {
        adversarial = attack(cfg.adversary->kind, net, clean.inputs, clean.labels,
                             cfg.adversary->config, attack_rng);
        adv_trace = net.record(tape, tape.leaf_ref(adversarial, false), true);
        const Var adv_loss = tape.softmax_xent(adv_trace->logits, clean.labels);
        objective = tape.scale(tape.add(adv_loss, clean_loss), 0.5);
        step.adv_loss = tape.scalar(adv_loss);
        step.total_loss = tape.scalar(objective);
        if (step.total_loss != (step.adv_loss + step.clean_loss) / 2) {
          throw ContractError("total loss differs from the mean of clean and adversarial loss");
        }
      }

      const Gradients<double> grads = tape.backward(objective);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].frozen) continue;
        Tensor g = grads.at(clean_trace.parameters[i]);
        if (adv_trace) g += grads.at(adv_trace->parameters[i]);
        velocity[i] = cfg.momentum * velocity[i] + g;
        *params[i].value -= cfg.learning_rate * velocity[i];
      }

      const auto n = static_cast<double>(rows.size());
      clean_sum += step.clean_loss * n;
      adv_sum += step.adv_loss * n;
      total_sum += step.total_loss * n;
      result.log.steps.push_back(step);
    }

    const auto n = static_cast<double>(data.size());
    result.log.epochs.push_back(EpochRecord{epoch, clean_sum / n,
                                            cfg.adversary ? adv_sum / n : kNaN, total_sum / n,
                                            evaluate_accuracy(net, data)});
  }
  result.net = std::move(net);
  return result;
}

double accuracy(const BlockNetwork& net, const Tensor& x, const Labels& y) {
  if (y.empty()) throw ValidationError("accuracy of an empty dataset is undefined");
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw DimensionError(fmt::format("{} input rows but {} labels", x.rows(), y.size()));
  }
  const Labels predicted = net.predict(x);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hits += predicted[i] == y[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

double evaluate_accuracy(const BlockNetwork& net, const LabeledDataset& data) {
  return accuracy(net, data.inputs, data.labels);
}

}  // namespace advtl
