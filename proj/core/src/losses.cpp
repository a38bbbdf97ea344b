#include "flowmix/losses.hpp"

#include <cmath>

#include "flowmix/errors.hpp"

namespace flowmix {

namespace {

void check_sequence(const PredictionSequence& preds, const torch::Tensor& target, const torch::Tensor& mask) {
  if (preds.flows.empty()) {
    throw ContractViolation("prediction sequence is empty");
  }
  if (target.dim() != 4 || target.size(1) != 2) {
    throw ContractViolation("loss target must be [B, 2, H, W]");
  }
  if (mask.dim() != 3 || mask.size(0) != target.size(0) || mask.size(1) != target.size(2) ||
      mask.size(2) != target.size(3)) {
    throw ContractViolation("loss mask must be [B, H, W] matching the target");
  }
  for (const auto& p : preds.flows) {
    if (!p.sizes().equals(target.sizes())) {
      throw ContractViolation("prediction and target shapes differ");
    }
  }
}

}  // namespace

std::string_view to_string(DistractionWeightMode mode) noexcept {
  return mode == DistractionWeightMode::kLambda ? "lambda" : "constant";
}

DistractionWeightMode parse_weight_mode(std::string_view name) {
  if (name == "lambda") return DistractionWeightMode::kLambda;
  if (name == "constant") return DistractionWeightMode::kConstant;
  throw ContractViolation("unknown w_dist mode '" + std::string(name) + "'");
}

void LossConfig::validate() const {
  if (!(w_self >= 0.0)) throw ContractViolation("w_self must be non-negative");
  if (!(w_dist_constant >= 0.0)) throw ContractViolation("w_dist constant must be non-negative");
  if (!(tau >= 0.0 && tau <= 1.0)) throw ContractViolation("tau must lie in [0, 1]");
  if (!(gamma1 >= 0.0)) throw ContractViolation("gamma1 must be non-negative");
  if (!(gamma2 > 0.0)) throw ContractViolation("gamma2 must be positive");
  if (!(seq_decay > 0.0 && seq_decay <= 1.0)) throw ContractViolation("seq_decay must lie in (0, 1]");
}

torch::Tensor sequence_l1_per_sample(const PredictionSequence& preds, const torch::Tensor& target,
                                     const torch::Tensor& valid, double seq_decay, bool allow_empty) {
  check_sequence(preds, target, valid);
  const auto mask = valid.to(target.dtype()).unsqueeze(1);  // [B, 1, H, W]
  const auto counts = mask.sum({1, 2, 3});                  // [B]
  if (!allow_empty && (counts <= 0).any().item<bool>()) {
    throw NoValidPixels("sequence loss: a sample has no valid pixels");
  }
  const auto denom = counts.clamp_min(1.0);

  const auto n = static_cast<int>(preds.flows.size());
  torch::Tensor total;
  for (int i = 0; i < n; ++i) {
    const double weight = std::pow(seq_decay, n - 1 - i);
    const auto l1 = ((preds.flows[i] - target).abs() * mask).sum({1, 2, 3}) / denom;
    total = total.defined() ? total + weight * l1 : weight * l1;
  }
  return total;
}

torch::Tensor sequence_l1(const PredictionSequence& preds, const torch::Tensor& target, const torch::Tensor& valid,
                          double seq_decay) {
  return sequence_l1_per_sample(preds, target, valid, seq_decay).mean();
}

torch::Tensor loss_dist_per_sample(const PredictionSequence& preds_on_distracted, const torch::Tensor& gt,
                                   const torch::Tensor& valid, double seq_decay) {
  return sequence_l1_per_sample(preds_on_distracted, gt, valid, seq_decay);
}

torch::Tensor loss_dist(const PredictionSequence& preds_on_distracted, const torch::Tensor& gt,
                        const torch::Tensor& valid, double seq_decay) {
  return loss_dist_per_sample(preds_on_distracted, gt, valid, seq_decay).mean();
}

torch::Tensor distraction_weights(const std::vector<double>& lambdas, const LossConfig& cfg) {
  std::vector<double> w(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    w[i] = cfg.w_dist_mode == DistractionWeightMode::kLambda ? lambdas[i] : cfg.w_dist_constant;
  }
  return torch::tensor(w, torch::kFloat64);
}

torch::Tensor loss_sup(const PredictionSequence& base_preds, const PredictionSequence& dist_preds,
                       const torch::Tensor& gt, const torch::Tensor& valid, const torch::Tensor& w_dist,
                       double seq_decay) {
  const auto base = sequence_l1_per_sample(base_preds, gt, valid, seq_decay);
  const auto dist = loss_dist_per_sample(dist_preds, gt, valid, seq_decay);
  if (w_dist.dim() != 1 || w_dist.size(0) != base.size(0)) {
    throw ContractViolation("w_dist must hold one weight per sample");
  }
  return (base + w_dist.to(base.dtype()) * dist).mean();
}

torch::Tensor loss_sup(const PredictionSequence& base_preds, const PredictionSequence& dist_preds,
                       const torch::Tensor& gt, const torch::Tensor& valid, double lambda, const LossConfig& cfg) {
  const auto batch = static_cast<std::size_t>(gt.size(0));
  return loss_sup(base_preds, dist_preds, gt, valid, distraction_weights(std::vector<double>(batch, lambda), cfg),
                  cfg.seq_decay);
}

torch::Tensor loss_self(const PredictionSequence& preds_on_distracted, const torch::Tensor& pseudo,
                        const torch::Tensor& conf_mask, double seq_decay) {
  const auto target = pseudo.detach();
  if (!(conf_mask > 0).any().item<bool>()) {
    // No confident pixel anywhere: an exact zero that does not touch the graph.
    return torch::zeros({}, target.options());
  }
  return sequence_l1_per_sample(preds_on_distracted, target, conf_mask, seq_decay, /*allow_empty=*/true).mean();
}

torch::Tensor loss_total(const torch::Tensor& sup, const torch::Tensor& self, double w_self) {
  const double s = sup.item<double>();
  const double u = self.item<double>();
  if (!std::isfinite(s) || !std::isfinite(u)) {
    throw TrainingInstability("non-finite loss component (sup = " + std::to_string(s) +
                              ", self = " + std::to_string(u) + ")");
  }
  return sup + w_self * self;
}

}  // namespace flowmix
