#pragma once

#include <span>
#include <vector>

#include "sleepfusion/nn/fusion.hpp"

namespace sleepfusion::nn {

struct LossConfig {
  double lambda_align = 0.1;
  bool ms_enabled = true;
  bool al_enabled = true;
  int num_labels = 5;
  bool al_normalize = true;
  bool al_use_inner_cls = false;

  static LossConfig from_model(const ModelConfig& cfg) {
    return LossConfig{cfg.lambda_align, cfg.ms_loss,        cfg.al_loss,
                      cfg.num_labels,   cfg.al_normalize,   cfg.al_use_inner_cls};
  }
};

struct LossBreakdown {
  Tensor total;  // scalar graph node, backpropagatable
  double total_value = 0.0;
  double ce_multimodal = 0.0;
  std::array<double, kNumModalities> ce_per_modality{};
  double al_value = 0.0;
};

/// Sum over modalities of the mean supervised CE (Eq. for the MS term).
/// Every slot in `logits_uni` must be defined.
Tensor multi_supervised_loss(const std::array<Tensor, kNumModalities>& logits_uni,
                             const std::vector<int>& labels);

/// Window-matching loss between the two modalities' per-window
/// representations [L,d]: similarity logits from the row product (rows
/// L2-normalized by default), identity-matrix target, both prediction
/// directions, scaled by lambda. L=1 is the degenerate zero-loss case.
Tensor alignment_loss(const Tensor& outer_a, const Tensor& outer_b, double lambda,
                      bool normalize = true);

// One batch item after the model forward.
struct ItemOutputs {
  ForwardOutput out;
  std::array<bool, kNumModalities> present{};
  const std::vector<int>* labels = nullptr;
};

/// Batch objective. Complete items contribute multimodal CE plus the enabled
/// MS/AL terms; modality-incomplete items contribute only the present
/// modality's unimodal CE. Components are batch-averaged sums composed as
/// total = ce_multimodal + ce_per_modality[0] + ce_per_modality[1] + al.
LossBreakdown total_loss(std::span<const ItemOutputs> batch, const LossConfig& cfg);

}  // namespace sleepfusion::nn
