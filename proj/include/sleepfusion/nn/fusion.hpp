#pragma once

#include <array>
#include <optional>

#include "sleepfusion/nn/encoder.hpp"

namespace sleepfusion::nn {

// Coordinated-representation branch for one modality: same block structure as
// the unimodal encoder with a cross-attention sublayer per layer. SA/FF (and
// the relative tables) alias the modality's unimodal encoder; CA weights and
// layernorms are its own.
struct MultimodalEncoder {
  std::vector<MultimodalLayerWeights> inner_layers;
  std::vector<MultimodalLayerWeights> outer_layers;
};

struct ModalityInput {
  bool present = false;
  Tensor windows;  // [L, T, D]
};

struct ForwardOutput {
  Tensor logits_mm;                        // defined when the variant/presence allows
  std::array<Tensor, kNumModalities> logits_uni;
  std::array<Tensor, kNumModalities> outer_uni;  // unimodal outer states [L,d]
  std::array<Tensor, kNumModalities> inner_cls;  // unimodal [CLS] summaries [L,d]
  std::array<Tensor, kNumModalities> grounded;   // CoRe grounded outer outputs [L,d]
};

// One model facade over the four architectures. All parameters live in the
// ParameterStore handed to the constructor; copies of this struct share them.
struct FusionModel {
  ModelConfig cfg;

  // Unimodal/CoRe/MidLate: one encoder per modality. Early: encoders[0] is
  // the shared joint encoder (encoders[1] unused).
  std::array<UnimodalEncoder, kNumModalities> encoders;
  std::array<MultimodalEncoder, kNumModalities> mm_encoders;  // CoRe only
  PredictorHead head_mm;
  std::array<PredictorHead, kNumModalities> head_uni;
  std::array<Tensor, kNumModalities> modality_embedding;  // Early only

  FusionModel() = default;
  FusionModel(const ModelConfig& config, ad::ParameterStore& store, ad::Rng& init_rng);

  /// Standalone unimodal-equivalent model sharing the parent's tensors for
  /// one modality (weight-path identity for missing-modality inference).
  static FusionModel unimodal_view(const FusionModel& parent, int modality);

  /// One pass producing every output the variant and input presence allow.
  ForwardOutput forward(const std::array<ModalityInput, kNumModalities>& inputs,
                        const RunCtx& ctx) const;

  /// Missing-modality routing: both present -> multimodal logits; exactly one
  /// present -> that modality's unimodal-branch logits. Never retrains.
  Tensor infer_with_missing(const std::array<ModalityInput, kNumModalities>& inputs,
                            const RunCtx& ctx) const;

 private:
  ForwardOutput forward_core(const std::array<ModalityInput, kNumModalities>& in,
                             const RunCtx& ctx) const;
  ForwardOutput forward_midlate(const std::array<ModalityInput, kNumModalities>& in,
                                const RunCtx& ctx) const;
  ForwardOutput forward_early(const std::array<ModalityInput, kNumModalities>& in,
                              const RunCtx& ctx) const;
  ForwardOutput forward_unimodal(const std::array<ModalityInput, kNumModalities>& in,
                                 const RunCtx& ctx) const;
};

}  // namespace sleepfusion::nn
