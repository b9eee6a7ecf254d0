#pragma once

#include "sleepfusion/nn/layers.hpp"

namespace sleepfusion::nn {

struct EncoderBlock {
  std::vector<EncoderLayerWeights> layers;
  RelativePositionTable rel;
};

// 2-layer MLP d_model -> d_ff -> num_labels with dropout on the hidden layer.
struct PredictorHead {
  Tensor w1, b1, w2, b2;
};

// Inner-outer unimodal encoder: learned input projection, [CLS] token,
// an inner block over the frames of one window and an outer block over
// window summaries.
struct UnimodalEncoder {
  Tensor in_proj_w, in_proj_b;  // feature_dim -> d_model
  Tensor cls;                   // [d_model]
  EncoderBlock inner;
  EncoderBlock outer;
};

UnimodalEncoder make_unimodal_encoder(ad::ParameterStore& store, const std::string& prefix,
                                      const ModelConfig& cfg, ad::Rng& rng,
                                      int inner_radius_override = -1);
PredictorHead make_predictor(ad::ParameterStore& store, const std::string& prefix,
                             const ModelConfig& cfg, ad::Rng& rng);

/// Projects window frames to d_model and prepends [CLS]: [L,T,D] -> [L,T+1,d].
Tensor embed_window_tokens(const UnimodalEncoder& enc, const Tensor& windows,
                           const ModelConfig& cfg);

struct InnerResult {
  Tensor summaries;  // [L, d_model] — final state at the [CLS] position
  Tensor tokens;     // [L, T+1, d_model]
};

/// Runs the inner block over every window of one outer sequence.
InnerResult inner_encode(const UnimodalEncoder& enc, const Tensor& windows,
                         const ModelConfig& cfg, const RunCtx& ctx);
/// Runs the outer block over window summaries [L, d_model] (1 <= L <= max).
Tensor outer_encode(const UnimodalEncoder& enc, const Tensor& summaries,
                    const ModelConfig& cfg, const RunCtx& ctx);
Tensor predict(const PredictorHead& head, const Tensor& states, const ModelConfig& cfg,
               const RunCtx& ctx);

struct UnimodalOutput {
  Tensor logits;        // [L, num_labels]
  Tensor inner_tokens;  // [L, T+1, d_model]
  Tensor outer_states;  // [L, d_model]
  Tensor summaries;     // [L, d_model] inner [CLS] states
};

UnimodalOutput unimodal_forward(const UnimodalEncoder& enc, const PredictorHead& head,
                                const Tensor& windows, const ModelConfig& cfg,
                                const RunCtx& ctx);

}  // namespace sleepfusion::nn
