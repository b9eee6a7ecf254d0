#pragma once

#include <string>
#include <vector>

#include "sleepfusion/ad/adam.hpp"
#include "sleepfusion/ad/ops.hpp"
#include "sleepfusion/nn/config.hpp"

namespace sleepfusion::nn {

using ad::Tensor;

struct RunCtx {
  bool training = false;
  ad::Rng* rng = nullptr;  // needed only when training with dropout > 0
};

struct LayerNormWeights {
  Tensor gamma, beta;
};

// Per-head projections, one tensor per head.
struct AttentionWeights {
  std::vector<Tensor> w_query;  // [d_model, d_key]
  std::vector<Tensor> w_key;    // [d_model, d_key]
  std::vector<Tensor> w_value;  // [d_model, d_value]
  Tensor w_out;                 // [heads * d_value, d_model]
};

// Learnable embeddings over clipped relative offsets, added to key vectors.
// One table per block, shared by the block's layers and heads.
struct RelativePositionTable {
  Tensor table;  // [2*radius+1, d_key]
  int radius = 0;
};

struct FeedForwardWeights {
  Tensor w1, b1;  // [d_model, d_ff], [d_ff]
  Tensor w2, b2;  // [d_ff, d_model], [d_model]
};

struct EncoderLayerWeights {
  AttentionWeights sa;
  LayerNormWeights ln_sa;
  FeedForwardWeights ff;
  LayerNormWeights ln_ff;
};

// Multimodal layer: SA and FF alias the unimodal layer's tensors; the
// cross-attention weights and all layernorms are its own.
struct MultimodalLayerWeights {
  AttentionWeights sa;
  LayerNormWeights ln_sa;
  AttentionWeights ca;
  LayerNormWeights ln_ca;
  FeedForwardWeights ff;
  LayerNormWeights ln_ff;
};

// --- builders (register parameters under `prefix.`) ---
LayerNormWeights make_layernorm(ad::ParameterStore& store, const std::string& prefix,
                                int d_model);
AttentionWeights make_attention(ad::ParameterStore& store, const std::string& prefix,
                                const ModelConfig& cfg, ad::Rng& rng);
RelativePositionTable make_rel_table(ad::ParameterStore& store, const std::string& prefix,
                                     int radius, int d_key, ad::Rng& rng);
FeedForwardWeights make_feed_forward(ad::ParameterStore& store, const std::string& prefix,
                                     const ModelConfig& cfg, ad::Rng& rng);
EncoderLayerWeights make_encoder_layer(ad::ParameterStore& store, const std::string& prefix,
                                       const ModelConfig& cfg, ad::Rng& rng);
/// CA + layernorms are fresh parameters; SA/FF alias `base`.
MultimodalLayerWeights make_multimodal_layer(ad::ParameterStore& store,
                                             const std::string& prefix,
                                             const EncoderLayerWeights& base,
                                             const ModelConfig& cfg, ad::Rng& rng);

// --- forward ---
/// Multi-head self-attention over x [B,S,d_model]; `rel` may be null.
Tensor self_attention(const Tensor& x, const AttentionWeights& w,
                      const RelativePositionTable* rel, const ModelConfig& cfg,
                      const RunCtx& ctx);
/// Queries from x_self [B,S2,d]; keys/values from x_other [B,S1,d].
Tensor cross_attention(const Tensor& x_self, const Tensor& x_other,
                       const AttentionWeights& w, const ModelConfig& cfg,
                       const RunCtx& ctx);
Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w, const ModelConfig& cfg,
                    const RunCtx& ctx);
/// Post-norm residual layer: layernorm(x + SA(x)), then layernorm(z + FF(z)).
Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w,
                     const RelativePositionTable* rel, const ModelConfig& cfg,
                     const RunCtx& ctx);
/// Same with cross-attention inserted between SA and FF.
Tensor multimodal_layer(const Tensor& x, const Tensor& other,
                        const MultimodalLayerWeights& w, const RelativePositionTable* rel,
                        const ModelConfig& cfg, const RunCtx& ctx);

}  // namespace sleepfusion::nn
