#include "sleepfusion/nn/encoder.hpp"

namespace sleepfusion::nn {

using namespace ad;

namespace {

EncoderBlock make_block(ParameterStore& store, const std::string& prefix,
                        const ModelConfig& cfg, Rng& rng, int layers, int radius) {
  EncoderBlock block;
  block.rel = make_rel_table(store, prefix, radius, cfg.d_key, rng);
  for (int l = 0; l < layers; ++l) {
    block.layers.push_back(
        make_encoder_layer(store, prefix + ".l" + std::to_string(l), cfg, rng));
  }
  return block;
}

}  // namespace

UnimodalEncoder make_unimodal_encoder(ParameterStore& store, const std::string& prefix,
                                      const ModelConfig& cfg, Rng& rng,
                                      int inner_radius_override) {
  UnimodalEncoder enc;
  enc.in_proj_w = store.add(prefix + ".proj.w",
                            Tensor::glorot({cfg.feature_dim, cfg.d_model}, rng));
  enc.in_proj_b = store.add(prefix + ".proj.b", Tensor::zeros({cfg.d_model}, true));
  enc.cls = store.add(prefix + ".cls", Tensor::randn({cfg.d_model}, rng, 0.02, true));
  // radius = max sequence length handled by the block
  const int inner_radius =
      inner_radius_override > 0 ? inner_radius_override : cfg.frames_per_window + 1;
  enc.inner = make_block(store, prefix + ".inner", cfg, rng, cfg.inner_layers, inner_radius);
  enc.outer = make_block(store, prefix + ".outer", cfg, rng, cfg.outer_layers,
                         cfg.max_outer_len);
  return enc;
}

PredictorHead make_predictor(ParameterStore& store, const std::string& prefix,
                             const ModelConfig& cfg, Rng& rng) {
  PredictorHead head;
  head.w1 = store.add(prefix + ".w1", Tensor::glorot({cfg.d_model, cfg.d_ff}, rng));
  head.b1 = store.add(prefix + ".b1", Tensor::zeros({cfg.d_ff}, true));
  head.w2 = store.add(prefix + ".w2", Tensor::glorot({cfg.d_ff, cfg.num_labels}, rng));
  head.b2 = store.add(prefix + ".b2", Tensor::zeros({cfg.num_labels}, true));
  return head;
}

Tensor embed_window_tokens(const UnimodalEncoder& enc, const Tensor& windows,
                           const ModelConfig& cfg) {
  if (windows.ndim() != 3 || windows.dim(1) != cfg.frames_per_window ||
      windows.dim(2) != cfg.feature_dim) {
    throw ShapeError("inner_encode: expected [L," + std::to_string(cfg.frames_per_window) +
                     "," + std::to_string(cfg.feature_dim) + "], got " +
                     shape_str(windows.shape()));
  }
  Tensor projected = add_bias(matmul(windows, enc.in_proj_w), enc.in_proj_b);
  return prepend_token(projected, enc.cls);
}

InnerResult inner_encode(const UnimodalEncoder& enc, const Tensor& windows,
                         const ModelConfig& cfg, const RunCtx& ctx) {
  Tensor x = embed_window_tokens(enc, windows, cfg);
  for (const auto& layer : enc.inner.layers) {
    x = encoder_layer(x, layer, &enc.inner.rel, cfg, ctx);
  }
  return InnerResult{take_token(x, 0), x};
}

Tensor outer_encode(const UnimodalEncoder& enc, const Tensor& summaries,
                    const ModelConfig& cfg, const RunCtx& ctx) {
  if (summaries.ndim() != 2 || summaries.dim(1) != cfg.d_model) {
    throw ShapeError("outer_encode: expected [L," + std::to_string(cfg.d_model) +
                     "], got " + shape_str(summaries.shape()));
  }
  const int len = summaries.dim(0);
  if (len < 1 || len > cfg.max_outer_len) {
    throw ShapeError("outer_encode: sequence length " + std::to_string(len) +
                     " outside [1," + std::to_string(cfg.max_outer_len) + "]");
  }
  Tensor x = reshape(summaries, {1, len, cfg.d_model});
  for (const auto& layer : enc.outer.layers) {
    x = encoder_layer(x, layer, &enc.outer.rel, cfg, ctx);
  }
  return reshape(x, {len, cfg.d_model});
}

Tensor predict(const PredictorHead& head, const Tensor& states, const ModelConfig& cfg,
               const RunCtx& ctx) {
  Tensor h = relu(add_bias(matmul(states, head.w1), head.b1));
  if (ctx.training && cfg.dropout > 0.0) h = dropout(h, cfg.dropout, true, *ctx.rng);
  return add_bias(matmul(h, head.w2), head.b2);
}

UnimodalOutput unimodal_forward(const UnimodalEncoder& enc, const PredictorHead& head,
                                const Tensor& windows, const ModelConfig& cfg,
                                const RunCtx& ctx) {
  InnerResult inner = inner_encode(enc, windows, cfg, ctx);
  Tensor outer = outer_encode(enc, inner.summaries, cfg, ctx);
  Tensor logits = predict(head, outer, cfg, ctx);
  return UnimodalOutput{logits, inner.tokens, outer, inner.summaries};
}

}  // namespace sleepfusion::nn
