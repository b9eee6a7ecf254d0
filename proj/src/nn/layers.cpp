#include "sleepfusion/nn/layers.hpp"

#include <cmath>

namespace sleepfusion::nn {

using namespace ad;

LayerNormWeights make_layernorm(ParameterStore& store, const std::string& prefix,
                                int d_model) {
  LayerNormWeights w;
  w.gamma = store.add(prefix + ".gamma", Tensor::full({d_model}, 1.0, true));
  w.beta = store.add(prefix + ".beta", Tensor::zeros({d_model}, true));
  return w;
}

AttentionWeights make_attention(ParameterStore& store, const std::string& prefix,
                                const ModelConfig& cfg, Rng& rng) {
  AttentionWeights w;
  for (int h = 0; h < cfg.heads; ++h) {
    const std::string hp = prefix + ".h" + std::to_string(h);
    w.w_query.push_back(store.add(hp + ".wq", Tensor::glorot({cfg.d_model, cfg.d_key}, rng)));
    w.w_key.push_back(store.add(hp + ".wk", Tensor::glorot({cfg.d_model, cfg.d_key}, rng)));
    w.w_value.push_back(
        store.add(hp + ".wv", Tensor::glorot({cfg.d_model, cfg.d_value}, rng)));
  }
  w.w_out = store.add(prefix + ".wo",
                      Tensor::glorot({cfg.heads * cfg.d_value, cfg.d_model}, rng));
  return w;
}

RelativePositionTable make_rel_table(ParameterStore& store, const std::string& prefix,
                                     int radius, int d_key, Rng& rng) {
  RelativePositionTable t;
  t.radius = radius;
  t.table = store.add(prefix + ".rel",
                      Tensor::randn({2 * radius + 1, d_key}, rng, 0.02, true));
  return t;
}

FeedForwardWeights make_feed_forward(ParameterStore& store, const std::string& prefix,
                                     const ModelConfig& cfg, Rng& rng) {
  FeedForwardWeights w;
  w.w1 = store.add(prefix + ".w1", Tensor::glorot({cfg.d_model, cfg.d_ff}, rng));
  w.b1 = store.add(prefix + ".b1", Tensor::zeros({cfg.d_ff}, true));
  w.w2 = store.add(prefix + ".w2", Tensor::glorot({cfg.d_ff, cfg.d_model}, rng));
  w.b2 = store.add(prefix + ".b2", Tensor::zeros({cfg.d_model}, true));
  return w;
}

EncoderLayerWeights make_encoder_layer(ParameterStore& store, const std::string& prefix,
                                       const ModelConfig& cfg, Rng& rng) {
  EncoderLayerWeights w;
  w.sa = make_attention(store, prefix + ".sa", cfg, rng);
  w.ln_sa = make_layernorm(store, prefix + ".ln_sa", cfg.d_model);
  w.ff = make_feed_forward(store, prefix + ".ff", cfg, rng);
  w.ln_ff = make_layernorm(store, prefix + ".ln_ff", cfg.d_model);
  return w;
}

MultimodalLayerWeights make_multimodal_layer(ParameterStore& store,
                                             const std::string& prefix,
                                             const EncoderLayerWeights& base,
                                             const ModelConfig& cfg, Rng& rng) {
  MultimodalLayerWeights w;
  w.sa = base.sa;  // aliased storage
  w.ff = base.ff;  // aliased storage
  w.ln_sa = make_layernorm(store, prefix + ".ln_sa", cfg.d_model);
  w.ca = make_attention(store, prefix + ".ca", cfg, rng);
  w.ln_ca = make_layernorm(store, prefix + ".ln_ca", cfg.d_model);
  w.ln_ff = make_layernorm(store, prefix + ".ln_ff", cfg.d_model);
  return w;
}

namespace {

Tensor attention_core(const Tensor& queries_src, const Tensor& keys_src,
                      const AttentionWeights& w, const RelativePositionTable* rel,
                      const ModelConfig& cfg, const RunCtx& ctx) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.d_key));
  const int key_len = keys_src.dim(1);
  std::vector<Tensor> heads;
  heads.reserve(cfg.heads);
  for (int h = 0; h < cfg.heads; ++h) {
    Tensor q = matmul(queries_src, w.w_query[h]);
    Tensor k = matmul(keys_src, w.w_key[h]);
    Tensor v = matmul(keys_src, w.w_value[h]);
    Tensor logits = matmul_nt(q, k);
    if (rel) {
      logits = add(logits, relative_position_bias(q, rel->table, key_len, rel->radius));
    }
    Tensor probs = softmax(scale(logits, inv_sqrt_dk), -1);
    if (ctx.training && cfg.dropout > 0.0) {
      probs = dropout(probs, cfg.dropout, true, *ctx.rng);
    }
    heads.push_back(matmul(probs, v));
  }
  Tensor merged = concat_last(heads);
  return matmul(merged, w.w_out);
}

}  // namespace

Tensor self_attention(const Tensor& x, const AttentionWeights& w,
                      const RelativePositionTable* rel, const ModelConfig& cfg,
                      const RunCtx& ctx) {
  return attention_core(x, x, w, rel, cfg, ctx);
}

Tensor cross_attention(const Tensor& x_self, const Tensor& x_other,
                       const AttentionWeights& w, const ModelConfig& cfg,
                       const RunCtx& ctx) {
  if (x_other.dim(1) < 1) throw ShapeError("cross_attention: empty other-modality sequence");
  return attention_core(x_self, x_other, w, nullptr, cfg, ctx);
}

Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w, const ModelConfig& cfg,
                    const RunCtx& ctx) {
  Tensor h = relu(add_bias(matmul(x, w.w1), w.b1));
  if (ctx.training && cfg.dropout > 0.0) h = dropout(h, cfg.dropout, true, *ctx.rng);
  return add_bias(matmul(h, w.w2), w.b2);
}

Tensor encoder_layer(const Tensor& x, const EncoderLayerWeights& w,
                     const RelativePositionTable* rel, const ModelConfig& cfg,
                     const RunCtx& ctx) {
  Tensor z = layernorm(add(x, self_attention(x, w.sa, rel, cfg, ctx)), w.ln_sa.gamma,
                       w.ln_sa.beta);
  return layernorm(add(z, feed_forward(z, w.ff, cfg, ctx)), w.ln_ff.gamma, w.ln_ff.beta);
}

Tensor multimodal_layer(const Tensor& x, const Tensor& other,
                        const MultimodalLayerWeights& w, const RelativePositionTable* rel,
                        const ModelConfig& cfg, const RunCtx& ctx) {
  Tensor z = layernorm(add(x, self_attention(x, w.sa, rel, cfg, ctx)), w.ln_sa.gamma,
                       w.ln_sa.beta);
  Tensor c = layernorm(add(z, cross_attention(z, other, w.ca, cfg, ctx)), w.ln_ca.gamma,
                       w.ln_ca.beta);
  return layernorm(add(c, feed_forward(c, w.ff, cfg, ctx)), w.ln_ff.gamma, w.ln_ff.beta);
}

}  // namespace sleepfusion::nn
