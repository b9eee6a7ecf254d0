#include "sleepfusion/nn/fusion.hpp"

namespace sleepfusion::nn {

using namespace ad;

namespace {

MultimodalEncoder make_multimodal_encoder(ParameterStore& store, const std::string& prefix,
                                          const UnimodalEncoder& base,
                                          const ModelConfig& cfg, Rng& rng) {
  MultimodalEncoder enc;
  for (std::size_t l = 0; l < base.inner.layers.size(); ++l) {
    enc.inner_layers.push_back(make_multimodal_layer(
        store, prefix + ".inner.l" + std::to_string(l), base.inner.layers[l], cfg, rng));
  }
  for (std::size_t l = 0; l < base.outer.layers.size(); ++l) {
    enc.outer_layers.push_back(make_multimodal_layer(
        store, prefix + ".outer.l" + std::to_string(l), base.outer.layers[l], cfg, rng));
  }
  return enc;
}

void check_alignment(const std::array<ModalityInput, kNumModalities>& in) {
  if (in[kEEG].present && in[kEOG].present &&
      in[kEEG].windows.dim(0) != in[kEOG].windows.dim(0)) {
    throw ShapeError("fusion: modalities carry different outer lengths: " +
                     shape_str(in[kEEG].windows.shape()) + " vs " +
                     shape_str(in[kEOG].windows.shape()));
  }
  if (!in[kEEG].present && !in[kEOG].present) {
    throw ConfigError("fusion: at least one modality must be present");
  }
}

}  // namespace

FusionModel::FusionModel(const ModelConfig& config, ParameterStore& store, Rng& init_rng) {
  cfg = config;
  cfg.validate();
  switch (cfg.variant) {
    case FusionVariant::Unimodal: {
      const int m = cfg.unimodal_modality;
      encoders[m] = make_unimodal_encoder(store, kModalityNames[m], cfg, init_rng);
      head_uni[m] = make_predictor(store, std::string("head.") + kModalityNames[m], cfg,
                                   init_rng);
      break;
    }
    case FusionVariant::Early: {
      encoders[0] = make_unimodal_encoder(store, "joint", cfg, init_rng,
                                          2 * cfg.frames_per_window + 1);
      for (int m = 0; m < kNumModalities; ++m) {
        modality_embedding[m] =
            store.add(std::string("mod_emb.") + kModalityNames[m],
                      Tensor::randn({cfg.d_model}, init_rng, 0.02, true));
      }
      head_mm = make_predictor(store, "head.mm", cfg, init_rng);
      for (int m = 0; m < kNumModalities; ++m) {
        head_uni[m] = cfg.share_predictors
                          ? head_mm
                          : make_predictor(store, std::string("head.") + kModalityNames[m],
                                           cfg, init_rng);
      }
      break;
    }
    case FusionVariant::MidLate:
    case FusionVariant::CoRe: {
      for (int m = 0; m < kNumModalities; ++m) {
        encoders[m] = make_unimodal_encoder(store, kModalityNames[m], cfg, init_rng);
      }
      if (cfg.variant == FusionVariant::CoRe) {
        for (int m = 0; m < kNumModalities; ++m) {
          mm_encoders[m] = make_multimodal_encoder(
              store, std::string("mm_") + kModalityNames[m], encoders[m], cfg, init_rng);
        }
      }
      head_mm = make_predictor(store, "head.mm", cfg, init_rng);
      for (int m = 0; m < kNumModalities; ++m) {
        head_uni[m] = cfg.share_predictors
                          ? head_mm
                          : make_predictor(store, std::string("head.") + kModalityNames[m],
                                           cfg, init_rng);
      }
      break;
    }
  }
}

FusionModel FusionModel::unimodal_view(const FusionModel& parent, int modality) {
  if (parent.cfg.variant != FusionVariant::CoRe &&
      parent.cfg.variant != FusionVariant::MidLate) {
    throw ConfigError("unimodal_view: parent must have per-modality encoders");
  }
  FusionModel view;
  view.cfg = parent.cfg;
  view.cfg.variant = FusionVariant::Unimodal;
  view.cfg.unimodal_modality = modality;
  view.encoders[modality] = parent.encoders[modality];  // aliased tensors
  view.head_uni[modality] = parent.head_uni[modality];
  return view;
}

ForwardOutput FusionModel::forward(const std::array<ModalityInput, kNumModalities>& inputs,
                                   const RunCtx& ctx) const {
  check_alignment(inputs);
  switch (cfg.variant) {
    case FusionVariant::Unimodal: return forward_unimodal(inputs, ctx);
    case FusionVariant::Early: return forward_early(inputs, ctx);
    case FusionVariant::MidLate: return forward_midlate(inputs, ctx);
    case FusionVariant::CoRe: return forward_core(inputs, ctx);
  }
  throw ConfigError("fusion: unknown variant");
}

ForwardOutput FusionModel::forward_unimodal(
    const std::array<ModalityInput, kNumModalities>& in, const RunCtx& ctx) const {
  const int m = cfg.unimodal_modality;
  if (!in[m].present) {
    throw ConfigError(std::string("unimodal model needs its modality: ") +
                      kModalityNames[m]);
  }
  ForwardOutput out;
  UnimodalOutput uni = unimodal_forward(encoders[m], head_uni[m], in[m].windows, cfg, ctx);
  out.logits_uni[m] = uni.logits;
  out.outer_uni[m] = uni.outer_states;
  out.inner_cls[m] = uni.summaries;
  return out;
}

ForwardOutput FusionModel::forward_midlate(
    const std::array<ModalityInput, kNumModalities>& in, const RunCtx& ctx) const {
  ForwardOutput out;
  for (int m = 0; m < kNumModalities; ++m) {
    if (!in[m].present) continue;
    UnimodalOutput uni =
        unimodal_forward(encoders[m], head_uni[m], in[m].windows, cfg, ctx);
    out.logits_uni[m] = uni.logits;
    out.outer_uni[m] = uni.outer_states;
    out.inner_cls[m] = uni.summaries;
  }
  if (in[kEEG].present && in[kEOG].present) {
    Tensor mm_repr = add(out.outer_uni[kEEG], out.outer_uni[kEOG]);
    out.logits_mm = predict(head_mm, mm_repr, cfg, ctx);
  }
  return out;
}

ForwardOutput FusionModel::forward_core(
    const std::array<ModalityInput, kNumModalities>& in, const RunCtx& ctx) const {
  ForwardOutput out;
  std::array<Tensor, kNumModalities> embedded;     // [L,T+1,d] pre-encoder tokens
  std::array<Tensor, kNumModalities> uni_tokens;   // final inner states

  for (int m = 0; m < kNumModalities; ++m) {
    if (!in[m].present) continue;
    const UnimodalEncoder& enc = encoders[m];
    embedded[m] = embed_window_tokens(enc, in[m].windows, cfg);
    Tensor x = embedded[m];
    for (const auto& layer : enc.inner.layers) {
      x = encoder_layer(x, layer, &enc.inner.rel, cfg, ctx);
    }
    uni_tokens[m] = x;
    out.inner_cls[m] = take_token(x, 0);
    out.outer_uni[m] = outer_encode(enc, out.inner_cls[m], cfg, ctx);
    out.logits_uni[m] = predict(head_uni[m], out.outer_uni[m], cfg, ctx);
  }

  if (in[kEEG].present && in[kEOG].present) {
    const int len = in[kEEG].windows.dim(0);
    for (int m = 0; m < kNumModalities; ++m) {
      const int other = 1 - m;
      const UnimodalEncoder& enc = encoders[m];
      // Inner multimodal branch: same input tokens, CA to the other
      // modality's final inner states (its [CLS] included).
      Tensor x = embedded[m];
      for (const auto& layer : mm_encoders[m].inner_layers) {
        x = multimodal_layer(x, uni_tokens[other], layer, &enc.inner.rel, cfg, ctx);
      }
      Tensor mm_summary = take_token(x, 0);  // [L,d]
      // Outer multimodal branch: CA to the other modality's outer states.
      Tensor seq = reshape(mm_summary, {1, len, cfg.d_model});
      Tensor other_outer = reshape(out.outer_uni[other], {1, len, cfg.d_model});
      for (const auto& layer : mm_encoders[m].outer_layers) {
        seq = multimodal_layer(seq, other_outer, layer, &enc.outer.rel, cfg, ctx);
      }
      out.grounded[m] = reshape(seq, {len, cfg.d_model});
    }
    Tensor mm_repr = add(out.grounded[kEEG], out.grounded[kEOG]);
    out.logits_mm = predict(head_mm, mm_repr, cfg, ctx);
  }
  return out;
}

ForwardOutput FusionModel::forward_early(
    const std::array<ModalityInput, kNumModalities>& in, const RunCtx& ctx) const {
  const UnimodalEncoder& enc = encoders[0];
  ForwardOutput out;

  auto project = [&](int m) {
    Tensor x = add_bias(matmul(in[m].windows, enc.in_proj_w), enc.in_proj_b);
    return add_bias(x, modality_embedding[m]);
  };
  auto run_blocks = [&](Tensor tokens, const PredictorHead& head) {
    Tensor x = prepend_token(tokens, enc.cls);
    for (const auto& layer : enc.inner.layers) {
      x = encoder_layer(x, layer, &enc.inner.rel, cfg, ctx);
    }
    Tensor summaries = take_token(x, 0);
    Tensor outer = outer_encode(enc, summaries, cfg, ctx);
    return std::tuple{predict(head, outer, cfg, ctx), outer, summaries};
  };

  // Separate single-modality passes feed the unimodal logits (and the AL
  // representations, which Early lacks in its joint pass).
  for (int m = 0; m < kNumModalities; ++m) {
    if (!in[m].present) continue;
    auto [logits, outer, summaries] = run_blocks(project(m), head_uni[m]);
    out.logits_uni[m] = logits;
    out.outer_uni[m] = outer;
    out.inner_cls[m] = summaries;
  }

  if (in[kEEG].present && in[kEOG].present) {
    Tensor joint = concat_tokens(project(kEEG), project(kEOG));  // [L,2T,d]
    auto [logits, outer, summaries] = run_blocks(joint, head_mm);
    (void)outer;
    (void)summaries;
    out.logits_mm = logits;
  }
  return out;
}

Tensor FusionModel::infer_with_missing(
    const std::array<ModalityInput, kNumModalities>& inputs, const RunCtx& ctx) const {
  check_alignment(inputs);
  if (cfg.variant == FusionVariant::Unimodal) {
    return forward_unimodal(inputs, ctx).logits_uni[cfg.unimodal_modality];
  }
  const bool both = inputs[kEEG].present && inputs[kEOG].present;
  if (both) {
    if (cfg.variant == FusionVariant::Early) {
      // joint pass only; the unimodal passes are not needed for routing
      const UnimodalEncoder& enc = encoders[0];
      auto project = [&](int m) {
        Tensor x = add_bias(matmul(inputs[m].windows, enc.in_proj_w), enc.in_proj_b);
        return add_bias(x, modality_embedding[m]);
      };
      Tensor x = prepend_token(concat_tokens(project(kEEG), project(kEOG)), enc.cls);
      for (const auto& layer : enc.inner.layers) {
        x = encoder_layer(x, layer, &enc.inner.rel, cfg, ctx);
      }
      Tensor outer = outer_encode(enc, take_token(x, 0), cfg, ctx);
      return predict(head_mm, outer, cfg, ctx);
    }
    return forward(inputs, ctx).logits_mm;
  }
  const int m = inputs[kEEG].present ? kEEG : kEOG;
  return forward(inputs, ctx).logits_uni[m];
}

}  // namespace sleepfusion::nn
