#include "sleepfusion/nn/config.hpp"

#include <sstream>

#include "sleepfusion/ad/tensor.hpp"

namespace sleepfusion::nn {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ad::ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(feature_dim, "feature_dim");
  positive(frames_per_window, "frames_per_window");
  positive(max_outer_len, "max_outer_len");
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(d_key, "d_key");
  positive(d_value, "d_value");
  positive(d_ff, "d_ff");
  positive(inner_layers, "inner_layers");
  positive(outer_layers, "outer_layers");
  if (num_labels < 2) throw ad::ConfigError("model config: num_labels must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ad::ConfigError("model config: dropout must be in [0,1)");
  }
  if (lambda_align < 0.0) throw ad::ConfigError("model config: lambda_align must be >= 0");
  if (unimodal_modality < 0 || unimodal_modality >= kNumModalities) {
    throw ad::ConfigError("model config: unimodal_modality out of range");
  }
}

std::string ModelConfig::describe() const {
  std::ostringstream os;
  os << "variant=" << variant_name(variant) << " feature_dim=" << feature_dim
     << " frames_per_window=" << frames_per_window << " max_outer_len=" << max_outer_len
     << " num_labels=" << num_labels << " d_model=" << d_model << " heads=" << heads
     << " d_key=" << d_key << " d_value=" << d_value << " d_ff=" << d_ff
     << " inner_layers=" << inner_layers << " outer_layers=" << outer_layers
     << " dropout=" << dropout << " ms=" << ms_loss << " al=" << al_loss
     << " lambda_align=" << lambda_align << " al_normalize=" << al_normalize
     << " al_use_inner_cls=" << al_use_inner_cls << " share_predictors=" << share_predictors
     << " unimodal_modality=" << unimodal_modality;
  return os.str();
}

ModelConfig ModelConfig::reduced() {
  ModelConfig cfg;
  cfg.feature_dim = 8;
  cfg.frames_per_window = 5;
  cfg.max_outer_len = 3;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.d_key = 8;
  cfg.d_value = 8;
  cfg.d_ff = 32;
  cfg.inner_layers = 2;
  cfg.outer_layers = 2;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace sleepfusion::nn
