#pragma once

#include <array>
#include <string>

namespace sleepfusion::nn {

enum class FusionVariant { Unimodal, Early, MidLate, CoRe };

inline const char* variant_name(FusionVariant v) {
  switch (v) {
    case FusionVariant::Unimodal: return "unimodal";
    case FusionVariant::Early: return "early";
    case FusionVariant::MidLate: return "midlate";
    case FusionVariant::CoRe: return "core";
  }
  return "?";
}

inline constexpr int kNumModalities = 2;
inline constexpr std::array<const char*, kNumModalities> kModalityNames{"eeg", "eog"};
inline constexpr int kEEG = 0;
inline constexpr int kEOG = 1;

struct ModelConfig {
  // data geometry
  int feature_dim = 128;       // frequency features per frame
  int frames_per_window = 29;  // STFT frames in one 30 s window
  int max_outer_len = 21;      // windows per outer sequence
  int num_labels = 5;

  // encoder geometry
  int d_model = 128;
  int heads = 8;
  int d_key = 16;
  int d_value = 128;
  int d_ff = 1024;
  int inner_layers = 4;
  int outer_layers = 4;
  double dropout = 0.3;

  // fusion / objectives
  FusionVariant variant = FusionVariant::CoRe;
  bool ms_loss = true;
  bool al_loss = true;
  double lambda_align = 0.1;
  bool al_normalize = true;
  // AL representation: unimodal outer states per window (default), or the
  // inner [CLS] summaries behind this switch.
  bool al_use_inner_cls = false;
  bool share_predictors = false;
  int unimodal_modality = kEEG;  // for FusionVariant::Unimodal

  void validate() const;
  std::string describe() const;

  /// Small geometry for gradient checks and fast tests.
  static ModelConfig reduced();
};

}  // namespace sleepfusion::nn
