#include "sleepfusion/nn/losses.hpp"

#include <numeric>

namespace sleepfusion::nn {

using namespace ad;

Tensor multi_supervised_loss(const std::array<Tensor, kNumModalities>& logits_uni,
                             const std::vector<int>& labels) {
  Tensor total;
  for (int m = 0; m < kNumModalities; ++m) {
    if (!logits_uni[m].defined()) {
      throw DataError(std::string("multi_supervised_loss: missing logits for ") +
                      kModalityNames[m]);
    }
    Tensor ce = cross_entropy(logits_uni[m], labels);
    total = total.defined() ? add(total, ce) : ce;
  }
  return total;
}

Tensor alignment_loss(const Tensor& outer_a, const Tensor& outer_b, double lambda,
                      bool normalize) {
  if (outer_a.ndim() != 2 || outer_b.ndim() != 2 ||
      outer_a.shape() != outer_b.shape()) {
    throw ShapeError("alignment_loss: representations must share [L,d], got " +
                     shape_str(outer_a.shape()) + " vs " + shape_str(outer_b.shape()));
  }
  const int len = outer_a.dim(0);
  if (len == 1) return Tensor::zeros({1});  // softmax over one logit: CE is 0 exactly

  Tensor ua = normalize ? l2_normalize_rows(outer_a) : outer_a;
  Tensor ub = normalize ? l2_normalize_rows(outer_b) : outer_b;
  Tensor logits = matmul_nt(ua, ub);  // [L,L] pairwise similarities
  std::vector<int> diag(len);
  std::iota(diag.begin(), diag.end(), 0);  // identity-matrix target
  Tensor both_directions =
      add(cross_entropy(logits, diag), cross_entropy(transpose(logits), diag));
  return scale(both_directions, lambda);
}

LossBreakdown total_loss(std::span<const ItemOutputs> batch, const LossConfig& cfg) {
  if (batch.empty()) throw DataError("total_loss: empty batch");
  Tensor mm_sum;
  std::array<Tensor, kNumModalities> mod_sum;
  Tensor al_sum;
  auto accumulate = [](Tensor& slot, const Tensor& term) {
    slot = slot.defined() ? add(slot, term) : term;
  };

  for (const ItemOutputs& item : batch) {
    if (item.labels == nullptr) throw DataError("total_loss: item without labels");
    const auto& labels = *item.labels;
    const bool complete = item.present[kEEG] && item.present[kEOG];
    if (complete) {
      if (!item.out.logits_mm.defined()) {
        throw DataError("total_loss: complete item without multimodal logits");
      }
      accumulate(mm_sum, cross_entropy(item.out.logits_mm, labels));
      if (cfg.ms_enabled) {
        for (int m = 0; m < kNumModalities; ++m) {
          accumulate(mod_sum[m], cross_entropy(item.out.logits_uni[m], labels));
        }
      }
      if (cfg.al_enabled) {
        const auto& reps = cfg.al_use_inner_cls ? item.out.inner_cls : item.out.outer_uni;
        if (!reps[kEEG].defined() || !reps[kEOG].defined()) {
          throw DataError("total_loss: alignment enabled but representations missing");
        }
        accumulate(al_sum,
                   alignment_loss(reps[kEEG], reps[kEOG], cfg.lambda_align, cfg.al_normalize));
      }
    } else {
      // modality-incomplete item: only the present modality's supervised loss
      const int m = item.present[kEEG] ? kEEG : kEOG;
      if (!item.out.logits_uni[m].defined()) {
        throw DataError("total_loss: incomplete item without unimodal logits");
      }
      accumulate(mod_sum[m], cross_entropy(item.out.logits_uni[m], labels));
    }
  }

  const double inv = 1.0 / static_cast<double>(batch.size());
  LossBreakdown bd;
  Tensor total;
  auto compose = [&](Tensor& slot, double* component) {
    if (!slot.defined()) return;
    Tensor scaled = scale(slot, inv);
    *component = scaled.scalar();
    total = total.defined() ? add(total, scaled) : scaled;
  };
  compose(mm_sum, &bd.ce_multimodal);
  compose(mod_sum[kEEG], &bd.ce_per_modality[kEEG]);
  compose(mod_sum[kEOG], &bd.ce_per_modality[kEOG]);
  compose(al_sum, &bd.al_value);
  bd.total = total;
  bd.total_value = total.scalar();
  return bd;
}

}  // namespace sleepfusion::nn
