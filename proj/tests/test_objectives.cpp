#include <doctest.h>

#include <cmath>

#include "sleepfusion/ad/grad_check.hpp"
#include "sleepfusion/nn/losses.hpp"

using namespace sleepfusion;
using namespace sleepfusion::nn;
using ad::Rng;
using ad::Tensor;

namespace {

// independent CE oracle (log-sum-exp form)
double ce_oracle(const Tensor& logits, const std::vector<int>& labels) {
  const int n = logits.dim(0), c = logits.dim(1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double mx = -1e300;
    for (int j = 0; j < c; ++j) mx = std::max(mx, logits.values()[i * c + j]);
    double denom = 0.0;
    for (int j = 0; j < c; ++j) denom += std::exp(logits.values()[i * c + j] - mx);
    total += mx + std::log(denom) - logits.values()[i * c + labels[i]];
  }
  return total / n;
}

Tensor unit_rows(int n, int d, Rng& rng) {
  Tensor t = Tensor::randn({n, d}, rng);
  auto& v = t.mutable_values();
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) s += v[i * d + j] * v[i * d + j];
    s = std::sqrt(s);
    for (int j = 0; j < d; ++j) v[i * d + j] /= s;
  }
  return t;
}

}  // namespace

TEST_CASE("multi-supervised loss: uniform, additivity, CE-sum oracle") {
  const int L = 4;
  std::vector<int> labels = {0, 1, 2, 3};
  std::array<Tensor, 2> uniform = {Tensor::zeros({L, 5}), Tensor::zeros({L, 5})};
  CHECK(multi_supervised_loss(uniform, labels).scalar() ==
        doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-12));

  // one modality near-perfect, the other uniform
  std::vector<double> sharp(L * 5, 0.0);
  for (int i = 0; i < L; ++i) sharp[i * 5 + labels[i]] = 50.0;
  std::array<Tensor, 2> mixed = {Tensor::from({L, 5}, sharp), Tensor::zeros({L, 5})};
  CHECK(multi_supervised_loss(mixed, labels).scalar() ==
        doctest::Approx(std::log(5.0)).epsilon(1e-6));

  Rng rng(51);
  std::array<Tensor, 2> random = {Tensor::randn({L, 5}, rng), Tensor::randn({L, 5}, rng)};
  const double expect = ce_oracle(random[0], labels) + ce_oracle(random[1], labels);
  CHECK(std::abs(multi_supervised_loss(random, labels).scalar() - expect) < 1e-12);

  std::array<Tensor, 2> missing = {Tensor::zeros({L, 5}), Tensor()};
  CHECK_THROWS_AS(multi_supervised_loss(missing, labels), ad::DataError);
}

TEST_CASE("alignment loss: degenerate single window is exactly zero") {
  Rng rng(52);
  Tensor a = Tensor::randn({1, 16}, rng);
  Tensor b = Tensor::randn({1, 16}, rng);
  CHECK(alignment_loss(a, b, 0.1).scalar() == 0.0);
}

TEST_CASE("alignment loss: random unit representations sit near the chance level") {
  // Monte-Carlo over 1000 draws at L=21, d=128: mean ~ 0.1 * 2 * ln(21)
  Rng rng(53);
  double total = 0.0;
  const int draws = 1000;
  for (int i = 0; i < draws; ++i) {
    Tensor a = unit_rows(21, 128, rng);
    Tensor b = unit_rows(21, 128, rng);
    total += alignment_loss(a, b, 0.1).scalar();
  }
  const double mc = total / draws;
  const double expect = 0.1 * 2.0 * std::log(21.0);
  CHECK(mc == doctest::Approx(expect).epsilon(0.10));
}

TEST_CASE("alignment loss: symmetric under swapping modalities") {
  Rng rng(54);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor a = Tensor::randn({7, 12}, rng);
    Tensor b = Tensor::randn({7, 12}, rng);
    CHECK(std::abs(alignment_loss(a, b, 0.1).scalar() -
                   alignment_loss(b, a, 0.1).scalar()) < 1e-12);
  }
  Tensor a = Tensor::randn({4, 12}, rng);
  Tensor bad = Tensor::randn({5, 12}, rng);
  CHECK_THROWS_AS(alignment_loss(a, bad, 0.1), ad::ShapeError);
}

TEST_CASE("alignment loss: diagonal dominance drives the loss down monotonically") {
  // scaled distinct one-hot rows under the raw (un-normalized) product
  const int L = 6;
  auto one_hot_rows = [&](double s) {
    std::vector<double> vals(L * L, 0.0);
    for (int i = 0; i < L; ++i) vals[i * L + i] = s;
    return Tensor::from({L, L}, vals);
  };
  double prev = 1e9;
  for (double s : {1.0, 2.0, 3.0, 4.0, 6.0}) {
    const double loss = alignment_loss(one_hot_rows(s), one_hot_rows(s), 0.1, false).scalar();
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-6);

  // with normalization the attainable floor is the unit-logit CE, not zero
  const double floor_loss =
      alignment_loss(one_hot_rows(1.0), one_hot_rows(1.0), 0.1, true).scalar();
  const double expect_floor =
      0.1 * 2.0 * (std::log(std::exp(1.0) + (L - 1)) - 1.0);
  CHECK(floor_loss == doctest::Approx(expect_floor).epsilon(1e-9));
  CHECK(alignment_loss(one_hot_rows(9.0), one_hot_rows(9.0), 0.1, true).scalar() ==
        doctest::Approx(floor_loss).epsilon(1e-9));
}

namespace {

ItemOutputs make_item(const Tensor& mm, const Tensor& eeg, const Tensor& eog,
                      const Tensor& outer_a, const Tensor& outer_b,
                      const std::vector<int>* labels, bool has_eeg, bool has_eog) {
  ItemOutputs item;
  item.out.logits_mm = mm;
  item.out.logits_uni[kEEG] = eeg;
  item.out.logits_uni[kEOG] = eog;
  item.out.outer_uni[kEEG] = outer_a;
  item.out.outer_uni[kEOG] = outer_b;
  item.present = {has_eeg, has_eog};
  item.labels = labels;
  return item;
}

}  // namespace

TEST_CASE("total loss: flag routing and exact composition") {
  Rng rng(55);
  const int L = 3;
  std::vector<int> labels = {0, 2, 4};
  Tensor mm = Tensor::zeros({L, 5});
  Tensor eeg = Tensor::randn({L, 5}, rng);
  Tensor eog = Tensor::randn({L, 5}, rng);
  Tensor oa = Tensor::randn({L, 8}, rng);
  Tensor ob = Tensor::randn({L, 8}, rng);

  LossConfig mm_only;
  mm_only.ms_enabled = false;
  mm_only.al_enabled = false;
  std::vector<ItemOutputs> batch = {make_item(mm, eeg, eog, oa, ob, &labels, true, true)};
  LossBreakdown bd = total_loss(batch, mm_only);
  CHECK(bd.total_value == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(bd.ce_per_modality[0] == 0.0);
  CHECK(bd.al_value == 0.0);

  LossConfig all_on;  // defaults: ms+al enabled
  LossBreakdown full = total_loss(batch, all_on);
  // total equals the sum of the components exactly, in composition order
  const double recomposed = ((full.ce_multimodal + full.ce_per_modality[kEEG]) +
                             full.ce_per_modality[kEOG]) +
                            full.al_value;
  CHECK(full.total_value == recomposed);
  CHECK(full.ce_multimodal == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(full.ce_per_modality[kEEG] == doctest::Approx(ce_oracle(eeg, labels)).epsilon(1e-12));
  CHECK(full.al_value ==
        doctest::Approx(alignment_loss(oa, ob, 0.1).scalar()).epsilon(1e-12));
  // every term is non-negative
  CHECK(full.ce_multimodal >= 0.0);
  CHECK(full.ce_per_modality[kEEG] >= 0.0);
  CHECK(full.ce_per_modality[kEOG] >= 0.0);
  CHECK(full.al_value >= 0.0);
}

TEST_CASE("total loss: modality-incomplete items contribute only their unimodal CE") {
  Rng rng(56);
  const int L = 2;
  std::vector<int> labels = {1, 3};
  Tensor mm = Tensor::randn({L, 5}, rng);
  Tensor eeg = Tensor::randn({L, 5}, rng);
  Tensor eog = Tensor::randn({L, 5}, rng);
  Tensor oa = Tensor::randn({L, 8}, rng);
  Tensor ob = Tensor::randn({L, 8}, rng);

  // one complete item, one EEG-only item (no mm logits, no EOG, no AL)
  Tensor eeg2 = Tensor::randn({L, 5}, rng);
  ItemOutputs complete = make_item(mm, eeg, eog, oa, ob, &labels, true, true);
  ItemOutputs eeg_only;
  eeg_only.out.logits_uni[kEEG] = eeg2;
  eeg_only.present = {true, false};
  eeg_only.labels = &labels;

  LossConfig cfg;  // ms+al on
  std::vector<ItemOutputs> batch = {complete, eeg_only};
  LossBreakdown bd = total_loss(batch, cfg);

  // the incomplete item shows up only in the EEG bucket
  const double expect_eeg = (ce_oracle(eeg, labels) + ce_oracle(eeg2, labels)) / 2.0;
  CHECK(bd.ce_per_modality[kEEG] == doctest::Approx(expect_eeg).epsilon(1e-12));
  CHECK(bd.ce_multimodal == doctest::Approx(ce_oracle(mm, labels) / 2.0).epsilon(1e-12));
  CHECK(bd.al_value ==
        doctest::Approx(alignment_loss(oa, ob, 0.1).scalar() / 2.0).epsilon(1e-12));
}

TEST_CASE("total loss through the CoRe model passes the finite-difference check") {
  ModelConfig cfg = ModelConfig::reduced();
  cfg.variant = FusionVariant::CoRe;
  ad::ParameterStore store;
  Rng rng(57);
  FusionModel model(cfg, store, rng);
  RunCtx ctx;

  const int len = 2;
  std::array<ModalityInput, 2> in;
  for (int m = 0; m < 2; ++m) {
    in[m].present = true;
    in[m].windows = Tensor::randn({len, cfg.frames_per_window, cfg.feature_dim}, rng);
  }
  std::vector<int> labels = {1, 4};
  LossConfig loss_cfg = LossConfig::from_model(cfg);

  std::vector<Tensor> params;
  for (auto& [name, t] : store.entries()) params.push_back(t);
  auto f = [&]() {
    std::vector<ItemOutputs> batch(1);
    batch[0].out = model.forward(in, ctx);
    batch[0].present = {true, true};
    batch[0].labels = &labels;
    return total_loss(batch, loss_cfg).total;
  };
  Rng sampler(58);
  CHECK(ad::finite_diff_check(f, params, sampler, 1) < 1e-4);
}

TEST_CASE("disabling MS and AL reduces the objective to the multimodal CE") {
  ModelConfig cfg = ModelConfig::reduced();
  cfg.variant = FusionVariant::CoRe;
  ad::ParameterStore store;
  Rng rng(59);
  FusionModel model(cfg, store, rng);
  RunCtx ctx;
  std::array<ModalityInput, 2> in;
  for (int m = 0; m < 2; ++m) {
    in[m].present = true;
    in[m].windows = Tensor::randn({2, cfg.frames_per_window, cfg.feature_dim}, rng);
  }
  std::vector<int> labels = {0, 3};
  std::vector<ItemOutputs> batch(1);
  batch[0].out = model.forward(in, ctx);
  batch[0].present = {true, true};
  batch[0].labels = &labels;

  LossConfig plain;
  plain.ms_enabled = false;
  plain.al_enabled = false;
  LossBreakdown bd = total_loss(batch, plain);
  CHECK(bd.total_value ==
        ad::cross_entropy(batch[0].out.logits_mm, labels).scalar());
}
