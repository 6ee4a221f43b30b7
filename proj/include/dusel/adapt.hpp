#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dusel/dataset.hpp"
#include "dusel/errors.hpp"
#include "dusel/nn.hpp"

namespace dusel {

// Adversarial feature-alignment triple: feature extractor g_f, class
// predictor g_y, domain discriminator g_d. The discriminator descends the
// GAN loss while g_f ascends it through gradient reversal scaled by lambda.

struct AdaptConfig {
  int embed_dim = 64;
  std::vector<int> gf_hidden{128, 128};
  std::vector<int> gy_hidden{64};
  std::vector<int> gd_hidden{64, 64};
  double lambda = 1.0;
  AdamConfig optimizer{1e-4, 0.9, 0.999, 1e-8};
  int batch = 128;
};

struct AdaptModel {
  MlpNet g_f;  // d -> e
  MlpNet g_y;  // e -> C softmax
  MlpNet g_d;  // e -> 1 sigmoid
  double lambda = 1.0;
};

inline AdaptModel make_adapt_model(int input_dim, int num_classes, const AdaptConfig& cfg,
                                   std::uint64_t seed) {
  auto specs = [](const std::vector<int>& hidden, int out, Act final_act) {
    std::vector<LayerSpec> s;
    for (int h : hidden) s.push_back({h, Act::Elu});
    s.push_back({out, final_act});
    return s;
  };
  AdaptModel m;
  m.g_f = make_mlp(input_dim, specs(cfg.gf_hidden, cfg.embed_dim, Act::Identity),
                   derive_seed(seed, 0xf0));
  m.g_y = make_mlp(cfg.embed_dim, specs(cfg.gy_hidden, num_classes, Act::Softmax),
                   derive_seed(seed, 0xf1));
  m.g_d = make_mlp(cfg.embed_dim, specs(cfg.gd_hidden, 1, Act::Sigmoid), derive_seed(seed, 0xf2));
  m.lambda = cfg.lambda;
  return m;
}

inline Matrix embed(const AdaptModel& m, const Matrix& x) { return forward(m.g_f, x); }

// -[ mean_s log D(F(x)) + mean_t log(1 - D(F(x))) ], logs clamped at 1e-12.
inline double gan_loss(const AdaptModel& m, const Matrix& batch_s, const Matrix& batch_t) {
  if (batch_s.rows < 1 || batch_t.rows < 1) throw ParamError("gan_loss: empty batch");
  Matrix ds = forward(m.g_d, embed(m, batch_s));
  Matrix dt = forward(m.g_d, embed(m, batch_t));
  double s_term = 0.0, t_term = 0.0;
  for (int r = 0; r < ds.rows; ++r) s_term += std::log(std::max(ds(r, 0), kLogClamp));
  for (int r = 0; r < dt.rows; ++r) t_term += std::log(std::max(1.0 - dt(r, 0), kLogClamp));
  return -(s_term / ds.rows + t_term / dt.rows);
}

// mean cross-entropy of g_y(g_f(x)) against the labels
inline double cls_loss(const AdaptModel& m, const Matrix& batch_s, const std::vector<int>& labels) {
  Matrix p = forward(m.g_y, embed(m, batch_s));
  return cross_entropy(p, labels).loss;
}

// domain accuracy of the discriminator at threshold 0.5
inline double discriminator_accuracy(const AdaptModel& m, const Matrix& batch_s,
                                     const Matrix& batch_t) {
  Matrix ds = forward(m.g_d, embed(m, batch_s));
  Matrix dt = forward(m.g_d, embed(m, batch_t));
  int correct = 0;
  for (int r = 0; r < ds.rows; ++r)
    if (ds(r, 0) >= 0.5) ++correct;
  for (int r = 0; r < dt.rows; ++r)
    if (dt(r, 0) < 0.5) ++correct;
  return static_cast<double>(correct) / (ds.rows + dt.rows);
}

inline double classifier_accuracy(const AdaptModel& m, const Dataset& ds) {
  Matrix p = forward(m.g_y, embed(m, ds.features()));
  const auto& truth = ds.labels();
  int correct = 0;
  for (int r = 0; r < p.rows; ++r) {
    int best = 0;
    for (int c = 1; c < p.cols; ++c)
      if (p(r, c) > p(r, best)) best = c;
    if (best == truth[static_cast<std::size_t>(r)]) ++correct;
  }
  return static_cast<double>(correct) / p.rows;
}

struct DaStepReport {
  double cls_loss = 0.0;
  double gan_loss = 0.0;
  double disc_acc = 0.0;
};

// Owns the three Adam states; one trainer per model.
class DaTrainer {
 public:
  explicit DaTrainer(const AdamConfig& opt) : opt_f_(opt), opt_y_(opt), opt_d_(opt) {}

  // One joint update:
  //   g_y, g_f descend the classification loss;
  //   g_d descends the GAN loss;
  //   g_f ascends the discriminator objective via reversal scaled by lambda.
  // The returned losses are measured before the update.
  DaStepReport da_step(AdaptModel& m, const Matrix& batch_s, const std::vector<int>& labels,
                       const Matrix& batch_t) {
    DaStepReport report;

    // supervised branch
    ForwardCache cf_s, cy;
    Matrix es = forward(m.g_f, batch_s, &cf_s);
    Matrix probs = forward(m.g_y, es, &cy);
    auto ce = cross_entropy(probs, labels);
    report.cls_loss = ce.loss;
    Grads gy = backward(m.g_y, cy, ce.grad);
    Grads gf = backward(m.g_f, cf_s, gy.input);

    // adversarial branch: discriminator sees source (label 1) and target (0)
    ForwardCache cf_s2 = cf_s, cf_t, cd_s, cd_t;
    Matrix et = forward(m.g_f, batch_t, &cf_t);
    Matrix ds = forward(m.g_d, es, &cd_s);
    Matrix dt = forward(m.g_d, et, &cd_t);

    double s_term = 0.0, t_term = 0.0;
    Matrix dgrad_s(ds.rows, 1), dgrad_t(dt.rows, 1);
    for (int r = 0; r < ds.rows; ++r) {
      double p = std::max(ds(r, 0), kLogClamp);
      s_term += std::log(p);
      dgrad_s(r, 0) = -1.0 / (ds.rows * p);
    }
    for (int r = 0; r < dt.rows; ++r) {
      double q = std::max(1.0 - dt(r, 0), kLogClamp);
      t_term += std::log(q);
      dgrad_t(r, 0) = 1.0 / (dt.rows * q);
    }
    report.gan_loss = -(s_term / ds.rows + t_term / dt.rows);
    {
      int correct = 0;
      for (int r = 0; r < ds.rows; ++r)
        if (ds(r, 0) >= 0.5) ++correct;
      for (int r = 0; r < dt.rows; ++r)
        if (dt(r, 0) < 0.5) ++correct;
      report.disc_acc = static_cast<double>(correct) / (ds.rows + dt.rows);
    }

    if (!std::isfinite(report.cls_loss) || !std::isfinite(report.gan_loss))
      throw TrainingDiverged(
          "da_step: non-finite loss (cls=" + std::to_string(report.cls_loss) +
          ", gan=" + std::to_string(report.gan_loss) +
          "); try lowering the learning rates or lambda");

    // discriminator parameter grads are the true ones; the embedding grads
    // come out scaled by -lambda, ready for the reversed g_f update
    Grads gd_s = backward(m.g_d, cd_s, dgrad_s, -m.lambda);
    Grads gd_t = backward(m.g_d, cd_t, dgrad_t, -m.lambda);

    if (m.lambda != 0.0) {
      Grads gf_adv_s = backward(m.g_f, cf_s2, gd_s.input);
      Grads gf_adv_t = backward(m.g_f, cf_t, gd_t.input);
      gf.accumulate(gf_adv_s);
      gf.accumulate(gf_adv_t);
    }
    Grads gd = std::move(gd_s);
    gd.accumulate(gd_t);

    opt_y_.step(m.g_y, gy);
    opt_d_.step(m.g_d, gd);
    opt_f_.step(m.g_f, gf);
    return report;
  }

 private:
  AdamOpt opt_f_, opt_y_, opt_d_;
};

// Runs `steps` updates with per-step deterministic batches. Target features
// come in as a bare matrix: this path must never see pool labels.
inline std::vector<DaStepReport> train_da(AdaptModel& m, DaTrainer& trainer,
                                          const Dataset& source, const Matrix& target_features,
                                          int steps, int batch, std::uint64_t seed) {
  std::vector<DaStepReport> reports;
  reports.reserve(static_cast<std::size_t>(steps));
  for (int step = 0; step < steps; ++step) {
    Rng rng(derive_seed(seed, 0xda57e9, static_cast<std::uint64_t>(step)));
    auto s_idx = rng.sample_without_replacement(source.n(), std::min(batch, source.n()));
    auto t_idx = rng.sample_without_replacement(target_features.rows,
                                                std::min(batch, target_features.rows));
    Matrix bs = take_rows(source.features(), s_idx);
    std::vector<int> ys;
    ys.reserve(s_idx.size());
    for (int i : s_idx) ys.push_back(source.labels()[static_cast<std::size_t>(i)]);
    Matrix bt = take_rows(target_features, t_idx);
    reports.push_back(trainer.da_step(m, bs, ys, bt));
  }
  return reports;
}

}  // namespace dusel
