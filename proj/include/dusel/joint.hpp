#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dusel/adapt.hpp"
#include "dusel/deepsets.hpp"
#include "dusel/usample.hpp"

namespace dusel {

// Joint training of the feature extractor and the set-utility model. Each
// epoch alternates k domain-adaptation steps with one utility phase:
//   (a) k DA updates on (source, target pool);
//   (b) embed every utility subset with the frozen g_f;
//   (c) train the DeepSets model on the embedded records (4:1 split);
//   (d) freeze the DeepSets model and push its loss back into g_f.
// The oracle mode drops (a) and runs the same utility machinery on labeled
// target data, which is the upper-bound strategy reports call "optimal".

enum class JointMode { D2ulo, OptimalTargetOracle };

struct JointConfig {
  JointMode mode = JointMode::D2ulo;
  int k = 5;
  int epochs = 30;
  int deepsets_inner_epochs = 20;
  double gf_utility_lr = 1e-6;
  double gf_utility_beta2 = 0.99;
  int gf_utility_passes = 1;
  int record_batch = 32;
  bool reset_deepsets_each_epoch = false;
  AdaptConfig adapt;
  DeepSetsConfig deepsets;
  std::uint64_t seed = 0;
};

struct JointEpochLog {
  int da_steps = 0;
  double cls_loss = 0.0;      // mean over the k DA steps
  double gan_loss = 0.0;
  double disc_acc = 0.0;
  double ds_train_mse = 0.0;  // final inner-epoch training MSE
  double ds_val_mse = 0.0;    // best-epoch validation MSE of phase (c)
  double gf_utility_mse = 0.0;
  std::vector<double> ds_inner_curve;
};

struct JointLog {
  std::vector<JointEpochLog> epochs;
  int total_da_steps = 0;
  bool diverged = false;
  std::string divergence_message;
};

struct JointResult {
  AdaptModel adapt;
  DeepSetsModel deepsets;
  JointLog log;
};

namespace joint_detail {

struct RecordSplit {
  std::vector<std::vector<int>> train_subsets, val_subsets;
  std::vector<double> train_u, val_u;
};

// Fixed 4:1 record split, drawn once per run.
inline RecordSplit split_records(const UtilityDataset& sds, std::uint64_t seed) {
  int n = static_cast<int>(sds.records.size());
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5913));
  rng.shuffle(perm);
  int n_train = n < 2 ? n : static_cast<int>(std::llround(n * 4.0 / 5.0));
  n_train = std::clamp(n_train, 1, std::max(1, n - 1));
  if (n < 2) n_train = n;

  RecordSplit out;
  for (int i = 0; i < n; ++i) {
    const auto& rec = sds.records[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    if (i < n_train) {
      out.train_subsets.push_back(rec.subset.indices);
      out.train_u.push_back(rec.utility);
    } else {
      out.val_subsets.push_back(rec.subset.indices);
      out.val_u.push_back(rec.utility);
    }
  }
  return out;
}

inline EmbeddedUtilityDataset embed(const MlpNet& g_f, const Matrix& pool,
                                    const std::vector<std::vector<int>>& subsets,
                                    const std::vector<double>& utilities) {
  EmbeddedUtilityDataset out = embed_subsets(g_f, pool, subsets);
  out.utilities = utilities;
  return out;
}

}  // namespace joint_detail

// Trains on (pair, utility records over `utility_pool`). The subsets in
// `sds` must index into utility_pool's rows.
inline JointResult train_joint(const DomainPair& pair, const UtilityDataset& sds,
                               const Dataset& utility_pool, const JointConfig& cfg) {
  if (cfg.k < 1) throw ParamError("train_joint: k must be >= 1");
  if (sds.pool_hash != utility_pool.content_hash())
    throw ParamError("train_joint: utility records were sampled from a different pool");
  for (const auto& rec : sds.records)
    if (rec.subset.universe_size != utility_pool.n())
      throw ParamError("train_joint: record universe does not match the utility pool");

  const bool do_da = cfg.mode == JointMode::D2ulo;
  const Matrix& pool_feats = utility_pool.features();

  JointResult result{
      make_adapt_model(pair.source.dim(), pair.source.num_classes(), cfg.adapt,
                       derive_seed(cfg.seed, 0x01)),
      make_deepsets(cfg.adapt.embed_dim, cfg.deepsets, derive_seed(cfg.seed, 0x02)),
      {}};

  DaTrainer da_trainer(cfg.adapt.optimizer);
  AdamOpt gf_utility_opt(AdamConfig{cfg.gf_utility_lr, 0.9, cfg.gf_utility_beta2, 1e-8});
  auto records = joint_detail::split_records(sds, derive_seed(cfg.seed, 0x03));

  AdaptModel last_good_adapt = result.adapt;
  DeepSetsModel last_good_ds = result.deepsets;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    JointEpochLog log;
    try {
      // (a) k domain-adaptation steps
      if (do_da) {
        auto reports = train_da(result.adapt, da_trainer, pair.source,
                                pair.target_pool.features(), cfg.k, cfg.adapt.batch,
                                derive_seed(cfg.seed, 0x04, static_cast<std::uint64_t>(epoch)));
        log.da_steps = static_cast<int>(reports.size());
        for (const auto& r : reports) {
          log.cls_loss += r.cls_loss / reports.size();
          log.gan_loss += r.gan_loss / reports.size();
          log.disc_acc += r.disc_acc / reports.size();
        }
        result.log.total_da_steps += log.da_steps;
      }

      // (b) embed the utility subsets with the frozen extractor
      auto train_data = joint_detail::embed(result.adapt.g_f, pool_feats, records.train_subsets,
                                            records.train_u);
      auto val_data =
          joint_detail::embed(result.adapt.g_f, pool_feats, records.val_subsets, records.val_u);

      // (c) train the DeepSets model on (E_s, U)
      if (cfg.reset_deepsets_each_epoch)
        result.deepsets =
            make_deepsets(cfg.adapt.embed_dim, cfg.deepsets, derive_seed(cfg.seed, 0x02));
      auto ds_result = train_deepsets(result.deepsets, train_data, val_data,
                                      cfg.deepsets_inner_epochs, cfg.deepsets,
                                      derive_seed(cfg.seed, 0x05, static_cast<std::uint64_t>(epoch)));
      log.ds_train_mse = ds_result.train_curve.empty() ? 0.0 : ds_result.train_curve.back();
      log.ds_val_mse = ds_result.val_mse;
      log.ds_inner_curve = ds_result.train_curve;

      // (d) freeze the DeepSets model, descend its loss through g_f
      double util_mse = 0.0;
      int util_batches = 0;
      for (int pass = 0; pass < cfg.gf_utility_passes; ++pass) {
        std::vector<int> order(records.train_subsets.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng rng(derive_seed(cfg.seed, 0x06,
                            static_cast<std::uint64_t>(epoch) * 1000 + static_cast<std::uint64_t>(pass)));
        rng.shuffle(order);

        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.record_batch)) {
          std::vector<int> batch(
              order.begin() + static_cast<std::ptrdiff_t>(at),
              order.begin() + static_cast<std::ptrdiff_t>(std::min(
                                  at + static_cast<std::size_t>(cfg.record_batch), order.size())));

          // stack the raw rows of this batch of subsets
          int total_rows = 0;
          std::vector<int> offsets{0};
          for (int id : batch) {
            total_rows += static_cast<int>(records.train_subsets[static_cast<std::size_t>(id)].size());
            offsets.push_back(total_rows);
          }
          Matrix stacked(total_rows, pool_feats.cols);
          int row = 0;
          for (int id : batch)
            for (int src : records.train_subsets[static_cast<std::size_t>(id)]) {
              std::copy(pool_feats.row(src), pool_feats.row(src) + pool_feats.cols,
                        stacked.row(row));
              ++row;
            }

          ForwardCache gf_cache, phi_cache, rho_cache;
          Matrix emb = forward(result.adapt.g_f, stacked, &gf_cache);
          Matrix phi_out = forward(result.deepsets.phi, emb, &phi_cache);
          Matrix pooled(static_cast<int>(batch.size()), phi_out.cols);
          for (std::size_t i = 0; i < batch.size(); ++i) {
            double* dst = pooled.row(static_cast<int>(i));
            for (int r = offsets[i]; r < offsets[i + 1]; ++r) {
              const double* srcp = phi_out.row(r);
              for (int c = 0; c < phi_out.cols; ++c) dst[c] += srcp[c];
            }
          }
          Matrix pred = forward(result.deepsets.rho, pooled, &rho_cache);
          Matrix target(static_cast<int>(batch.size()), 1);
          for (std::size_t i = 0; i < batch.size(); ++i)
            target(static_cast<int>(i), 0) = records.train_u[static_cast<std::size_t>(batch[i])];
          auto lg = mse(pred, target);
          if (!std::isfinite(lg.loss))
            throw TrainingDiverged("train_joint: non-finite utility loss through g_f");
          util_mse += lg.loss;
          ++util_batches;

          Grads g_rho = backward(result.deepsets.rho, rho_cache, lg.grad);
          Matrix phi_grad_out(phi_out.rows, phi_out.cols);
          for (std::size_t i = 0; i < batch.size(); ++i) {
            const double* srcp = g_rho.input.row(static_cast<int>(i));
            for (int r = offsets[i]; r < offsets[i + 1]; ++r)
              std::copy(srcp, srcp + phi_out.cols, phi_grad_out.row(r));
          }
          Grads g_phi = backward(result.deepsets.phi, phi_cache, phi_grad_out);
          Grads g_f = backward(result.adapt.g_f, gf_cache, g_phi.input);
          gf_utility_opt.step(result.adapt.g_f, g_f);  // phi/rho grads discarded: frozen
        }
      }
      log.gf_utility_mse = util_batches ? util_mse / util_batches : 0.0;
    } catch (const TrainingDiverged& e) {
      result.adapt = last_good_adapt;
      result.deepsets = last_good_ds;
      result.log.diverged = true;
      result.log.divergence_message = e.what();
      break;
    }
    result.log.epochs.push_back(std::move(log));
    last_good_adapt = result.adapt;
    last_good_ds = result.deepsets;
  }
  return result;
}

// Upper-bound mode: identical machinery with source := labeled target and no
// DA steps. Callers lift the quarantine explicitly by passing labeled data.
inline JointResult train_optimal_oracle(const Dataset& target_labeled, const UtilityDataset& sds,
                                        JointConfig cfg) {
  if (!target_labeled.has_labels() || target_labeled.is_quarantined())
    throw QuarantineError(
        "train_optimal_oracle: needs explicitly oracle-labeled target data");
  cfg.mode = JointMode::OptimalTargetOracle;
  DomainPair degenerate;
  degenerate.source = target_labeled;
  degenerate.target_pool = target_labeled.with_quarantined_labels();
  degenerate.target_test = target_labeled;
  degenerate.shift_descriptor = "optimal-target-oracle";
  return train_joint(degenerate, sds, target_labeled, cfg);
}

}  // namespace dusel
