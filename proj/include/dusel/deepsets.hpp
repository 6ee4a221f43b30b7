#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dusel/errors.hpp"
#include "dusel/nn.hpp"
#include "dusel/rng.hpp"

namespace dusel {

// Set-utility surrogate: f(S) = rho( sum_{x in S} phi(x) ). Sum pooling, not
// mean — tests pin this. Prediction sums each pooled column in sorted order,
// which makes it exactly permutation invariant, not just up to rounding.

struct DeepSetsConfig {
  int hidden = 256;
  int set_dim = 256;
  double lr = 1e-5;
  int batch = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  int patience = 10;  // early stop after this many epochs without val improvement
};

struct DeepSetsModel {
  MlpNet phi;  // e -> set_dim
  MlpNet rho;  // set_dim -> 1
  int input_dim = 0;
};

inline DeepSetsModel make_deepsets(int input_dim, const DeepSetsConfig& cfg, std::uint64_t seed) {
  DeepSetsModel m;
  m.input_dim = input_dim;
  m.phi = make_mlp(input_dim,
                   {{cfg.hidden, Act::Elu}, {cfg.hidden, Act::Elu}, {cfg.set_dim, Act::Identity}},
                   derive_seed(seed, 0xde1));
  m.rho = make_mlp(cfg.set_dim,
                   {{cfg.hidden, Act::Elu}, {cfg.hidden, Act::Elu}, {1, Act::Identity}},
                   derive_seed(seed, 0xde2));
  return m;
}

struct EmptySetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Order-free column sums: each column's addends are sorted before summing.
inline std::vector<double> pooled_sum_sorted(const Matrix& phi_out) {
  std::vector<double> pooled(static_cast<std::size_t>(phi_out.cols), 0.0);
  std::vector<double> col(static_cast<std::size_t>(phi_out.rows));
  for (int c = 0; c < phi_out.cols; ++c) {
    for (int r = 0; r < phi_out.rows; ++r) col[static_cast<std::size_t>(r)] = phi_out(r, c);
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (double v : col) s += v;
    pooled[static_cast<std::size_t>(c)] = s;
  }
  return pooled;
}

inline double rho_scalar(const DeepSetsModel& m, const std::vector<double>& pooled) {
  Matrix in(1, static_cast<int>(pooled.size()), pooled);
  return forward(m.rho, in)(0, 0);
}

inline double ds_predict(const DeepSetsModel& m, const Matrix& set_embeddings) {
  if (set_embeddings.rows < 1)
    throw EmptySetError("ds_predict: utility of the empty set is undefined");
  Matrix phi_out = forward(m.phi, set_embeddings);
  return rho_scalar(m, pooled_sum_sorted(phi_out));
}

// Running pooled sum for incremental marginal-gain queries. Candidate phi
// rows are precomputed once; each query is a single rho pass.
class PooledSetScorer {
 public:
  PooledSetScorer(const DeepSetsModel& model, const Matrix& candidate_embeddings)
      : model_(model),
        phi_rows_(forward(model.phi, candidate_embeddings)),
        sum_(static_cast<std::size_t>(phi_rows_.cols), 0.0) {}

  int candidate_count() const { return phi_rows_.rows; }
  int set_size() const { return count_; }
  double current_value() const {
    if (count_ == 0) throw EmptySetError("PooledSetScorer: empty set has no value");
    return rho_scalar(model_, sum_);
  }

  // value of S u {idx} without committing
  double value_with(int idx) const {
    std::vector<double> s = sum_;
    const double* p = phi_rows_.row(idx);
    for (std::size_t c = 0; c < s.size(); ++c) s[c] += p[c];
    return rho_scalar(model_, s);
  }

  void commit(int idx) {
    const double* p = phi_rows_.row(idx);
    for (std::size_t c = 0; c < sum_.size(); ++c) sum_[c] += p[c];
    ++count_;
  }

 private:
  const DeepSetsModel& model_;
  Matrix phi_rows_;
  std::vector<double> sum_;
  int count_ = 0;
};

// ---------------------------------------------------------------------------
// Training on embedded utility records
// ---------------------------------------------------------------------------

struct EmbeddedUtilityDataset {
  std::vector<Matrix> sets;      // one m_i x e matrix per record
  std::vector<double> utilities;
};

struct DeepSetsTrainOptions {
  bool train_phi = true;  // freezing phi is useful for diagnostics
};

struct DeepSetsTrainResult {
  double val_mse = 0.0;  // at the best epoch; model is restored to it
  int best_epoch = -1;
  std::vector<double> train_curve;
  std::vector<double> val_curve;
};

namespace ds_detail {

// Plain segment sums (training does not need the sorted order).
struct BatchForward {
  Matrix stacked;            // all rows of the batch records
  std::vector<int> offsets;  // record i occupies [offsets[i], offsets[i+1])
  ForwardCache phi_cache;
  Matrix phi_out;
  Matrix pooled;  // B x set_dim
  ForwardCache rho_cache;
  Matrix pred;  // B x 1
};

inline BatchForward batch_forward(const DeepSetsModel& m, const EmbeddedUtilityDataset& data,
                                  const std::vector<int>& record_ids, bool with_cache) {
  BatchForward bf;
  int total_rows = 0;
  bf.offsets.push_back(0);
  for (int id : record_ids) {
    total_rows += data.sets[static_cast<std::size_t>(id)].rows;
    bf.offsets.push_back(total_rows);
  }
  bf.stacked = Matrix(total_rows, m.input_dim);
  int row = 0;
  for (int id : record_ids) {
    const Matrix& s = data.sets[static_cast<std::size_t>(id)];
    std::copy(s.a.begin(), s.a.end(), bf.stacked.row(row));
    row += s.rows;
  }
  bf.phi_out = forward(m.phi, bf.stacked, with_cache ? &bf.phi_cache : nullptr);
  int b = static_cast<int>(record_ids.size());
  bf.pooled = Matrix(b, bf.phi_out.cols);
  for (int i = 0; i < b; ++i) {
    double* dst = bf.pooled.row(i);
    for (int r = bf.offsets[static_cast<std::size_t>(i)]; r < bf.offsets[static_cast<std::size_t>(i) + 1]; ++r) {
      const double* src = bf.phi_out.row(r);
      for (int c = 0; c < bf.phi_out.cols; ++c) dst[c] += src[c];
    }
  }
  bf.pred = forward(m.rho, bf.pooled, with_cache ? &bf.rho_cache : nullptr);
  return bf;
}

inline double eval_mse(const DeepSetsModel& m, const EmbeddedUtilityDataset& data,
                       const std::vector<int>& record_ids) {
  if (record_ids.empty()) return 0.0;
  double sum = 0.0;
  // chunk to bound the stacked matrix size
  const int chunk = 256;
  for (std::size_t at = 0; at < record_ids.size(); at += chunk) {
    std::vector<int> ids(record_ids.begin() + static_cast<std::ptrdiff_t>(at),
                         record_ids.begin() +
                             static_cast<std::ptrdiff_t>(std::min(at + chunk, record_ids.size())));
    BatchForward bf = batch_forward(m, data, ids, false);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      double d = bf.pred(static_cast<int>(i), 0) - data.utilities[static_cast<std::size_t>(ids[i])];
      sum += d * d;
    }
  }
  return sum / static_cast<double>(record_ids.size());
}

}  // namespace ds_detail

// Minimizes the mean squared utility error with Adam; early-stops on a
// validation plateau and restores the best-epoch weights.
inline DeepSetsTrainResult train_deepsets(DeepSetsModel& m,
                                          const EmbeddedUtilityDataset& train_data,
                                          const EmbeddedUtilityDataset& val_data, int epochs,
                                          const DeepSetsConfig& cfg, std::uint64_t seed,
                                          const DeepSetsTrainOptions& opts = {}) {
  if (train_data.sets.size() < 1) throw ParamError("train_deepsets: no training records");
  DeepSetsTrainResult result;

  std::vector<int> train_ids(train_data.sets.size());
  for (std::size_t i = 0; i < train_ids.size(); ++i) train_ids[i] = static_cast<int>(i);
  std::vector<int> val_ids(val_data.sets.size());
  for (std::size_t i = 0; i < val_ids.size(); ++i) val_ids[i] = static_cast<int>(i);

  AdamOpt opt_phi(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});
  AdamOpt opt_rho(AdamConfig{cfg.lr, cfg.beta1, cfg.beta2, 1e-8});

  DeepSetsModel best = m;
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(derive_seed(seed, 0xd57a, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(train_ids);

    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t at = 0; at < train_ids.size(); at += static_cast<std::size_t>(cfg.batch)) {
      std::vector<int> ids(
          train_ids.begin() + static_cast<std::ptrdiff_t>(at),
          train_ids.begin() + static_cast<std::ptrdiff_t>(
                                  std::min(at + static_cast<std::size_t>(cfg.batch), train_ids.size())));
      auto bf = ds_detail::batch_forward(m, train_data, ids, true);

      Matrix target(static_cast<int>(ids.size()), 1);
      for (std::size_t i = 0; i < ids.size(); ++i)
        target(static_cast<int>(i), 0) = train_data.utilities[static_cast<std::size_t>(ids[i])];
      auto lg = mse(bf.pred, target);
      if (!std::isfinite(lg.loss))
        throw TrainingDiverged("train_deepsets: non-finite loss; lower the learning rate");
      epoch_loss += lg.loss;
      ++batches;

      Grads g_rho = backward(m.rho, bf.rho_cache, lg.grad);
      // broadcast each record's pooled gradient to its phi rows
      Matrix phi_grad_out(bf.phi_out.rows, bf.phi_out.cols);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = g_rho.input.row(static_cast<int>(i));
        for (int r = bf.offsets[i]; r < bf.offsets[i + 1]; ++r)
          std::copy(src, src + bf.phi_out.cols, phi_grad_out.row(r));
      }
      if (cfg.weight_decay > 0.0) {
        for (std::size_t li = 0; li < m.rho.layers.size(); ++li)
          for (std::size_t j = 0; j < g_rho.w[li].a.size(); ++j)
            g_rho.w[li].a[j] += cfg.weight_decay * m.rho.layers[li].w.a[j];
      }
      opt_rho.step(m.rho, g_rho);

      if (opts.train_phi) {
        Grads g_phi = backward(m.phi, bf.phi_cache, phi_grad_out);
        if (cfg.weight_decay > 0.0) {
          for (std::size_t li = 0; li < m.phi.layers.size(); ++li)
            for (std::size_t j = 0; j < g_phi.w[li].a.size(); ++j)
              g_phi.w[li].a[j] += cfg.weight_decay * m.phi.layers[li].w.a[j];
        }
        opt_phi.step(m.phi, g_phi);
      }
    }
    result.train_curve.push_back(epoch_loss / std::max(batches, 1));

    double val_mse = val_ids.empty() ? result.train_curve.back()
                                     : ds_detail::eval_mse(m, val_data, val_ids);
    result.val_curve.push_back(val_mse);
    if (val_mse < best_val) {
      best_val = val_mse;
      best = m;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }

  if (result.best_epoch >= 0) m = best;
  result.val_mse = best_val == std::numeric_limits<double>::infinity() ? 0.0 : best_val;
  return result;
}

// Embeds every record's raw feature rows through a feature extractor.
inline EmbeddedUtilityDataset embed_subsets(const MlpNet& g_f, const Matrix& pool_features,
                                            const std::vector<std::vector<int>>& subsets) {
  EmbeddedUtilityDataset out;
  out.sets.reserve(subsets.size());
  for (const auto& idx : subsets) {
    Matrix rows = take_rows(pool_features, idx);
    out.sets.push_back(forward(g_f, rows));
  }
  return out;
}

}  // namespace dusel
