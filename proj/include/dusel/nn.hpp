#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dusel/matrix.hpp"
#include "dusel/rng.hpp"

namespace dusel {

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Act : std::uint32_t { Identity = 0, Relu = 1, Elu = 2, Sigmoid = 3, Softmax = 4 };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::Identity: return "identity";
    case Act::Relu: return "relu";
    case Act::Elu: return "elu";
    case Act::Sigmoid: return "sigmoid";
    case Act::Softmax: return "softmax";
  }
  return "?";
}

inline Act act_from_name(const std::string& s) {
  if (s == "identity") return Act::Identity;
  if (s == "relu") return Act::Relu;
  if (s == "elu") return Act::Elu;
  if (s == "sigmoid") return Act::Sigmoid;
  if (s == "softmax") return Act::Softmax;
  throw std::invalid_argument("unknown activation: " + s);
}

struct Layer {
  Matrix w;               // in x out
  std::vector<double> b;  // out
  Act act = Act::Identity;
};

struct LayerSpec {
  int width;
  Act act;
};

struct MlpNet {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().w.rows; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().w.cols; }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.w.size() + l.b.size();
    return n;
  }
};

// Glorot-uniform init, biases zero. Softmax/sigmoid are only allowed as the
// final activation.
inline MlpNet make_mlp(int input_dim, const std::vector<LayerSpec>& specs, Rng& rng) {
  if (input_dim < 1 || specs.empty()) throw std::invalid_argument("make_mlp: empty net");
  MlpNet net;
  int in = input_dim;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.width < 1) throw std::invalid_argument("make_mlp: layer width < 1");
    if ((s.act == Act::Softmax || s.act == Act::Sigmoid) && i + 1 != specs.size())
      throw std::invalid_argument("make_mlp: softmax/sigmoid only on final layer");
    Layer l;
    l.w = Matrix(in, s.width);
    double bound = std::sqrt(6.0 / (in + s.width));
    for (double& v : l.w.a) v = rng.uniform(-bound, bound);
    l.b.assign(static_cast<std::size_t>(s.width), 0.0);
    l.act = s.act;
    net.layers.push_back(std::move(l));
    in = s.width;
  }
  return net;
}

inline MlpNet make_mlp(int input_dim, const std::vector<LayerSpec>& specs, std::uint64_t seed) {
  Rng rng(seed);
  return make_mlp(input_dim, specs, rng);
}

inline void apply_activation(Act act, Matrix& z) {
  switch (act) {
    case Act::Identity:
      return;
    case Act::Relu:
      for (double& v : z.a) v = v > 0.0 ? v : 0.0;
      return;
    case Act::Elu:
      for (double& v : z.a) v = v > 0.0 ? v : std::expm1(v);
      return;
    case Act::Sigmoid:
      for (double& v : z.a) v = 1.0 / (1.0 + std::exp(-v));
      return;
    case Act::Softmax:
      for (int r = 0; r < z.rows; ++r) {
        double* p = z.row(r);
        double mx = p[0];
        for (int c = 1; c < z.cols; ++c) mx = std::max(mx, p[c]);
        double sum = 0.0;
        for (int c = 0; c < z.cols; ++c) {
          p[c] = std::exp(p[c] - mx);
          sum += p[c];
        }
        for (int c = 0; c < z.cols; ++c) p[c] /= sum;
      }
      return;
  }
}

// Per-layer input and post-activation output, kept for backward.
struct ForwardCache {
  Matrix input;                    // the original x
  std::vector<Matrix> activations; // activations[i] = output of layer i
  const MlpNet* net = nullptr;
};

inline Matrix forward(const MlpNet& net, const Matrix& x, ForwardCache* cache = nullptr) {
  if (net.layers.empty()) throw StateError("forward: empty net");
  if (x.cols != net.input_dim())
    throw ShapeError("forward: input width " + std::to_string(x.cols) + " != net input dim " +
                     std::to_string(net.input_dim()));
  if (cache) {
    cache->input = x;
    cache->activations.clear();
    cache->activations.reserve(net.layers.size());
    cache->net = &net;
  }
  Matrix cur = x;
  for (const auto& l : net.layers) {
    Matrix z = matmul(cur, l.w);
    add_row_inplace(z, l.b);
    apply_activation(l.act, z);
    if (!z.all_finite()) throw StateError("forward: non-finite activation");
    if (cache) cache->activations.push_back(z);
    cur = std::move(z);
  }
  return cur;
}

struct Grads {
  std::vector<Matrix> w;               // per layer, shaped like weights
  std::vector<std::vector<double>> b;  // per layer, shaped like biases
  Matrix input;                        // dL/dx, scaled by reversal_scale

  static Grads zeros_like(const MlpNet& net) {
    Grads g;
    g.w.reserve(net.layers.size());
    g.b.reserve(net.layers.size());
    for (const auto& l : net.layers) {
      g.w.emplace_back(l.w.rows, l.w.cols);
      g.b.emplace_back(l.b.size(), 0.0);
    }
    return g;
  }

  void accumulate(const Grads& other) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (std::size_t j = 0; j < w[i].a.size(); ++j) w[i].a[j] += other.w[i].a[j];
      for (std::size_t j = 0; j < b[i].size(); ++j) b[i][j] += other.b[i][j];
    }
  }

  void scale(double s) {
    for (auto& m : w)
      for (double& v : m.a) v *= s;
    for (auto& v : b)
      for (double& x : v) x *= s;
  }
};

// dL/dz from dL/da given the layer's post-activation a.
inline Matrix activation_backward(Act act, const Matrix& a, const Matrix& grad_a) {
  Matrix dz = grad_a;
  switch (act) {
    case Act::Identity:
      break;
    case Act::Relu:
      for (std::size_t i = 0; i < dz.a.size(); ++i)
        if (a.a[i] <= 0.0) dz.a[i] = 0.0;
      break;
    case Act::Elu:
      // d/dz elu = 1 for z>0, e^z = a+1 otherwise
      for (std::size_t i = 0; i < dz.a.size(); ++i)
        if (a.a[i] <= 0.0) dz.a[i] *= a.a[i] + 1.0;
      break;
    case Act::Sigmoid:
      for (std::size_t i = 0; i < dz.a.size(); ++i) dz.a[i] *= a.a[i] * (1.0 - a.a[i]);
      break;
    case Act::Softmax:
      // row-wise: dz_i = a_i * (g_i - sum_j g_j a_j)
      for (int r = 0; r < dz.rows; ++r) {
        const double* ar = a.row(r);
        double* gr = dz.row(r);
        double dot = 0.0;
        for (int c = 0; c < dz.cols; ++c) dot += gr[c] * ar[c];
        for (int c = 0; c < dz.cols; ++c) gr[c] = ar[c] * (gr[c] - dot);
      }
      break;
  }
  return dz;
}

// Backprop through the whole net. Parameter gradients are the true ones;
// grad wrt the input is multiplied by reversal_scale on the way out, which is
// the hook adversarial feature-extractor updates use (scale = -lambda).
inline Grads backward(const MlpNet& net, const ForwardCache& cache, const Matrix& grad_out,
                      double reversal_scale = 1.0) {
  if (cache.net != &net || cache.activations.size() != net.layers.size())
    throw StateError("backward: cache does not match net");
  check_same_shape(cache.activations.back(), grad_out, "backward");

  Grads g;
  g.w.resize(net.layers.size());
  g.b.resize(net.layers.size());

  Matrix grad = grad_out;
  for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
    const Layer& l = net.layers[static_cast<std::size_t>(li)];
    const Matrix& a = cache.activations[static_cast<std::size_t>(li)];
    const Matrix& in = li == 0 ? cache.input : cache.activations[static_cast<std::size_t>(li) - 1];

    Matrix dz = activation_backward(l.act, a, grad);
    g.w[static_cast<std::size_t>(li)] = matmul_ta(in, dz);
    g.b[static_cast<std::size_t>(li)] = column_sums(dz);
    grad = matmul_tb(dz, l.w);
  }
  if (reversal_scale != 1.0)
    for (double& v : grad.a) v *= reversal_scale;
  g.input = std::move(grad);
  return g;
}

// ---------------------------------------------------------------------------
// Losses. Each returns the scalar and the gradient wrt the network output
// (already carrying the 1/n of the mean), so backward() can take it directly.
// ---------------------------------------------------------------------------

inline constexpr double kLogClamp = 1e-12;

struct LossGrad {
  double loss;
  Matrix grad;
};

// Mean cross-entropy against integer labels; probs are post-softmax rows.
inline LossGrad cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<int>(labels.size()) != probs.rows)
    throw ShapeError("cross_entropy: label count != rows");
  LossGrad out{0.0, Matrix(probs.rows, probs.cols)};
  const double invn = 1.0 / probs.rows;
  for (int r = 0; r < probs.rows; ++r) {
    int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= probs.cols)
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " out of range");
    double p = std::max(probs(r, y), kLogClamp);
    out.loss -= std::log(p) * invn;
    out.grad(r, y) = -invn / p;
  }
  return out;
}

// Mean squared error against a target column.
inline LossGrad mse(const Matrix& pred, const Matrix& target) {
  check_same_shape(pred, target, "mse");
  LossGrad out{0.0, Matrix(pred.rows, pred.cols)};
  const double invn = 1.0 / pred.a.size();
  for (std::size_t i = 0; i < pred.a.size(); ++i) {
    double d = pred.a[i] - target.a[i];
    out.loss += d * d * invn;
    out.grad.a[i] = 2.0 * d * invn;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Flat-parameter Adam. The update is elementwise, so it is invariant to how
// parameters are flattened.
struct AdamState {
  AdamConfig cfg;
  long t = 0;
  std::vector<double> m, v;

  explicit AdamState(AdamConfig c = {}) : cfg(c) {}

  void step(std::vector<double*> params, const std::vector<const double*>& grads,
            std::size_t count) {
    if (m.size() != count) {
      if (!m.empty()) throw ShapeError("adam: parameter count changed");
      m.assign(count, 0.0);
      v.assign(count, 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < count; ++i) {
      double g = *grads[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = m[i] / c1;
      double vhat = v[i] / c2;
      *params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }

  void step(std::vector<double>& params, const std::vector<double>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam: grad size mismatch");
    std::vector<double*> p(params.size());
    std::vector<const double*> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      p[i] = &params[i];
      g[i] = &grads[i];
    }
    step(std::move(p), g, params.size());
  }
};

// Adam bound to one MlpNet; owns moment buffers shaped like the net.
class AdamOpt {
 public:
  explicit AdamOpt(AdamConfig cfg = {}) : state_(cfg) {}

  const AdamConfig& config() const { return state_.cfg; }

  void step(MlpNet& net, const Grads& g) {
    std::vector<double*> params;
    std::vector<const double*> grads;
    params.reserve(net.param_count());
    grads.reserve(net.param_count());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
      auto& l = net.layers[li];
      const auto& gw = g.w[li];
      const auto& gb = g.b[li];
      if (gw.rows != l.w.rows || gw.cols != l.w.cols || gb.size() != l.b.size())
        throw ShapeError("adam: gradient shape mismatch");
      for (std::size_t i = 0; i < l.w.a.size(); ++i) {
        params.push_back(&l.w.a[i]);
        grads.push_back(&gw.a[i]);
      }
      for (std::size_t i = 0; i < l.b.size(); ++i) {
        params.push_back(&l.b[i]);
        grads.push_back(&gb[i]);
      }
    }
    state_.step(std::move(params), grads, grads.size());
  }

 private:
  AdamState state_;
};

}  // namespace dusel
