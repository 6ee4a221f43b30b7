#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dusel/dataset.hpp"
#include "dusel/nn.hpp"

namespace dusel {

// Cheap proxy classifiers used inside utility sampling and train-from-scratch
// evaluation. They get trained thousands of times, so everything here favors
// simple full-batch optimization with an early stop.

enum class ProxyKind { Logistic, LinearHinge, SmallMlp };

inline const char* proxy_name(ProxyKind k) {
  switch (k) {
    case ProxyKind::Logistic: return "logistic";
    case ProxyKind::LinearHinge: return "linear_hinge";
    case ProxyKind::SmallMlp: return "small_mlp";
  }
  return "?";
}

inline ProxyKind proxy_from_name(const std::string& s) {
  if (s == "logistic") return ProxyKind::Logistic;
  if (s == "linear_hinge") return ProxyKind::LinearHinge;
  if (s == "small_mlp") return ProxyKind::SmallMlp;
  throw std::invalid_argument("unknown proxy kind: " + s);
}

struct ProxyHyper {
  double c = 0.1;              // hinge regularization; weight decay = 1/(c*n)
  double weight_decay = 1e-4;  // logistic / mlp
  double lr = 0.1;
  int epochs = 200;
  int mlp_hidden = 32;
  double mlp_lr = 1e-3;
  double plateau_rel_tol = 1e-6;
  int plateau_patience = 10;
};

struct ProxyModel {
  ProxyKind kind = ProxyKind::Logistic;
  MlpNet net;  // linear proxies are a single layer of this
  int num_classes = 0;
  bool single_class = false;
};

namespace proxy_detail {

inline Matrix scores(const ProxyModel& m, const Matrix& x) { return forward(m.net, x); }

// One-vs-rest hinge: mean over samples and classes of max(0, 1 - s_c * t_c)
// with t_c = +1 for the true class and -1 otherwise, plus (wd/2)*||W||^2.
inline double hinge_loss_and_grad(const Matrix& s, const std::vector<int>& labels,
                                  Matrix& grad_out) {
  grad_out = Matrix(s.rows, s.cols);
  double loss = 0.0;
  const double scale = 1.0 / (static_cast<double>(s.rows) * s.cols);
  for (int r = 0; r < s.rows; ++r) {
    int y = labels[static_cast<std::size_t>(r)];
    for (int c = 0; c < s.cols; ++c) {
      double t = c == y ? 1.0 : -1.0;
      double margin = 1.0 - s(r, c) * t;
      if (margin > 0.0) {
        loss += margin * scale;
        grad_out(r, c) = -t * scale;
      }
    }
  }
  return loss;
}

inline bool plateaued(const std::vector<double>& history, double rel_tol, int patience) {
  int n = static_cast<int>(history.size());
  if (n < patience + 1) return false;
  double recent = history[static_cast<std::size_t>(n - 1)];
  double past = history[static_cast<std::size_t>(n - 1 - patience)];
  return std::fabs(past - recent) <= rel_tol * std::max(1.0, std::fabs(past));
}

}  // namespace proxy_detail

// Deterministic per (inputs, seed); never throws on degenerate single-class
// subsets — those train to a constant predictor and get flagged.
inline ProxyModel train_proxy(ProxyKind kind, const Dataset& train, const ProxyHyper& hyper,
                              std::uint64_t seed) {
  const Matrix& x = train.features();
  const std::vector<int>& y = train.labels();
  const int n = train.n();
  const int num_classes = train.num_classes();
  if (num_classes < 1) throw ParamError("train_proxy: dataset has no class count");

  ProxyModel model;
  model.kind = kind;
  model.num_classes = num_classes;
  {
    int first = y.empty() ? 0 : y.front();
    model.single_class = true;
    for (int v : y)
      if (v != first) {
        model.single_class = false;
        break;
      }
  }

  if (kind == ProxyKind::SmallMlp) {
    Rng rng(derive_seed(seed, 0x3117));
    model.net = make_mlp(train.dim(),
                         {{hyper.mlp_hidden, Act::Elu}, {num_classes, Act::Softmax}}, rng);
    AdamOpt opt(AdamConfig{hyper.mlp_lr, 0.9, 0.999, 1e-7});
    std::vector<double> history;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
      ForwardCache cache;
      Matrix p = forward(model.net, x, &cache);
      auto lg = cross_entropy(p, y);
      Grads g = backward(model.net, cache, lg.grad);
      if (hyper.weight_decay > 0.0)
        for (std::size_t li = 0; li < model.net.layers.size(); ++li)
          for (std::size_t i = 0; i < g.w[li].a.size(); ++i)
            g.w[li].a[i] += hyper.weight_decay * model.net.layers[li].w.a[i];
      opt.step(model.net, g);
      history.push_back(lg.loss);
      if (proxy_detail::plateaued(history, hyper.plateau_rel_tol, hyper.plateau_patience)) break;
    }
    return model;
  }

  // Linear proxies start from zero weights: the problems are convex and the
  // zero start makes training exactly equivariant to feature permutations.
  MlpNet lin;
  {
    Layer l;
    l.w = Matrix(train.dim(), num_classes);
    l.b.assign(static_cast<std::size_t>(num_classes), 0.0);
    l.act = kind == ProxyKind::Logistic ? Act::Softmax : Act::Identity;
    lin.layers.push_back(std::move(l));
  }
  model.net = std::move(lin);

  const double wd =
      kind == ProxyKind::LinearHinge ? 1.0 / (hyper.c * n) : hyper.weight_decay;
  AdamOpt opt(AdamConfig{hyper.lr, 0.9, 0.999, 1e-8});
  std::vector<double> history;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    ForwardCache cache;
    Matrix out = forward(model.net, x, &cache);
    double loss;
    Matrix dout;
    if (kind == ProxyKind::Logistic) {
      auto lg = cross_entropy(out, y);
      loss = lg.loss;
      dout = std::move(lg.grad);
    } else {
      loss = proxy_detail::hinge_loss_and_grad(out, y, dout);
    }
    Grads g = backward(model.net, cache, dout);
    for (std::size_t i = 0; i < g.w[0].a.size(); ++i)
      g.w[0].a[i] += wd * model.net.layers[0].w.a[i];
    opt.step(model.net, g);
    history.push_back(loss);
    if (proxy_detail::plateaued(history, hyper.plateau_rel_tol, hyper.plateau_patience)) break;
  }
  return model;
}

inline std::vector<int> predict(const ProxyModel& model, const Matrix& x) {
  Matrix s = proxy_detail::scores(model, x);
  std::vector<int> out(static_cast<std::size_t>(s.rows));
  for (int r = 0; r < s.rows; ++r) {
    int best = 0;
    for (int c = 1; c < s.cols; ++c)
      if (s(r, c) > s(r, best)) best = c;  // ties keep the lowest class id
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

// Fraction of argmax-correct predictions on a labeled evaluation set.
inline double accuracy(const ProxyModel& model, const Dataset& eval) {
  if (eval.dim() != model.net.input_dim())
    throw ShapeError("accuracy: eval dim " + std::to_string(eval.dim()) + " != model dim " +
                     std::to_string(model.net.input_dim()));
  auto pred = predict(model, eval.features());
  const auto& truth = eval.labels();
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace dusel
