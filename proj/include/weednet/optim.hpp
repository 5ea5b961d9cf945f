#pragma once

// Training math: mean categorical cross-entropy over a batch and the Adam
// update rule with bias correction. All accumulation happens in double.

#include <cmath>
#include <string>
#include <vector>

#include "weednet/error.hpp"
#include "weednet/graph.hpp"
#include "weednet/tensor.hpp"

namespace weednet {

// Mean over the batch of -log(probability of the true class). Probabilities
// are clamped to >= 1e-12 before the log. Rows of `onehot` must contain
// exactly one 1 and zeros elsewhere.
template <class T>
double cross_entropy(const TensorT<T>& probs, const TensorT<T>& onehot) {
  if (probs.rank() != 2 || probs.shape() != onehot.shape()) {
    throw ShapeError("cross_entropy expects matching [B,K] tensors, got " +
                     probs.shape().str() + " and " + onehot.shape().str());
  }
  const Index batch = probs.extent(0), k = probs.extent(1);
  double total = 0.0;
  for (Index b = 0; b < batch; ++b) {
    Index hot = -1;
    for (Index j = 0; j < k; ++j) {
      const T v = onehot[b * k + j];
      if (v == T(1)) {
        if (hot >= 0) throw InputError("one-hot row " + std::to_string(b) + " has multiple 1s");
        hot = j;
      } else if (v != T(0)) {
        throw InputError("one-hot row " + std::to_string(b) + " contains a value that is neither 0 nor 1");
      }
    }
    if (hot < 0) throw InputError("one-hot row " + std::to_string(b) + " has no 1");
    const double p = std::max(static_cast<double>(probs[b * k + hot]), 1e-12);
    total -= std::log(p);
  }
  return total / static_cast<double>(batch);
}

struct AdamHyper {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (learning_rate <= 0 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1 ||
        epsilon <= 0) {
      throw ConfigError("invalid Adam hyperparameters");
    }
  }
};

// First/second moment accumulators, one tensor per parameter, zero-initialized.
template <class T>
struct AdamState {
  std::vector<TensorT<T>> m;
  std::vector<TensorT<T>> v;
  long step = 0;

  static AdamState for_parameters(const std::vector<ParamRef<T>>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
      s.m.emplace_back(p.value->shape());
      s.v.emplace_back(p.value->shape());
    }
    return s;
  }
};

// One Adam step over a parameter list:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
template <class T>
void adam_step(const std::vector<TensorT<T>*>& params,
               const std::vector<const TensorT<T>*>& grads, AdamState<T>& state,
               const AdamHyper& hyper) {
  hyper.validate();
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ShapeError("adam_step parameter/gradient/state counts disagree");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorT<T>& p = *params[i];
    const TensorT<T>& g = *grads[i];
    TensorT<T>& m = state.m[i];
    TensorT<T>& v = state.v[i];
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("adam_step shape mismatch at parameter " + std::to_string(i));
    }
    for (Index j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = hyper.beta1 * static_cast<double>(m[j]) + (1.0 - hyper.beta1) * gj;
      const double vj =
          hyper.beta2 * static_cast<double>(v[j]) + (1.0 - hyper.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      p[j] = static_cast<T>(static_cast<double>(p[j]) -
                            hyper.learning_rate * m_hat / (std::sqrt(v_hat) + hyper.epsilon));
    }
  }
}

// Convenience overload over a graph's parameter registry; gradients must have
// been filled by a preceding backward().
template <class T>
void adam_step(GraphT<T>& graph, AdamState<T>& state, const AdamHyper& hyper) {
  auto refs = graph.parameters();
  std::vector<TensorT<T>*> params;
  std::vector<const TensorT<T>*> grads;
  params.reserve(refs.size());
  grads.reserve(refs.size());
  for (auto& r : refs) {
    if (r.grad->empty()) {
      throw StateError("adam_step before backward: missing gradient for " + r.name);
    }
    params.push_back(r.value);
    grads.push_back(r.grad);
  }
  adam_step(params, grads, state, hyper);
}

}  // namespace weednet
