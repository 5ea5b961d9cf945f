#pragma once

// The fixed two-branch network graph: one branch of plain convolutions, one
// of dilated convolutions, each conv followed by ReLU and 2x2 max pooling,
// flattened, concatenated and fed through a ReLU hidden dense layer into a
// softmax output. Nodes are stored in a fixed topological order; forward
// caches activations, backward fills parameter gradients in reverse order
// with the softmax+cross-entropy head fused as (probs - onehot)/B.

#include <string>
#include <utility>
#include <vector>

#include "weednet/error.hpp"
#include "weednet/nn_ops.hpp"
#include "weednet/tensor.hpp"

namespace weednet {

enum class Profile { paper, tiny, custom };

inline const char* profile_name(Profile p) {
  switch (p) {
    case Profile::paper: return "paper";
    case Profile::tiny: return "tiny";
    default: return "custom";
  }
}

// Blueprint of the network. The defaults are the full 227x227 configuration;
// the tiny profile keeps the layer structure at a 128x128 input for fast
// tests and gradient checks.
struct ArchitectureConfig {
  Index input_extent = 227;
  Index input_channels = 3;
  std::vector<Index> filters{20, 30, 40, 50, 60};
  std::vector<Index> kernels_a{5, 3, 3, 3, 3};
  std::vector<Index> dilations_a{1, 1, 1, 1, 1};
  std::vector<Index> kernels_b{5, 3, 3, 3, 3};
  std::vector<Index> dilations_b{3, 2, 2, 1, 1};
  Index hidden_units = 128;
  Index num_classes = 4;
  Profile profile = Profile::paper;

  static ArchitectureConfig paper_profile() { return ArchitectureConfig{}; }

  static ArchitectureConfig tiny_profile() {
    ArchitectureConfig c;
    c.input_extent = 128;
    c.profile = Profile::tiny;
    return c;
  }

  Index stage_count() const { return static_cast<Index>(filters.size()); }
};

enum class NodeKind { input, conv, pool, flatten, concat, dense };

enum class Activation { none, relu, softmax };

template <class T>
struct NodeT {
  std::string name;
  std::string type_label;
  NodeKind kind = NodeKind::input;
  Activation act = Activation::none;
  std::vector<int> inputs;
  std::string connected_to;

  ConvSpec conv;
  DenseSpec dense;
  Shape out_shape;  // per-sample shape, batch axis excluded

  TensorT<T> weights;
  TensorT<T> bias;
  TensorT<T> d_weights;
  TensorT<T> d_bias;

  // Forward caches consumed by backward.
  TensorT<T> output;
  TensorT<T> pre_activation;
  std::vector<Index> argmax;

  bool has_params() const { return kind == NodeKind::conv || kind == NodeKind::dense; }

  Index param_count() const {
    if (kind == NodeKind::conv) return conv_param_count(conv);
    if (kind == NodeKind::dense) return dense_param_count(dense);
    return 0;
  }
};

template <class T>
struct ParamRef {
  std::string name;
  TensorT<T>* value = nullptr;
  TensorT<T>* grad = nullptr;
};

template <class T>
class GraphT {
 public:
  GraphT() = default;

  std::vector<NodeT<T>>& nodes() { return nodes_; }
  const std::vector<NodeT<T>>& nodes() const { return nodes_; }

  const ArchitectureConfig& config() const { return config_; }
  void set_config(ArchitectureConfig c) { config_ = std::move(c); }

  // Both input nodes receive the same batch. Returns softmax probabilities
  // [B, num_classes]; intermediate activations stay cached for backward.
  TensorT<T> forward(const TensorT<T>& batch) {
    if (nodes_.empty()) throw StateError("forward on an empty graph");
    check_input_shape(batch);
    for (auto& node : nodes_) {
      switch (node.kind) {
        case NodeKind::input:
          node.output = batch;
          break;
        case NodeKind::conv: {
          const TensorT<T>& in = nodes_[node.inputs[0]].output;
          node.pre_activation = conv2d_forward(in, node.conv, node.weights, node.bias);
          node.output = node.act == Activation::relu ? relu(node.pre_activation)
                                                     : node.pre_activation;
          break;
        }
        case NodeKind::pool: {
          auto [out, argmax] = maxpool_forward(nodes_[node.inputs[0]].output);
          node.output = std::move(out);
          node.argmax = std::move(argmax);
          break;
        }
        case NodeKind::flatten: {
          const TensorT<T>& in = nodes_[node.inputs[0]].output;
          std::vector<Index> dims{in.extent(0), node.out_shape.extent(0)};
          node.output = reshape(in, Shape{dims});
          break;
        }
        case NodeKind::concat: {
          std::vector<TensorT<T>> parts;
          parts.reserve(node.inputs.size());
          for (int i : node.inputs) parts.push_back(nodes_[i].output);
          node.output = concat_last_axis(parts);
          break;
        }
        case NodeKind::dense: {
          const TensorT<T>& in = nodes_[node.inputs[0]].output;
          node.pre_activation = dense_forward(in, node.weights, node.bias);
          if (node.act == Activation::relu) {
            node.output = relu(node.pre_activation);
          } else if (node.act == Activation::softmax) {
            node.output = softmax(node.pre_activation);
          } else {
            node.output = node.pre_activation;
          }
          break;
        }
      }
      check_node_shape(node);
    }
    forward_batch_ = batch.extent(0);
    has_forward_ = true;
    return nodes_.back().output;
  }

  // Fills d_weights/d_bias of every parameterized node. The head gradient is
  // the fused softmax+cross-entropy adjoint (probs - onehot)/B.
  void backward(const TensorT<T>& onehot) {
    if (!has_forward_) {
      throw StateError("backward called before forward");
    }
    const NodeT<T>& head = nodes_.back();
    if (head.kind != NodeKind::dense || head.act != Activation::softmax) {
      throw StateError("graph head is not a softmax dense layer");
    }
    if (onehot.shape() != head.output.shape()) {
      throw ShapeError("backward onehot shape " + onehot.shape().str() +
                       " does not match output " + head.output.shape().str());
    }
    const Index batch = forward_batch_;

    std::vector<TensorT<T>> douts(nodes_.size());
    {
      // d_logits = (probs - onehot) / B
      TensorT<T> seed(head.output.shape());
      const double inv_b = 1.0 / static_cast<double>(batch);
      for (Index i = 0; i < seed.size(); ++i) {
        seed[i] = static_cast<T>(
            (static_cast<double>(head.output[i]) - static_cast<double>(onehot[i])) * inv_b);
      }
      douts.back() = std::move(seed);
    }

    for (std::size_t ni = nodes_.size(); ni-- > 0;) {
      NodeT<T>& node = nodes_[ni];
      if (node.kind == NodeKind::input) continue;
      TensorT<T>& dout = douts[ni];
      if (dout.empty()) {
        throw StateError("no upstream gradient reached node " + node.name);
      }
      switch (node.kind) {
        case NodeKind::conv: {
          TensorT<T> d_pre = node.act == Activation::relu
                                 ? relu_backward(node.pre_activation, dout)
                                 : std::move(dout);
          LayerGrads<T> g = conv2d_backward(nodes_[node.inputs[0]].output, node.conv,
                                            node.weights, d_pre);
          node.d_weights = std::move(g.d_weights);
          node.d_bias = std::move(g.d_bias);
          route(douts, node.inputs[0], std::move(g.d_input));
          break;
        }
        case NodeKind::pool: {
          route(douts, node.inputs[0],
                maxpool_backward(node.argmax, nodes_[node.inputs[0]].output.shape(), dout));
          break;
        }
        case NodeKind::flatten: {
          route(douts, node.inputs[0],
                reshape(std::move(dout), nodes_[node.inputs[0]].output.shape()));
          break;
        }
        case NodeKind::concat: {
          Index start = 0;
          for (int i : node.inputs) {
            const Index width = nodes_[i].output.shape().dims().back();
            route(douts, i, slice_last_axis(dout, start, width));
            start += width;
          }
          break;
        }
        case NodeKind::dense: {
          TensorT<T> d_pre;
          if (node.act == Activation::softmax) {
            d_pre = std::move(dout);  // fused head seed is already d_logits
          } else if (node.act == Activation::relu) {
            d_pre = relu_backward(node.pre_activation, dout);
          } else {
            d_pre = std::move(dout);
          }
          LayerGrads<T> g =
              dense_backward(nodes_[node.inputs[0]].output, node.weights, d_pre);
          node.d_weights = std::move(g.d_weights);
          node.d_bias = std::move(g.d_bias);
          route(douts, node.inputs[0], std::move(g.d_input));
          break;
        }
        case NodeKind::input:
          break;
      }
    }
  }

  // Parameter registry in fixed topological order, weights before bias.
  std::vector<ParamRef<T>> parameters() {
    std::vector<ParamRef<T>> refs;
    for (auto& node : nodes_) {
      if (!node.has_params()) continue;
      refs.push_back({node.name + "/weights", &node.weights, &node.d_weights});
      refs.push_back({node.name + "/bias", &node.bias, &node.d_bias});
    }
    return refs;
  }

  Index parameter_count() const {
    Index total = 0;
    for (const auto& node : nodes_) {
      if (node.has_params()) total += node.weights.size() + node.bias.size();
    }
    return total;
  }

  void zero_parameters() {
    for (auto& node : nodes_) {
      if (!node.has_params()) continue;
      std::fill(node.weights.data().begin(), node.weights.data().end(), T(0));
      std::fill(node.bias.data().begin(), node.bias.data().end(), T(0));
    }
  }

  // Drops cached activations and gradients (keeps parameters).
  void clear_caches() {
    for (auto& node : nodes_) {
      node.output = TensorT<T>();
      node.pre_activation = TensorT<T>();
      node.argmax.clear();
      node.d_weights = TensorT<T>();
      node.d_bias = TensorT<T>();
    }
    has_forward_ = false;
  }

 private:
  void check_input_shape(const TensorT<T>& batch) const {
    if (batch.rank() != 4 || batch.extent(1) != config_.input_extent ||
        batch.extent(2) != config_.input_extent ||
        batch.extent(3) != config_.input_channels) {
      throw ShapeError("graph input must be [B, " + std::to_string(config_.input_extent) +
                       ", " + std::to_string(config_.input_extent) + ", " +
                       std::to_string(config_.input_channels) + "], got " +
                       batch.shape().str());
    }
  }

  void check_node_shape(const NodeT<T>& node) const {
    const Shape& got = node.output.shape();
    const std::vector<Index>& want = node.out_shape.dims();
    if (got.rank() != static_cast<Index>(want.size()) + 1) {
      throw ShapeError("node " + node.name + " produced rank " +
                       std::to_string(got.rank()) + ", expected batch + " +
                       node.out_shape.str());
    }
    for (std::size_t i = 0; i < want.size(); ++i) {
      if (got.extent(static_cast<Index>(i) + 1) != want[i]) {
        throw ShapeError("node " + node.name + " produced shape " + got.str() +
                         ", expected batch + " + node.out_shape.str());
      }
    }
  }

  static void route(std::vector<TensorT<T>>& douts, int target, TensorT<T> grad) {
    if (douts[target].empty()) {
      douts[target] = std::move(grad);
    } else {
      douts[target] = add(douts[target], grad);
    }
  }

  std::vector<NodeT<T>> nodes_;
  ArchitectureConfig config_;
  Index forward_batch_ = 0;
  bool has_forward_ = false;
};

using Graph = GraphT<float>;

}  // namespace weednet
