#pragma once

// Builds the two-branch architecture from a config, renders the layer
// summary table, and reads/writes binary checkpoints (format documented in
// docs/checkpoint-format.md).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "weednet/graph.hpp"
#include "weednet/optim.hpp"
#include "weednet/rng.hpp"

namespace weednet {

namespace detail {

// Names and static shapes for one branch, stage by stage. Throws ConfigError
// naming the first layer whose output would underflow.
struct StagePlan {
  std::vector<Index> conv_extents;  // spatial extent after each conv
  std::vector<Index> pool_extents;  // spatial extent after each pool
};

inline StagePlan plan_branch(const ArchitectureConfig& config,
                             const std::vector<Index>& kernels,
                             const std::vector<Index>& dilations,
                             const std::string& conv_prefix,
                             const std::string& pool_prefix, Index name_offset) {
  StagePlan plan;
  Index extent = config.input_extent;
  for (Index s = 0; s < config.stage_count(); ++s) {
    const Index idx = name_offset + s;
    const std::string conv_name =
        idx == 0 ? conv_prefix : conv_prefix + "_" + std::to_string(idx);
    const std::string pool_name =
        idx == 0 ? pool_prefix : pool_prefix + "_" + std::to_string(idx);
    try {
      extent = conv_output_extent(extent, kernels[static_cast<std::size_t>(s)],
                                  dilations[static_cast<std::size_t>(s)]);
    } catch (const ShapeError& e) {
      throw ConfigError("layer " + conv_name + ": " + e.what());
    }
    plan.conv_extents.push_back(extent);
    if (extent < 2) {
      throw ConfigError("layer " + pool_name + ": input extent " +
                        std::to_string(extent) + " smaller than 2x2 window");
    }
    extent /= 2;
    plan.pool_extents.push_back(extent);
  }
  return plan;
}

inline void validate_config(const ArchitectureConfig& config) {
  const std::size_t stages = config.filters.size();
  if (stages == 0 || config.kernels_a.size() != stages ||
      config.dilations_a.size() != stages || config.kernels_b.size() != stages ||
      config.dilations_b.size() != stages) {
    throw ConfigError("filter/kernel/dilation schedules must have equal nonzero length");
  }
  if (config.input_extent < 1 || config.input_channels < 1 ||
      config.hidden_units < 1 || config.num_classes < 1) {
    throw ConfigError("input extent, channels and head widths must be positive");
  }
}

}  // namespace detail

// Deterministic Glorot-uniform fill: U(-L, L) with L = sqrt(6/(fan_in+fan_out)).
template <class T>
void glorot_fill(TensorT<T>& w, Index fan_in, Index fan_out, SplitMix64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < w.size(); ++i) {
    w[i] = static_cast<T>(rng.next_double(-limit, limit));
  }
}

// Wires the 28-node graph (2 inputs, 5 conv/pool pairs per branch, a flatten
// per branch, concatenate, flatten, dense-ReLU, dense-softmax) in the fixed
// interleaved topological order the summary table prints. Initialization is
// a single SplitMix64 stream over parameters in that order.
template <class T>
GraphT<T> build_graph(const ArchitectureConfig& config, std::uint64_t init_seed) {
  detail::validate_config(config);
  const Index stages = config.stage_count();
  const auto plan_a = detail::plan_branch(config, config.kernels_a, config.dilations_a,
                                          "conv2d", "max_pooling2d", 0);
  const auto plan_b = detail::plan_branch(config, config.kernels_b, config.dilations_b,
                                          "conv2d", "max_pooling2d", stages);

  GraphT<T> g;
  g.set_config(config);
  auto& nodes = g.nodes();
  nodes.reserve(static_cast<std::size_t>(4 * stages + 8));

  auto add_node = [&nodes](NodeT<T> node) {
    nodes.push_back(std::move(node));
    return static_cast<int>(nodes.size() - 1);
  };
  auto quoted = [](const std::string& producer, const std::string& slot) {
    return "['" + producer + slot + "']";
  };

  const std::string input_a_name = "conv2d_input";
  const std::string input_b_name = "conv2d_" + std::to_string(stages) + "_input";

  NodeT<T> input_a;
  input_a.name = input_a_name;
  input_a.type_label = "InputLayer";
  input_a.kind = NodeKind::input;
  input_a.connected_to = "[]";
  input_a.out_shape = Shape{config.input_extent, config.input_extent, config.input_channels};
  const int ia = add_node(std::move(input_a));

  NodeT<T> input_b;
  input_b.name = input_b_name;
  input_b.type_label = "InputLayer";
  input_b.kind = NodeKind::input;
  input_b.connected_to = "[]";
  input_b.out_shape = Shape{config.input_extent, config.input_extent, config.input_channels};
  const int ib = add_node(std::move(input_b));

  int prev_a = ia, prev_b = ib;
  Index channels_a = config.input_channels, channels_b = config.input_channels;
  for (Index s = 0; s < stages; ++s) {
    const std::size_t si = static_cast<std::size_t>(s);
    auto conv_name = [&](Index idx) {
      return idx == 0 ? std::string("conv2d") : "conv2d_" + std::to_string(idx);
    };
    auto pool_name = [&](Index idx) {
      return idx == 0 ? std::string("max_pooling2d") : "max_pooling2d_" + std::to_string(idx);
    };

    NodeT<T> conv_a;
    conv_a.name = conv_name(s);
    conv_a.type_label = "Conv2D";
    conv_a.kind = NodeKind::conv;
    conv_a.act = Activation::relu;
    conv_a.inputs = {prev_a};
    conv_a.connected_to = quoted(nodes[prev_a].name, "[0][0]");
    conv_a.conv = {config.kernels_a[si], channels_a, config.filters[si],
                   config.dilations_a[si]};
    conv_a.out_shape = Shape{plan_a.conv_extents[si], plan_a.conv_extents[si],
                             config.filters[si]};
    const int ca = add_node(std::move(conv_a));

    NodeT<T> conv_b;
    conv_b.name = conv_name(stages + s);
    conv_b.type_label = "Conv2D";
    conv_b.kind = NodeKind::conv;
    conv_b.act = Activation::relu;
    conv_b.inputs = {prev_b};
    conv_b.connected_to = quoted(nodes[prev_b].name, "[0][0]");
    conv_b.conv = {config.kernels_b[si], channels_b, config.filters[si],
                   config.dilations_b[si]};
    conv_b.out_shape = Shape{plan_b.conv_extents[si], plan_b.conv_extents[si],
                             config.filters[si]};
    const int cb = add_node(std::move(conv_b));

    NodeT<T> pool_a;
    pool_a.name = pool_name(s);
    pool_a.type_label = "MaxPooling2D";
    pool_a.kind = NodeKind::pool;
    pool_a.inputs = {ca};
    pool_a.connected_to = quoted(nodes[ca].name, "[0][0]");
    pool_a.out_shape = Shape{plan_a.pool_extents[si], plan_a.pool_extents[si],
                             config.filters[si]};
    prev_a = add_node(std::move(pool_a));

    NodeT<T> pool_b;
    pool_b.name = pool_name(stages + s);
    pool_b.type_label = "MaxPooling2D";
    pool_b.kind = NodeKind::pool;
    pool_b.inputs = {cb};
    pool_b.connected_to = quoted(nodes[cb].name, "[0][0]");
    pool_b.out_shape = Shape{plan_b.pool_extents[si], plan_b.pool_extents[si],
                             config.filters[si]};
    prev_b = add_node(std::move(pool_b));

    channels_a = config.filters[si];
    channels_b = config.filters[si];
  }

  const Index flat_a = plan_a.pool_extents.back() * plan_a.pool_extents.back() *
                       config.filters.back();
  const Index flat_b = plan_b.pool_extents.back() * plan_b.pool_extents.back() *
                       config.filters.back();

  NodeT<T> flatten_1;
  flatten_1.name = "flatten_1";
  flatten_1.type_label = "Flatten";
  flatten_1.kind = NodeKind::flatten;
  flatten_1.inputs = {prev_a};
  flatten_1.connected_to = quoted(nodes[prev_a].name, "[0][0]");
  flatten_1.out_shape = Shape{flat_a};
  const int f1 = add_node(std::move(flatten_1));

  NodeT<T> flatten_2;
  flatten_2.name = "flatten_2";
  flatten_2.type_label = "Flatten";
  flatten_2.kind = NodeKind::flatten;
  flatten_2.inputs = {prev_b};
  flatten_2.connected_to = quoted(nodes[prev_b].name, "[0][0]");
  flatten_2.out_shape = Shape{flat_b};
  const int f2 = add_node(std::move(flatten_2));

  NodeT<T> concat;
  concat.name = "concatenate";
  concat.type_label = "Concatenate";
  concat.kind = NodeKind::concat;
  concat.inputs = {f1, f2};
  concat.connected_to = "['flatten_1[0]', 'flatten_2[0]']";
  concat.out_shape = Shape{flat_a + flat_b};
  const int cc = add_node(std::move(concat));

  NodeT<T> flatten_3;
  flatten_3.name = "flatten_3";
  flatten_3.type_label = "Flatten";
  flatten_3.kind = NodeKind::flatten;
  flatten_3.inputs = {cc};
  flatten_3.connected_to = quoted("concatenate", "[0][0]");
  flatten_3.out_shape = Shape{flat_a + flat_b};
  const int f3 = add_node(std::move(flatten_3));

  NodeT<T> dense_1;
  dense_1.name = "dense_1";
  dense_1.type_label = "Dense";
  dense_1.kind = NodeKind::dense;
  dense_1.act = Activation::relu;
  dense_1.inputs = {f3};
  dense_1.connected_to = quoted("flatten_3", "[0][0]");
  dense_1.dense = {flat_a + flat_b, config.hidden_units};
  dense_1.out_shape = Shape{config.hidden_units};
  const int d1 = add_node(std::move(dense_1));

  NodeT<T> dense_2;
  dense_2.name = "dense_2";
  dense_2.type_label = "Dense";
  dense_2.kind = NodeKind::dense;
  dense_2.act = Activation::softmax;
  dense_2.inputs = {d1};
  dense_2.connected_to = quoted("dense_1", "[0][0]");
  dense_2.dense = {config.hidden_units, config.num_classes};
  dense_2.out_shape = Shape{config.num_classes};
  add_node(std::move(dense_2));

  SplitMix64 rng(init_seed);
  for (auto& node : nodes) {
    if (node.kind == NodeKind::conv) {
      const ConvSpec& c = node.conv;
      node.weights = TensorT<T>(Shape{c.kernel, c.kernel, c.in_channels, c.out_channels});
      node.bias = TensorT<T>(Shape{c.out_channels});
      glorot_fill(node.weights, c.kernel * c.kernel * c.in_channels,
                  c.kernel * c.kernel * c.out_channels, rng);
    } else if (node.kind == NodeKind::dense) {
      const DenseSpec& d = node.dense;
      node.weights = TensorT<T>(Shape{d.in_features, d.out_features});
      node.bias = TensorT<T>(Shape{d.out_features});
      glorot_fill(node.weights, d.in_features, d.out_features, rng);
    }
  }
  return g;
}

struct SummaryRow {
  std::string layer;         // "conv2d (Conv2D)"
  std::string output_shape;  // "(None, 223, 223, 20)"
  Index params = 0;
  std::string connected_to;
  std::string note;  // set when the cell corrects a known misprint in the
                     // published reference table for this architecture
};

struct SummaryTable {
  std::vector<SummaryRow> rows;
  Index total_params = 0;
  std::vector<std::string> footnotes;
};

SummaryTable summarize(const Graph& g);
std::string format_summary(const SummaryTable& table);
std::string summary_json(const SummaryTable& table);

// Checkpoint: magic "WDNT", version, embedded config, float32 parameter
// payload in topological order (weights before bias per node), optional Adam
// state, step counter. load(save(g)) is bitwise on parameters and state.
void save_checkpoint(const Graph& g, const AdamState<float>* adam, long step,
                     const std::string& path);
void save_checkpoint(const Graph& g, const std::string& path);

struct LoadedCheckpoint {
  Graph graph;
  std::optional<AdamState<float>> adam;
  long step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace weednet
