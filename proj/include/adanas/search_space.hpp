// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adanas/autodiff.hpp"
#include "adanas/data.hpp"
#include "adanas/nn.hpp"
#include "adanas/ops.hpp"

namespace adanas {

enum class OperationKind : std::uint8_t {
  std_conv_3,
  std_conv_5,
  std_conv_7,
  dil_conv_3,
  dil_conv_5,
  dil_conv_7,
  max_pool_3,
  avg_pool_3,
  skip,
  zero,
};

inline constexpr std::size_t kNumOperations = 10;

const std::array<OperationKind, kNumOperations>& all_operations();
std::string_view operation_name(OperationKind op);
/// Throws ValidationError for names outside the candidate set.
OperationKind parse_operation(std::string_view name);

struct ConvSpec {
  std::size_t kernel;
  std::size_t dilation;
};

/// (kernel, dilation) for conv members, nullopt otherwise.
std::optional<ConvSpec> conv_spec(OperationKind op);

struct Edge {
  std::size_t from;
  std::size_t to;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Cell DAG: nodes 0 and 1 are inputs, 2..N+1 intermediate. Every pair i < j
/// with j >= 2 is an edge, listed by destination then source.
class CellTopology {
 public:
  explicit CellTopology(std::size_t intermediate_nodes = 3);

  std::size_t intermediate_nodes() const noexcept { return nodes_; }
  std::size_t num_nodes() const noexcept { return nodes_ + 2; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }

 private:
  std::size_t nodes_;
  std::vector<Edge> edges_;
};

/// Relu -> Conv (with bias) -> BatchNorm, channel count preserved.
struct ConvBlock {
  ConvBlock(const std::string& name, ConvSpec spec, std::size_t channels, Rng& rng);

  ConvSpec spec;
  Parameter kernel;
  Parameter bias;
  Parameter gamma;
  Parameter beta;
  BatchNormStats stats;

  Var forward(Tape& tape, Var x, BnMode mode);
  std::vector<Parameter*> parameters() { return {&kernel, &bias, &gamma, &beta}; }
};

/// Candidate operations and their weights on one edge of one layer.
struct EdgeOps {
  std::vector<OperationKind> ops;
  std::vector<std::optional<ConvBlock>> blocks;  // engaged for conv members
};

Var apply_operation(Tape& tape, OperationKind op, ConvBlock* block, Var h, BnMode mode);

struct CellLayer {
  CellLayer(const std::string& name, const CellTopology& topology,
            const std::vector<std::vector<OperationKind>>& ops_per_edge, std::size_t channels,
            std::size_t num_classes, Rng& rng);

  std::vector<EdgeOps> edges;
  Parameter node_attention;  // [C], scores intermediate nodes for the cell output
  Parameter seq_attention;   // [C], scores positions for the pooled representation
  LinearProbe probe;         // per-layer student probe

  std::vector<Parameter*> parameters();
};

enum class SampleMode { soft, hard };

/// Sum over the edge's candidates of v_o * op_o(h). In hard mode v is an
/// exact one-hot; only the selected candidate executes unless v requires a
/// gradient, in which case every candidate runs so that each v_o receives
/// <dL/dout, op_o(h)>.
Var mixed_edge_forward(Tape& tape, EdgeOps& edge, Var h, Var v, SampleMode mode, BnMode bn);

/// Intermediate nodes sum their incoming edges; the output is a softmax
/// attention over intermediate nodes scored from position-averaged states.
/// Empty `edge_weights` runs every edge's single op unweighted (child cells).
Var cell_forward(Tape& tape, const CellTopology& topology, CellLayer& layer, Var c_prev2,
                 Var c_prev1, std::span<const Var> edge_weights, SampleMode mode, BnMode bn);

struct LayerOutput {
  Var cell;    // [B,C,L]
  Var pooled;  // [B,C], attention over positions
  Var logits;  // [B,classes], student probe
};

LayerOutput summarize_layer(Tape& tape, CellLayer& layer, Var cell_out);

struct ArchParams {
  ArchParams() = default;
  ArchParams(std::size_t k_max, std::size_t num_edges, std::size_t num_ops, double tau);

  Parameter theta_k;  // [K_max] logits of P_K
  Parameter theta_o;  // [E, |O|] logits of P_o, shared by every layer
  double tau = 1.0;

  std::size_t k_max() const { return theta_k.value.size(); }
  std::size_t num_edges() const { return theta_o.value.shape().at(0); }
  std::size_t num_ops() const { return theta_o.value.shape().at(1); }
};

/// Gumbel(0,1) noise via -log(-log(u)), u clamped to [1e-10, 1-1e-10].
std::vector<double> sample_gumbel(std::size_t n, Rng& rng);
/// softmax((theta + noise) / tau). Throws ConfigError for tau <= 0.
Var gumbel_softmax(Var theta, double tau, std::span<const double> noise);
Var gumbel_softmax(Var theta, double tau, Rng& rng);

struct ArchSample {
  Var layers;               // [K_max]
  std::vector<Var> edges;   // per edge, [|O|]
  SampleMode mode = SampleMode::hard;
};

/// Draws y_K and every y_o; hard mode passes each through straight_through.
ArchSample sample_architecture(Tape& tape, ArchParams& arch, Rng& rng, SampleMode mode);

struct SuperNetConfig {
  TaskType task_type = TaskType::single_text;
  std::size_t k_max = 8;
  std::size_t nodes = 3;
  std::size_t embed_dim = 128;
  std::size_t vocab_size = 0;
  std::size_t num_classes = 2;
  std::vector<OperationKind> candidates{all_operations().begin(), all_operations().end()};
  double tau = 5.0;
};

struct InputPair {
  Var a;
  Var b;
};

/// Layer-1 inputs. Single-text tasks return the same node for both.
InputPair embed_inputs(Tape& tape, Parameter& embedding, const EncodedBatch& batch);

struct NetworkOutput {
  std::vector<LayerOutput> layers;
  Var logits;
};

class SuperNet {
 public:
  SuperNet(SuperNetConfig config, std::uint64_t seed);

  const SuperNetConfig& config() const noexcept { return config_; }
  const CellTopology& topology() const noexcept { return topology_; }

  /// Runs all K_max layers; final logits are the y_K-weighted sum of the
  /// per-layer probe logits.
  NetworkOutput forward(Tape& tape, const EncodedBatch& batch, const ArchSample& sample, BnMode bn);

  std::vector<Parameter*> weight_parameters();
  std::vector<Parameter*> arch_parameters() { return {&arch.theta_k, &arch.theta_o}; }
  std::vector<BatchNormStats*> batchnorm_stats();

  Parameter embedding;  // [V, C]
  std::vector<CellLayer> layers;
  ArchParams arch;

 private:
  SuperNetConfig config_;
  CellTopology topology_;
};

/// Discrete architecture: depth K and one operation per edge.
struct ChildGraph {
  static constexpr int kSchemaVersion = 1;

  TaskType task_type = TaskType::single_text;
  std::size_t k = 1;
  std::size_t nodes = 3;
  std::size_t embed_dim = 128;
  std::vector<OperationKind> ops;  // indexed like CellTopology::edges()

  /// Throws ValidationError on a wrong edge count or K < 1.
  void validate() const;
  std::string to_json() const;
  static ChildGraph from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static ChildGraph load(const std::filesystem::path& path);
  /// Stable text key, e.g. "K2:std_conv_3,zero".
  std::string encoding() const;

  friend bool operator==(const ChildGraph&, const ChildGraph&) = default;
};

/// K = argmax(theta_K) + 1 and argmax per edge, ties to the lowest index.
ChildGraph derive_child(const ArchParams& arch, const SuperNetConfig& config);

/// Logits peaked at the given architecture; derive_child inverts it.
ArchParams peaked_params(const ChildGraph& child, const SuperNetConfig& config, double peak = 10.0);

class ChildNet {
 public:
  ChildNet(ChildGraph graph, std::size_t vocab_size, std::size_t num_classes, std::uint64_t seed);

  const ChildGraph& graph() const noexcept { return graph_; }
  const CellTopology& topology() const noexcept { return topology_; }

  /// Executes the K selected layers only; logits come from layer K's head.
  NetworkOutput forward(Tape& tape, const EncodedBatch& batch, BnMode bn);

  /// Copies the matching weights of a supernet (selected ops of layers 1..K).
  void copy_weights_from(const SuperNet& net);

  std::vector<Parameter*> parameters();
  std::vector<BatchNormStats*> batchnorm_stats();
  std::size_t parameter_count();

  Parameter embedding;
  std::vector<CellLayer> layers;

 private:
  ChildGraph graph_;
  CellTopology topology_;
};

}  // namespace adanas
