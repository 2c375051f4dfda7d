// SPDX-License-Identifier: Apache-2.0
#include "adanas/search_space.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adanas/errors.hpp"

namespace adanas {

const std::array<OperationKind, kNumOperations>& all_operations() {
  static constexpr std::array<OperationKind, kNumOperations> ops{
      OperationKind::std_conv_3, OperationKind::std_conv_5, OperationKind::std_conv_7,
      OperationKind::dil_conv_3, OperationKind::dil_conv_5, OperationKind::dil_conv_7,
      OperationKind::max_pool_3, OperationKind::avg_pool_3, OperationKind::skip,
      OperationKind::zero};
  return ops;
}

std::string_view operation_name(OperationKind op) {
  switch (op) {
    case OperationKind::std_conv_3: return "std_conv_3";
    case OperationKind::std_conv_5: return "std_conv_5";
    case OperationKind::std_conv_7: return "std_conv_7";
    case OperationKind::dil_conv_3: return "dil_conv_3";
    case OperationKind::dil_conv_5: return "dil_conv_5";
    case OperationKind::dil_conv_7: return "dil_conv_7";
    case OperationKind::max_pool_3: return "max_pool_3";
    case OperationKind::avg_pool_3: return "avg_pool_3";
    case OperationKind::skip: return "skip";
    case OperationKind::zero: return "zero";
  }
  throw ValidationError("operation outside the candidate set");
}

OperationKind parse_operation(std::string_view name) {
  for (auto op : all_operations()) {
    if (operation_name(op) == name) return op;
  }
  throw ValidationError("unknown operation '" + std::string(name) + "'");
}

std::optional<ConvSpec> conv_spec(OperationKind op) {
  switch (op) {
    case OperationKind::std_conv_3: return ConvSpec{3, 1};
    case OperationKind::std_conv_5: return ConvSpec{5, 1};
    case OperationKind::std_conv_7: return ConvSpec{7, 1};
    case OperationKind::dil_conv_3: return ConvSpec{3, 2};
    case OperationKind::dil_conv_5: return ConvSpec{5, 2};
    case OperationKind::dil_conv_7: return ConvSpec{7, 2};
    default: return std::nullopt;
  }
}

CellTopology::CellTopology(std::size_t intermediate_nodes) : nodes_(intermediate_nodes) {
  if (intermediate_nodes == 0) throw ConfigError("a cell needs at least one intermediate node");
  for (std::size_t j = 2; j < intermediate_nodes + 2; ++j)
    for (std::size_t i = 0; i < j; ++i) edges_.push_back({i, j});
}

ConvBlock::ConvBlock(const std::string& name, ConvSpec s, std::size_t channels, Rng& rng)
    : spec(s),
      kernel(name + ".kernel", uniform_fan_in({channels, channels, s.kernel}, channels * s.kernel, rng)),
      bias(name + ".bias", uniform_fan_in({channels}, channels * s.kernel, rng)),
      gamma(name + ".gamma", Tensor({channels}, 1.0)),
      beta(name + ".beta", Tensor({channels}, 0.0)),
      stats(channels) {}

Var ConvBlock::forward(Tape& tape, Var x, BnMode mode) {
  Var h = relu(x);
  h = conv1d(h, tape.param(kernel), spec.dilation);
  h = add_channel_bias(h, tape.param(bias));
  return batchnorm(h, tape.param(gamma), tape.param(beta), stats, mode);
}

Var apply_operation(Tape& tape, OperationKind op, ConvBlock* block, Var h, BnMode mode) {
  switch (op) {
    case OperationKind::max_pool_3: return pool1d(h, PoolKind::max, 3);
    case OperationKind::avg_pool_3: return pool1d(h, PoolKind::avg, 3);
    case OperationKind::skip: return h;
    case OperationKind::zero: return tape.constant(Tensor(h.shape()));
    default:
      if (block == nullptr) throw ValidationError("conv operation without weights");
      return block->forward(tape, h, mode);
  }
}

CellLayer::CellLayer(const std::string& name, const CellTopology& topology,
                     const std::vector<std::vector<OperationKind>>& ops_per_edge,
                     std::size_t channels, std::size_t num_classes, Rng& rng) {
  if (ops_per_edge.size() != topology.num_edges()) {
    throw ValidationError("expected operations for " + std::to_string(topology.num_edges()) +
                          " edges, got " + std::to_string(ops_per_edge.size()));
  }
  for (std::size_t e = 0; e < topology.num_edges(); ++e) {
    EdgeOps edge;
    edge.ops = ops_per_edge[e];
    for (auto op : edge.ops) {
      if (auto spec = conv_spec(op)) {
        const Edge& ed = topology.edges()[e];
        edge.blocks.emplace_back(std::in_place,
                                 name + ".e" + std::to_string(ed.from) + std::to_string(ed.to) +
                                     "." + std::string(operation_name(op)),
                                 *spec, channels, rng);
      } else {
        edge.blocks.emplace_back(std::nullopt);
      }
    }
    edges.push_back(std::move(edge));
  }
  node_attention = Parameter(name + ".node_attention", uniform_fan_in({channels}, channels, rng));
  seq_attention = Parameter(name + ".seq_attention", uniform_fan_in({channels}, channels, rng));
  probe = LinearProbe(name + ".probe", channels, num_classes, rng);
}

std::vector<Parameter*> CellLayer::parameters() {
  std::vector<Parameter*> out;
  for (auto& edge : edges)
    for (auto& block : edge.blocks)
      if (block) {
        for (auto* p : block->parameters()) out.push_back(p);
      }
  out.push_back(&node_attention);
  out.push_back(&seq_attention);
  for (auto* p : probe.parameters()) out.push_back(p);
  return out;
}

Var mixed_edge_forward(Tape& tape, EdgeOps& edge, Var h, Var v, SampleMode mode, BnMode bn) {
  if (v.value().size() != edge.ops.size()) {
    throw DimensionError("edge weights have " + std::to_string(v.value().size()) +
                         " entries for " + std::to_string(edge.ops.size()) + " candidates");
  }
  auto block = [&](std::size_t i) { return edge.blocks[i] ? &*edge.blocks[i] : nullptr; };
  if (mode == SampleMode::hard && !tape.requires_grad(v)) {
    const std::size_t sel = argmax(v.value().data());
    Var out = apply_operation(tape, edge.ops[sel], block(sel), h, bn);
    return scale_by(out, select(v, sel));
  }
  std::vector<Var> outs;
  outs.reserve(edge.ops.size());
  for (std::size_t i = 0; i < edge.ops.size(); ++i) {
    outs.push_back(apply_operation(tape, edge.ops[i], block(i), h, bn));
  }
  return weighted_sum(outs, v);
}

Var cell_forward(Tape& tape, const CellTopology& topology, CellLayer& layer, Var c_prev2,
                 Var c_prev1, std::span<const Var> edge_weights, SampleMode mode, BnMode bn) {
  const bool weighted = !edge_weights.empty();
  if (weighted && edge_weights.size() != topology.num_edges()) {
    throw DimensionError("cell needs weights for " + std::to_string(topology.num_edges()) + " edges");
  }
  std::vector<Var> states(topology.num_nodes());
  states[0] = c_prev2;
  states[1] = c_prev1;
  std::vector<bool> has_state(topology.num_nodes(), false);
  has_state[0] = has_state[1] = true;
  for (std::size_t e = 0; e < topology.num_edges(); ++e) {
    const Edge& ed = topology.edges()[e];
    EdgeOps& ops = layer.edges[e];
    Var out;
    if (weighted) {
      out = mixed_edge_forward(tape, ops, states[ed.from], edge_weights[e], mode, bn);
    } else {
      if (ops.ops.size() != 1) throw ValidationError("child edge must hold exactly one operation");
      out = apply_operation(tape, ops.ops[0], ops.blocks[0] ? &*ops.blocks[0] : nullptr,
                            states[ed.from], bn);
    }
    states[ed.to] = has_state[ed.to] ? add(states[ed.to], out) : out;
    has_state[ed.to] = true;
  }

  const std::size_t channels = layer.node_attention.value.size();
  Var u = reshape(tape.param(layer.node_attention), {channels, 1});
  std::vector<Var> scores;
  std::vector<Var> intermediate(states.begin() + 2, states.end());
  for (Var h : intermediate) scores.push_back(matmul(mean_positions(h), u));
  Var attention = softmax(concat(scores, 1), 1);
  return weighted_sum(intermediate, attention);
}

LayerOutput summarize_layer(Tape& tape, CellLayer& layer, Var cell_out) {
  Var scores = contract_channels(cell_out, tape.param(layer.seq_attention));
  Var pooled = attend_positions(cell_out, softmax(scores, 1));
  return {cell_out, pooled, layer.probe.logits(tape, pooled)};
}

ArchParams::ArchParams(std::size_t k_max, std::size_t num_edges, std::size_t num_ops, double t)
    : theta_k("theta_k", Tensor({k_max}, 0.0)),
      theta_o("theta_o", Tensor({num_edges, num_ops}, 0.0)),
      tau(t) {}

std::vector<double> sample_gumbel(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> g(n);
  for (auto& v : g) {
    const double u = std::clamp(uni(rng), 1e-10, 1.0 - 1e-10);
    v = -std::log(-std::log(u));
  }
  return g;
}

Var gumbel_softmax(Var theta, double tau, std::span<const double> noise) {
  if (!(tau > 0.0)) throw ConfigError("gumbel temperature must be positive");
  if (noise.size() != theta.value().size()) throw DimensionError("gumbel noise size mismatch");
  Tape& tape = theta.tape();
  Var g = tape.constant(Tensor(theta.shape(), std::vector<double>(noise.begin(), noise.end())));
  return softmax(scale(add(theta, g), 1.0 / tau), theta.shape().size() - 1);
}

Var gumbel_softmax(Var theta, double tau, Rng& rng) {
  const auto noise = sample_gumbel(theta.value().size(), rng);
  return gumbel_softmax(theta, tau, noise);
}

ArchSample sample_architecture(Tape& tape, ArchParams& arch, Rng& rng, SampleMode mode) {
  ArchSample s;
  s.mode = mode;
  auto finish = [&](Var y) { return mode == SampleMode::hard ? straight_through(y) : y; };
  s.layers = finish(gumbel_softmax(tape.param(arch.theta_k), arch.tau, rng));
  Var theta_o = tape.param(arch.theta_o);
  for (std::size_t e = 0; e < arch.num_edges(); ++e) {
    s.edges.push_back(finish(gumbel_softmax(row(theta_o, e), arch.tau, rng)));
  }
  return s;
}

InputPair embed_inputs(Tape& tape, Parameter& embedding, const EncodedBatch& batch) {
  if (batch.batch == 0) throw ValidationError("empty batch");
  Var table = tape.param(embedding);
  Var a = adanas::embedding(table, batch.ids_a, batch.batch, batch.length);
  if (batch.task_type == TaskType::single_text) return {a, a};
  return {a, adanas::embedding(table, batch.ids_b, batch.batch, batch.length)};
}

namespace {

// Layer 1 reads the two embedded inputs; layer 2 reads c_1 twice; later
// layers read the two previous cell outputs.
template <typename LayerFn>
std::vector<LayerOutput> stack_layers(InputPair inputs, std::size_t count, LayerFn&& run) {
  std::vector<LayerOutput> outs;
  Var prev2 = inputs.a, prev1 = inputs.b;
  for (std::size_t k = 0; k < count; ++k) {
    LayerOutput out = run(k, prev2, prev1);
    prev2 = k == 0 ? out.cell : prev1;
    prev1 = out.cell;
    outs.push_back(out);
  }
  return outs;
}

}  // namespace

SuperNet::SuperNet(SuperNetConfig config, std::uint64_t seed)
    : config_(std::move(config)), topology_(config_.nodes) {
  if (config_.k_max == 0) throw ConfigError("k_max must be positive");
  if (config_.embed_dim == 0 || config_.vocab_size == 0 || config_.num_classes < 2) {
    throw ConfigError("supernet needs positive embed_dim, vocab_size and at least 2 classes");
  }
  if (config_.candidates.empty()) throw ConfigError("empty candidate operation set");
  Rng rng(seed);
  embedding = Parameter("embedding", uniform_fan_in({config_.vocab_size, config_.embed_dim}, 1, rng));
  std::vector<std::vector<OperationKind>> ops(topology_.num_edges(), config_.candidates);
  layers.reserve(config_.k_max);
  for (std::size_t k = 0; k < config_.k_max; ++k) {
    layers.emplace_back("layer" + std::to_string(k + 1), topology_, ops, config_.embed_dim,
                        config_.num_classes, rng);
  }
  arch = ArchParams(config_.k_max, topology_.num_edges(), config_.candidates.size(), config_.tau);
}

NetworkOutput SuperNet::forward(Tape& tape, const EncodedBatch& batch, const ArchSample& sample,
                                BnMode bn) {
  if (sample.layers.value().size() != config_.k_max) {
    throw DimensionError("layer sample has wrong length");
  }
  const InputPair inputs = embed_inputs(tape, embedding, batch);
  NetworkOutput out;
  out.layers = stack_layers(inputs, config_.k_max, [&](std::size_t k, Var p2, Var p1) {
    Var cell = cell_forward(tape, topology_, layers[k], p2, p1, sample.edges, sample.mode, bn);
    return summarize_layer(tape, layers[k], cell);
  });
  std::vector<Var> logits;
  for (const auto& l : out.layers) logits.push_back(l.logits);
  out.logits = weighted_sum(logits, sample.layers);
  return out;
}

std::vector<Parameter*> SuperNet::weight_parameters() {
  std::vector<Parameter*> out{&embedding};
  for (auto& layer : layers)
    for (auto* p : layer.parameters()) out.push_back(p);
  return out;
}

std::vector<BatchNormStats*> SuperNet::batchnorm_stats() {
  std::vector<BatchNormStats*> out;
  for (auto& layer : layers)
    for (auto& edge : layer.edges)
      for (auto& block : edge.blocks)
        if (block) out.push_back(&block->stats);
  return out;
}

void ChildGraph::validate() const {
  const CellTopology topology(nodes);
  if (k < 1) throw ValidationError("child depth K must be at least 1");
  if (ops.size() != topology.num_edges()) {
    throw ValidationError("child lists " + std::to_string(ops.size()) + " operations, topology has " +
                          std::to_string(topology.num_edges()) + " edges");
  }
  for (auto op : ops) {
    if (static_cast<std::size_t>(op) >= kNumOperations) {
      throw ValidationError("child references an operation outside the candidate set");
    }
  }
}

std::string ChildGraph::to_json() const {
  validate();
  const CellTopology topology(nodes);
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["task_type"] = task_type_name(task_type);
  j["K"] = k;
  j["N"] = nodes;
  j["embed_dim"] = embed_dim;
  j["edges"] = nlohmann::ordered_json::array();
  for (std::size_t e = 0; e < ops.size(); ++e) {
    nlohmann::ordered_json rec;
    rec["from"] = topology.edges()[e].from;
    rec["to"] = topology.edges()[e].to;
    rec["op"] = operation_name(ops[e]);
    j["edges"].push_back(rec);
  }
  return j.dump(2) + "\n";
}

ChildGraph ChildGraph::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("child file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) {
      throw ValidationError("unsupported child schema version " + j.at("schema_version").dump());
    }
    ChildGraph g;
    g.task_type = parse_task_type(j.at("task_type").get<std::string>());
    g.k = j.at("K").get<std::size_t>();
    g.nodes = j.at("N").get<std::size_t>();
    g.embed_dim = j.at("embed_dim").get<std::size_t>();
    const CellTopology topology(g.nodes);
    const auto& edges = j.at("edges");
    if (edges.size() != topology.num_edges()) {
      throw ValidationError("child lists " + std::to_string(edges.size()) + " edges, expected " +
                            std::to_string(topology.num_edges()));
    }
    for (std::size_t e = 0; e < edges.size(); ++e) {
      const Edge expect = topology.edges()[e];
      const Edge got{edges[e].at("from").get<std::size_t>(), edges[e].at("to").get<std::size_t>()};
      if (!(got == expect)) {
        throw ValidationError("edge " + std::to_string(e) + " is (" + std::to_string(got.from) + "," +
                              std::to_string(got.to) + "), expected (" + std::to_string(expect.from) +
                              "," + std::to_string(expect.to) + ")");
      }
      g.ops.push_back(parse_operation(edges[e].at("op").get<std::string>()));
    }
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed child file: ") + e.what());
  } catch (const ConfigError& e) {
    throw ValidationError(e.what());
  }
}

void ChildGraph::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write child file " + path.string());
  out << to_json();
}

ChildGraph ChildGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open child file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string ChildGraph::encoding() const {
  std::string s = "K" + std::to_string(k) + ":";
  for (std::size_t e = 0; e < ops.size(); ++e) {
    if (e) s += ',';
    s += operation_name(ops[e]);
  }
  return s;
}

ChildGraph derive_child(const ArchParams& arch, const SuperNetConfig& config) {
  if (arch.num_ops() != config.candidates.size()) {
    throw DimensionError("architecture logits do not match the candidate set");
  }
  ChildGraph g;
  g.task_type = config.task_type;
  g.k = argmax(arch.theta_k.value.data()) + 1;
  g.nodes = config.nodes;
  g.embed_dim = config.embed_dim;
  const std::size_t n = arch.num_ops();
  for (std::size_t e = 0; e < arch.num_edges(); ++e) {
    g.ops.push_back(config.candidates[argmax(arch.theta_o.value.data().subspan(e * n, n))]);
  }
  return g;
}

ArchParams peaked_params(const ChildGraph& child, const SuperNetConfig& config, double peak) {
  const CellTopology topology(config.nodes);
  ArchParams arch(config.k_max, topology.num_edges(), config.candidates.size(), config.tau);
  if (child.k < 1 || child.k > config.k_max) throw ValidationError("child depth outside [1, K_max]");
  arch.theta_k.value[child.k - 1] = peak;
  for (std::size_t e = 0; e < child.ops.size(); ++e) {
    auto it = std::find(config.candidates.begin(), config.candidates.end(), child.ops[e]);
    if (it == config.candidates.end()) throw ValidationError("child op not among the candidates");
    arch.theta_o.value[e * config.candidates.size() + (it - config.candidates.begin())] = peak;
  }
  return arch;
}

ChildNet::ChildNet(ChildGraph graph, std::size_t vocab_size, std::size_t num_classes,
                   std::uint64_t seed)
    : graph_(std::move(graph)), topology_(graph_.nodes) {
  graph_.validate();
  Rng rng(seed);
  embedding = Parameter("embedding", uniform_fan_in({vocab_size, graph_.embed_dim}, 1, rng));
  std::vector<std::vector<OperationKind>> ops;
  for (auto op : graph_.ops) ops.push_back({op});
  layers.reserve(graph_.k);
  for (std::size_t k = 0; k < graph_.k; ++k) {
    layers.emplace_back("layer" + std::to_string(k + 1), topology_, ops, graph_.embed_dim,
                        num_classes, rng);
  }
}

NetworkOutput ChildNet::forward(Tape& tape, const EncodedBatch& batch, BnMode bn) {
  const InputPair inputs = embed_inputs(tape, embedding, batch);
  NetworkOutput out;
  out.layers = stack_layers(inputs, graph_.k, [&](std::size_t k, Var p2, Var p1) {
    Var cell = cell_forward(tape, topology_, layers[k], p2, p1, {}, SampleMode::hard, bn);
    return summarize_layer(tape, layers[k], cell);
  });
  out.logits = out.layers.back().logits;
  return out;
}

void ChildNet::copy_weights_from(const SuperNet& net) {
  if (net.config().embed_dim != graph_.embed_dim || net.config().nodes != graph_.nodes ||
      net.config().k_max < graph_.k) {
    throw ValidationError("supernet shape does not match the child");
  }
  embedding.value = net.embedding.value;
  for (std::size_t k = 0; k < graph_.k; ++k) {
    const CellLayer& src = net.layers[k];
    CellLayer& dst = layers[k];
    for (std::size_t e = 0; e < graph_.ops.size(); ++e) {
      const EdgeOps& from = src.edges[e];
      auto it = std::find(from.ops.begin(), from.ops.end(), graph_.ops[e]);
      if (it == from.ops.end()) throw ValidationError("child op not present in the supernet");
      const auto idx = static_cast<std::size_t>(it - from.ops.begin());
      if (from.blocks[idx]) {
        ConvBlock& b = *dst.edges[e].blocks[0];
        const ConvBlock& s = *from.blocks[idx];
        b.kernel.value = s.kernel.value;
        b.bias.value = s.bias.value;
        b.gamma.value = s.gamma.value;
        b.beta.value = s.beta.value;
        b.stats = s.stats;
      }
    }
    dst.node_attention.value = src.node_attention.value;
    dst.seq_attention.value = src.seq_attention.value;
    dst.probe.weight.value = src.probe.weight.value;
    dst.probe.bias.value = src.probe.bias.value;
  }
}

std::vector<Parameter*> ChildNet::parameters() {
  std::vector<Parameter*> out{&embedding};
  for (auto& layer : layers)
    for (auto* p : layer.parameters()) out.push_back(p);
  return out;
}

std::vector<BatchNormStats*> ChildNet::batchnorm_stats() {
  std::vector<BatchNormStats*> out;
  for (auto& layer : layers)
    for (auto& edge : layer.edges)
      for (auto& block : edge.blocks)
        if (block) out.push_back(&block->stats);
  return out;
}

std::size_t ChildNet::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

}  // namespace adanas
