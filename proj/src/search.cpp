// SPDX-License-Identifier: Apache-2.0
#include "adanas/search.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "adanas/errors.hpp"
#include "binio.hpp"

namespace adanas {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view tau_decay_name(TauDecay d) noexcept {
  return d == TauDecay::linear ? "linear" : "exponential";
}

TauDecay parse_tau_decay(std::string_view name) {
  if (name == "linear") return TauDecay::linear;
  if (name == "exponential") return TauDecay::exponential;
  throw ConfigError("unknown tau decay '" + std::string(name) + "' (expected linear or exponential)");
}

void SearchConfig::validate() const {
  if (k_max == 0) throw ConfigError("k_max must be at least 1");
  if (nodes == 0) throw ConfigError("nodes must be at least 1");
  if (embed_dim == 0) throw ConfigError("embed_dim must be at least 1");
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  if (candidates.empty()) throw ConfigError("candidate operation set is empty");
  if (std::set<OperationKind>(candidates.begin(), candidates.end()).size() != candidates.size()) {
    throw ConfigError("candidate operation set has duplicates");
  }
  loss().validate();
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(tau_start > 0.0) || !(tau_end > 0.0)) throw ConfigError("tau_start and tau_end must be positive");
  if (!(weight_lr_max > 0.0) || !(weight_lr_min > 0.0) || weight_lr_min > weight_lr_max) {
    throw ConfigError("weight learning rates must satisfy 0 < weight_lr_min <= weight_lr_max");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(arch_lr > 0.0)) throw ConfigError("arch_lr must be positive");
  if (!(weight_decay >= 0.0) || !(arch_weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
}

SuperNetConfig SearchConfig::supernet(TaskType task, std::size_t vocab_size, std::size_t num_classes) const {
  SuperNetConfig c;
  c.task_type = task;
  c.k_max = k_max;
  c.nodes = nodes;
  c.embed_dim = embed_dim;
  c.vocab_size = vocab_size;
  c.num_classes = num_classes;
  c.candidates = candidates;
  c.tau = tau_start;
  return c;
}

double SearchConfig::tau_at(std::size_t epoch) const {
  if (epochs <= 1) return tau_start;
  const double t = static_cast<double>(std::min(epoch, epochs - 1)) / static_cast<double>(epochs - 1);
  if (tau_decay == TauDecay::linear) return tau_start + (tau_end - tau_start) * t;
  return tau_start * std::pow(tau_end / tau_start, t);
}

std::string SearchConfig::to_json() const {
  ordered_json j;
  j["k_max"] = k_max;
  j["nodes"] = nodes;
  j["embed_dim"] = embed_dim;
  j["max_len"] = max_len;
  j["candidates"] = json::array();
  for (auto op : candidates) j["candidates"].push_back(operation_name(op));
  j["gamma"] = gamma;
  j["beta"] = beta;
  j["temperature"] = temperature;
  j["epochs"] = epochs;
  j["tau_start"] = tau_start;
  j["tau_end"] = tau_end;
  j["tau_decay"] = tau_decay_name(tau_decay);
  j["weight_lr_max"] = weight_lr_max;
  j["weight_lr_min"] = weight_lr_min;
  j["momentum"] = momentum;
  j["weight_decay"] = weight_decay;
  j["arch_lr"] = arch_lr;
  j["arch_weight_decay"] = arch_weight_decay;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  return j.dump(2);
}

SearchConfig SearchConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("search config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("search config must be a JSON object");
  SearchConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "k_max") c.k_max = value.get<std::size_t>();
      else if (key == "nodes") c.nodes = value.get<std::size_t>();
      else if (key == "embed_dim") c.embed_dim = value.get<std::size_t>();
      else if (key == "max_len") c.max_len = value.get<std::size_t>();
      else if (key == "candidates") {
        c.candidates.clear();
        for (const auto& name : value) c.candidates.push_back(parse_operation(name.get<std::string>()));
      }
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "temperature") c.temperature = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "tau_start") c.tau_start = value.get<double>();
      else if (key == "tau_end") c.tau_end = value.get<double>();
      else if (key == "tau_decay") c.tau_decay = parse_tau_decay(value.get<std::string>());
      else if (key == "weight_lr_max") c.weight_lr_max = value.get<double>();
      else if (key == "weight_lr_min") c.weight_lr_min = value.get<double>();
      else if (key == "momentum") c.momentum = value.get<double>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "arch_lr") c.arch_lr = value.get<double>();
      else if (key == "arch_weight_decay") c.arch_weight_decay = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError("unknown search config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("bad value for search config key '" + key + "': " + e.what());
    } catch (const ValidationError& e) {
      throw ConfigError("bad value for search config key '" + key + "': " + e.what());
    }
  }
  return c;
}

ChildCost child_cost(const ChildGraph& child, std::size_t vocab_size, std::size_t num_classes,
                     std::size_t seq_len) {
  child.validate();
  const std::size_t C = child.embed_dim;
  const CostTable& table = build_cost_table(C, seq_len);
  ChildCost cost;
  cost.embedding = vocab_size * C;
  std::size_t cell_params = 0, cell_flops = 0;
  for (auto op : child.ops) {
    cell_params += table.at(op).raw_params;
    cell_flops += table.at(op).raw_flops;
  }
  const std::size_t probe = num_classes * C + num_classes;
  cost.cell_ops = child.k * cell_params;
  cost.cell_flops = child.k * cell_flops;
  cost.attention = child.k * 2 * C;
  cost.head = probe;
  cost.aux_probes = (child.k - 1) * probe;
  return cost;
}

namespace {

double entropy(std::span<const double> logits) {
  double h = 0.0;
  for (double p : softmax_values(logits)) h -= p > 0.0 ? p * std::log(p) : 0.0;
  return h;
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor t({labels.size(), classes}, 0.0);
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw DataError("label " + std::to_string(labels[b]) + " outside [0, " + std::to_string(classes) + ")");
    }
    t[b * classes + static_cast<std::size_t>(labels[b])] = 1.0;
  }
  return t;
}

ordered_json record_to_json(const EpochRecord& r) {
  ordered_json j;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  j["ce"] = r.ce;
  j["kd"] = r.kd;
  j["eff"] = r.eff;
  j["max_decomposition_error"] = r.max_decomposition_error;
  j["tau"] = r.tau;
  j["weight_lr"] = r.weight_lr;
  j["entropy_k"] = r.entropy_k;
  j["entropy_o"] = r.entropy_o;
  j["child"] = r.child.encoding();
  j["child_graph"] = json::parse(r.child.to_json());
  j["child_params"] = r.child_params;
  j["child_flops"] = r.child_flops;
  return j;
}

EpochRecord record_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.loss = j.at("loss").get<double>();
  r.ce = j.at("ce").get<double>();
  r.kd = j.at("kd").get<double>();
  r.eff = j.at("eff").get<double>();
  r.max_decomposition_error = j.at("max_decomposition_error").get<double>();
  r.tau = j.at("tau").get<double>();
  r.weight_lr = j.at("weight_lr").get<double>();
  r.entropy_k = j.at("entropy_k").get<double>();
  r.entropy_o = j.at("entropy_o").get<double>();
  r.child = ChildGraph::from_json(j.at("child_graph").dump());
  r.child_params = j.at("child_params").get<std::size_t>();
  r.child_flops = j.at("child_flops").get<std::size_t>();
  return r;
}

Var zero_scalar(Tape& tape) { return tape.constant(Tensor::scalar(0.0)); }

Var kd_term(Tape& tape, const TeacherKnowledge* teacher, const NetworkOutput& out, const EncodedBatch& batch,
            std::size_t k, double temperature) {
  if (!teacher) return zero_scalar(tape);
  std::vector<Var> logits;
  for (std::size_t i = 0; i < k; ++i) logits.push_back(out.layers[i].logits);
  return attentive_kd_loss(teacher->batch(batch.example_ids), logits, batch.labels, k, temperature);
}

void check_teacher(const TeacherKnowledge* teacher, const Dataset& data) {
  if (!teacher) return;
  if (teacher->num_classes() != data.num_classes) {
    throw DataError("teacher has " + std::to_string(teacher->num_classes()) + " classes, dataset has " +
                    std::to_string(data.num_classes));
  }
  for (const Example* e : data.split(Split::train)) (void)teacher->view().index_of(e->id);
}

template <typename StepFn>
void for_each_batch(std::vector<const Example*>& examples, std::size_t batch_size, StepFn&& fn) {
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, examples.size() - start);
    fn(std::span<const Example* const>(examples.data() + start, n));
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::string_view kCheckpointMagic = "ADNS";
constexpr std::string_view kWeightsMagic = "ADNW";
constexpr std::uint64_t kBinaryVersion = 1;

void write_stats(binio::Writer& w, const std::vector<BatchNormStats*>& stats) {
  w.u64(stats.size());
  for (const auto* s : stats) {
    w.doubles(s->running_mean);
    w.doubles(s->running_var);
  }
}

void read_stats(binio::Reader& r, const std::vector<BatchNormStats*>& stats) {
  if (r.u64() != stats.size()) throw DataError(r.where() + ": batch-norm layout mismatch");
  for (auto* s : stats) {
    auto mean = r.doubles();
    auto var = r.doubles();
    if (mean.size() != s->running_mean.size() || var.size() != s->running_var.size()) {
      throw DataError(r.where() + ": batch-norm shape mismatch");
    }
    s->running_mean = std::move(mean);
    s->running_var = std::move(var);
  }
}

void write_params(binio::Writer& w, const std::vector<Parameter*>& params) {
  w.u64(params.size());
  for (const auto* p : params) {
    w.str(p->name);
    w.tensor(p->value);
  }
}

void read_params(binio::Reader& r, const std::vector<Parameter*>& params) {
  if (r.u64() != params.size()) throw DataError(r.where() + ": parameter layout mismatch");
  for (auto* p : params) {
    const std::string name = r.str();
    Tensor value = r.tensor();
    if (name != p->name || value.shape() != p->value.shape()) {
      throw DataError(r.where() + ": parameter '" + name + "' does not match '" + p->name + "'");
    }
    p->value = std::move(value);
    p->zero_grad();
  }
}

void write_tensors(binio::Writer& w, const std::vector<Tensor>& ts) {
  w.u64(ts.size());
  for (const auto& t : ts) w.tensor(t);
}

std::vector<Tensor> read_tensors(binio::Reader& r) {
  std::vector<Tensor> ts(r.u64());
  for (auto& t : ts) t = r.tensor();
  return ts;
}

}  // namespace

std::string SearchRunReport::to_jsonl() const {
  std::string out;
  for (const auto& r : epochs) out += record_to_json(r).dump() + "\n";
  ordered_json fin;
  fin["final"] = true;
  fin["seed"] = seed;
  fin["epochs"] = epochs.size();
  fin["child"] = child.encoding();
  fin["child_graph"] = json::parse(child.to_json());
  out += fin.dump() + "\n";
  return out;
}

SearchSession::SearchSession(SearchConfig config, const Dataset& data,
                             std::shared_ptr<const TeacherKnowledge> teacher)
    : config_(std::move(config)),
      data_(&data),
      teacher_(std::move(teacher)),
      weight_opt_(config_.momentum, config_.weight_decay),
      arch_opt_(config_.arch_lr, config_.arch_weight_decay),
      rng_(mix_seed(config_.seed, 1)) {
  config_.validate();
  if (config_.gamma > 0.0 && !teacher_) throw ConfigError("gamma > 0 needs a teacher");
  if (config_.gamma == 0.0) teacher_.reset();
  if (data.split(Split::train).empty()) throw DataError("dataset has no train examples");
  check_teacher(teacher_.get(), data);
  vocab_ = Vocab::build(data, config_.max_len);
  net_ = std::make_unique<SuperNet>(config_.supernet(data.task_type, vocab_.size(), data.num_classes),
                                    config_.seed);
}

StepLosses SearchSession::step(std::span<const Example* const> examples, double weight_lr) {
  const EncodedBatch batch = encode_batch(vocab_, examples, data_->task_type);
  Tape tape;
  const ArchSample sample = sample_architecture(tape, net_->arch, rng_, SampleMode::hard);
  const NetworkOutput out = net_->forward(tape, batch, sample, BnMode::train);
  StepLosses s;
  s.sampled_k = argmax(sample.layers.value().data()) + 1;
  Var ce = softmax_xent(out.logits, one_hot(batch.labels, data_->num_classes));
  Var kd = kd_term(tape, teacher_.get(), out, batch, s.sampled_k, config_.temperature);
  Var eff = config_.beta > 0.0 ? efficiency_loss(sample.layers, sample.edges, config_.candidates,
                                                 build_cost_table(config_.embed_dim, config_.max_len))
                               : zero_scalar(tape);
  Var total = total_loss(ce, kd, eff, config_.loss());
  s.ce = ce.value()[0];
  s.kd = kd.value()[0];
  s.eff = eff.value()[0];
  s.total = total.value()[0];
  if (!std::isfinite(s.total)) {
    throw TrainingError("non-finite search loss (ce=" + std::to_string(s.ce) + ", kd=" + std::to_string(s.kd) +
                        ", eff=" + std::to_string(s.eff) + ") in epoch " + std::to_string(records_.size() + 1));
  }
  tape.backward(total);
  weight_opt_.step(net_->weight_parameters(), weight_lr);
  arch_opt_.step(net_->arch_parameters());
  return s;
}

EpochRecord SearchSession::run_epoch() {
  if (finished()) throw ValidationError("search already ran every epoch");
  const std::size_t e = records_.size();
  EpochRecord rec;
  rec.epoch = e + 1;
  rec.tau = config_.tau_at(e);
  rec.weight_lr = cosine_lr(e, config_.epochs, config_.weight_lr_max, config_.weight_lr_min);
  net_->arch.tau = rec.tau;

  std::vector<const Example*> train = data_->split(Split::train);
  std::shuffle(train.begin(), train.end(), rng_);
  std::size_t steps = 0;
  const LossConfig lc = config_.loss();
  for_each_batch(train, config_.batch_size, [&](std::span<const Example* const> part) {
    const StepLosses s = step(part, rec.weight_lr);
    rec.loss += s.total;
    rec.ce += s.ce;
    rec.kd += s.kd;
    rec.eff += s.eff;
    rec.max_decomposition_error =
        std::max(rec.max_decomposition_error, std::abs(s.total - total_loss(s.ce, s.kd, s.eff, lc)));
    ++steps;
  });
  const double n = static_cast<double>(steps);
  rec.loss /= n;
  rec.ce /= n;
  rec.kd /= n;
  rec.eff /= n;

  const ArchParams& arch = net_->arch;
  rec.entropy_k = entropy(arch.theta_k.value.data());
  for (std::size_t edge = 0; edge < arch.num_edges(); ++edge) {
    rec.entropy_o += entropy(arch.theta_o.value.data().subspan(edge * arch.num_ops(), arch.num_ops()));
  }
  rec.entropy_o /= static_cast<double>(arch.num_edges());
  rec.child = derive_child(arch, net_->config());
  const ChildCost cost = child_cost(rec.child, vocab_.size(), data_->num_classes, config_.max_len);
  rec.child_params = cost.total_params();
  rec.child_flops = cost.cell_flops;
  spdlog::info("search epoch {}/{}: loss {:.6f} (ce {:.6f}, kd {:.6f}, eff {:.6f}) tau {:.3f} H(K) {:.4f} "
               "H(o) {:.4f} child {}",
               rec.epoch, config_.epochs, rec.loss, rec.ce, rec.kd, rec.eff, rec.tau, rec.entropy_k, rec.entropy_o,
               rec.child.encoding());
  records_.push_back(rec);
  return rec;
}

SearchRunReport SearchSession::report() const {
  SearchRunReport r;
  r.seed = config_.seed;
  r.epochs = records_;
  r.child = derive_child(net_->arch, net_->config());
  return r;
}

void SearchSession::save_checkpoint(const std::filesystem::path& path) const {
  binio::Writer w;
  w.magic(kCheckpointMagic);
  w.u64(kBinaryVersion);
  w.str(config_.to_json());
  w.str(task_type_name(data_->task_type));
  ordered_json records = ordered_json::array();
  for (const auto& r : records_) records.push_back(record_to_json(r));
  w.str(records.dump());
  std::ostringstream rng;
  rng << rng_;
  w.str(rng.str());
  write_params(w, net_->weight_parameters());
  write_params(w, net_->arch_parameters());
  w.f64(net_->arch.tau);
  write_stats(w, net_->batchnorm_stats());
  write_tensors(w, weight_opt_.velocity());
  w.u64(arch_opt_.steps());
  write_tensors(w, arch_opt_.first_moment());
  write_tensors(w, arch_opt_.second_moment());
  w.save(path);
}

void SearchSession::load_checkpoint(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic(kCheckpointMagic);
  if (r.u64() != kBinaryVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  if (r.str() != config_.to_json()) throw DataError(path.string() + ": checkpoint was written under another config");
  if (r.str() != task_type_name(data_->task_type)) throw DataError(path.string() + ": checkpoint is for another task type");
  std::vector<EpochRecord> records;
  try {
    for (const auto& j : json::parse(r.str())) records.push_back(record_from_json(j));
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": corrupt epoch records: " + e.what());
  }
  std::istringstream rng(r.str());
  Rng restored;
  rng >> restored;
  if (!rng) throw DataError(path.string() + ": corrupt RNG state");
  read_params(r, net_->weight_parameters());
  read_params(r, net_->arch_parameters());
  net_->arch.tau = r.f64();
  read_stats(r, net_->batchnorm_stats());
  weight_opt_.velocity() = read_tensors(r);
  arch_opt_.set_steps(r.u64());
  arch_opt_.first_moment() = read_tensors(r);
  arch_opt_.second_moment() = read_tensors(r);
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes in checkpoint");
  records_ = std::move(records);
  rng_ = restored;
}

CheckpointArchitecture read_checkpoint_architecture(const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic(kCheckpointMagic);
  if (r.u64() != kBinaryVersion) throw DataError(path.string() + ": unsupported checkpoint version");
  CheckpointArchitecture out;
  try {
    out.config = SearchConfig::from_json(r.str());
    out.task_type = parse_task_type(r.str());
  } catch (const Error& e) {
    throw DataError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
  out.epochs_done = json::parse(r.str(), nullptr, false).size();
  (void)r.str();  // RNG state
  for (std::uint64_t n = r.u64(); n > 0; --n) {
    (void)r.str();
    (void)r.tensor();
  }
  const CellTopology topology(out.config.nodes);
  out.arch = ArchParams(out.config.k_max, topology.num_edges(), out.config.candidates.size(), out.config.tau_start);
  std::vector<Parameter*> arch{&out.arch.theta_k, &out.arch.theta_o};
  read_params(r, arch);
  out.arch.tau = r.f64();
  return out;
}

ChildGraph derive_from_checkpoint(const std::filesystem::path& path) {
  const CheckpointArchitecture c = read_checkpoint_architecture(path);
  SuperNetConfig sc = c.config.supernet(c.task_type, 1, 2);
  return derive_child(c.arch, sc);
}

SearchRunReport search(const SearchConfig& config, const Dataset& data,
                       std::shared_ptr<const TeacherKnowledge> teacher, const SearchOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  SearchSession session(config, data, std::move(teacher));
  std::string last_good = "none";
  if (options.resume && options.checkpoint && std::filesystem::exists(*options.checkpoint)) {
    session.load_checkpoint(*options.checkpoint);
    last_good = options.checkpoint->string();
    spdlog::info("resumed search from {} after epoch {}", last_good, session.epochs_done());
  }
  while (!session.finished()) {
    try {
      session.run_epoch();
    } catch (const TrainingError& e) {
      throw TrainingError(std::string(e.what()) + "; last good checkpoint: " + last_good);
    }
    if (options.checkpoint) {
      session.save_checkpoint(*options.checkpoint);
      last_good = options.checkpoint->string();
    }
  }
  SearchRunReport report = session.report();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

EvalResult evaluate(ChildNet& net, const Vocab& vocab, const Dataset& data, Split split, std::size_t batch_size) {
  std::vector<const Example*> examples = data.split(split);
  if (examples.empty()) throw ValidationError("cannot evaluate on an empty split");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  EvalResult r;
  r.class_total.assign(data.num_classes, 0);
  r.class_correct.assign(data.num_classes, 0);
  double loss = 0.0;
  for_each_batch(examples, batch_size, [&](std::span<const Example* const> part) {
    const EncodedBatch batch = encode_batch(vocab, part, data.task_type);
    Tape tape;
    const NetworkOutput out = net.forward(tape, batch, BnMode::eval);
    const std::size_t C = out.logits.shape()[1];
    if (C != data.num_classes) throw DataError("child predicts a different number of classes than the dataset");
    for (std::size_t b = 0; b < batch.batch; ++b) {
      const auto z = out.logits.value().data().subspan(b * C, C);
      const auto y = static_cast<std::size_t>(batch.labels[b]);
      if (y >= C) throw DataError("label outside the class range");
      const double zmax = *std::max_element(z.begin(), z.end());
      double s = 0.0;
      for (double v : z) s += std::exp(v - zmax);
      loss += zmax + std::log(s) - z[y];
      ++r.class_total[y];
      if (argmax(z) == y) {
        ++r.class_correct[y];
        ++r.correct;
      }
    }
  });
  r.total = examples.size();
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  r.mean_loss = loss / static_cast<double>(r.total);
  return r;
}

TrainedChild train_child(const ChildGraph& child, const Dataset& data, const SearchConfig& config,
                         std::shared_ptr<const TeacherKnowledge> teacher) {
  config.validate();
  if (child.task_type != data.task_type) throw ConfigError("child and dataset disagree on the task type");
  if (config.gamma > 0.0 && !teacher) throw ConfigError("gamma > 0 needs a teacher");
  if (config.gamma == 0.0) teacher.reset();
  std::vector<const Example*> train = data.split(Split::train);
  if (train.empty()) throw DataError("dataset has no train examples");
  if (data.split(Split::dev).empty()) throw ValidationError("cannot train a child without a dev split");
  check_teacher(teacher.get(), data);

  TrainedChild out;
  out.vocab = Vocab::build(data, config.max_len);
  out.net = std::make_unique<ChildNet>(child, out.vocab.size(), data.num_classes, config.seed);
  ChildNet& net = *out.net;
  Sgd opt(config.momentum, config.weight_decay);
  Rng rng(mix_seed(config.seed, 2));
  const LossConfig lc{config.gamma, 0.0, config.temperature};
  auto params = net.parameters();
  auto stats = net.batchnorm_stats();

  std::vector<Tensor> best_values;
  std::vector<BatchNormStats> best_stats;
  ChildTrainResult& res = out.result;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const double lr = cosine_lr(e, config.epochs, config.weight_lr_max, config.weight_lr_min);
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for_each_batch(train, config.batch_size, [&](std::span<const Example* const> part) {
      const EncodedBatch batch = encode_batch(out.vocab, part, data.task_type);
      Tape tape;
      const NetworkOutput o = net.forward(tape, batch, BnMode::train);
      Var ce = softmax_xent(o.logits, one_hot(batch.labels, data.num_classes));
      Var kd = kd_term(tape, teacher.get(), o, batch, child.k, config.temperature);
      Var loss = total_loss(ce, kd, zero_scalar(tape), lc);
      const double v = loss.value()[0];
      if (!std::isfinite(v)) {
        throw TrainingError("non-finite child loss in epoch " + std::to_string(e + 1) + " for " + child.encoding());
      }
      tape.backward(loss);
      opt.step(params, lr);
      loss_sum += v;
      ++steps;
    });
    const EvalResult dev = evaluate(net, out.vocab, data, Split::dev);
    res.train_loss.push_back(loss_sum / static_cast<double>(steps));
    res.dev_accuracy.push_back(dev.accuracy);
    res.dev_loss.push_back(dev.mean_loss);
    const bool better = res.best_epoch == 0 || dev.accuracy > res.best_dev_accuracy ||
                        (dev.accuracy == res.best_dev_accuracy && dev.mean_loss < res.best_dev_loss);
    if (better) {
      res.best_epoch = e + 1;
      res.best_dev_accuracy = dev.accuracy;
      res.best_dev_loss = dev.mean_loss;
      best_values.clear();
      for (const auto* p : params) best_values.push_back(p->value);
      best_stats.clear();
      for (const auto* s : stats) best_stats.push_back(*s);
    }
    spdlog::debug("child {} epoch {}: train loss {:.6f}, dev acc {:.4f}, dev loss {:.6f}", child.encoding(), e + 1,
                  res.train_loss.back(), dev.accuracy, dev.mean_loss);
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_values[i];
  for (std::size_t i = 0; i < stats.size(); ++i) *stats[i] = best_stats[i];
  return out;
}

void save_child_weights(ChildNet& net, const std::filesystem::path& path) {
  binio::Writer w;
  w.magic(kWeightsMagic);
  w.u64(kBinaryVersion);
  w.str(net.graph().to_json());
  write_params(w, net.parameters());
  write_stats(w, net.batchnorm_stats());
  w.save(path);
}

void load_child_weights(ChildNet& net, const std::filesystem::path& path) {
  binio::Reader r(path);
  r.expect_magic(kWeightsMagic);
  if (r.u64() != kBinaryVersion) throw DataError(path.string() + ": unsupported weights version");
  if (r.str() != net.graph().to_json()) throw DataError(path.string() + ": weights belong to another child");
  read_params(r, net.parameters());
  read_stats(r, net.batchnorm_stats());
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes in weights file");
}

std::size_t enumeration_size(const SearchConfig& config) {
  const std::size_t edges = CellTopology(config.nodes).num_edges();
  const std::size_t ops = config.candidates.size();
  std::size_t n = config.k_max;
  for (std::size_t e = 0; e < edges; ++e) {
    if (n > kEnumerationLimit * 1000) return n;
    n *= ops;
  }
  return n;
}

std::vector<ChildGraph> enumerate_children(const SearchConfig& config, TaskType task) {
  config.validate();
  const std::size_t total = enumeration_size(config);
  if (total > kEnumerationLimit) {
    throw GuardError("search space has " + std::to_string(total) + " children, above the enumeration limit of " +
                     std::to_string(kEnumerationLimit));
  }
  const std::size_t edges = CellTopology(config.nodes).num_edges();
  const std::size_t ops = config.candidates.size();
  std::vector<ChildGraph> out;
  out.reserve(total);
  for (std::size_t k = 1; k <= config.k_max; ++k) {
    for (std::size_t code = 0; code < total / config.k_max; ++code) {
      ChildGraph g;
      g.task_type = task;
      g.k = k;
      g.nodes = config.nodes;
      g.embed_dim = config.embed_dim;
      std::size_t c = code;
      for (std::size_t e = 0; e < edges; ++e) {
        g.ops.push_back(config.candidates[c % ops]);
        c /= ops;
      }
      out.push_back(std::move(g));
    }
  }
  std::sort(out.begin(), out.end(),
            [](const ChildGraph& a, const ChildGraph& b) { return a.encoding() < b.encoding(); });
  return out;
}

ChildGraph random_child(const SearchConfig& config, TaskType task, Rng& rng) {
  config.validate();
  ChildGraph g;
  g.task_type = task;
  g.nodes = config.nodes;
  g.embed_dim = config.embed_dim;
  g.k = std::uniform_int_distribution<std::size_t>(1, config.k_max)(rng);
  std::uniform_int_distribution<std::size_t> pick(0, config.candidates.size() - 1);
  for (std::size_t e = 0; e < CellTopology(config.nodes).num_edges(); ++e) g.ops.push_back(config.candidates[pick(rng)]);
  return g;
}

std::vector<RankedChild> enumerate_and_rank(const SearchConfig& config, const Dataset& data,
                                            std::shared_ptr<const TeacherKnowledge> teacher, std::size_t workers) {
  const std::vector<ChildGraph> children = enumerate_children(config, data.task_type);
  std::vector<RankedChild> ranked(children.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < children.size(); i = next++) {
      try {
        const TrainedChild t = train_child(children[i], data, config, teacher);
        ranked[i] = {children[i], t.result.best_dev_loss, t.result.best_dev_accuracy, t.result.best_epoch};
        spdlog::info("enumerated {} ({}/{}): dev loss {:.6f}, dev acc {:.4f}", children[i].encoding(), i + 1,
                     children.size(), ranked[i].dev_loss, ranked[i].dev_accuracy);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = children.size();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(workers, 1, children.size());
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n; ++t) threads.emplace_back(work);
  work();
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  std::sort(ranked.begin(), ranked.end(), [](const RankedChild& a, const RankedChild& b) {
    if (a.dev_loss != b.dev_loss) return a.dev_loss < b.dev_loss;
    return a.child.encoding() < b.child.encoding();
  });
  return ranked;
}

}  // namespace adanas
