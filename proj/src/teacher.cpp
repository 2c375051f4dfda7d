// SPDX-License-Identifier: Apache-2.0
#include "adanas/teacher.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "adanas/errors.hpp"
#include "adanas/ops.hpp"
#include "adanas/optim.hpp"

namespace adanas {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

std::string base64_encode(std::span<const unsigned char> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    for (int s : {18, 12, 6, 0}) out.push_back(kAlphabet[(n >> s) & 63]);
  }
  if (const std::size_t rest = bytes.size() - i; rest > 0) {
    std::uint32_t n = bytes[i] << 16;
    if (rest == 2) n |= bytes[i + 1] << 8;
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(rest == 2 ? kAlphabet[(n >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
  static const auto table = [] {
    std::array<int, 256> t{};
    t.fill(-1);
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) t[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
    return t;
  }();
  if (text.size() % 4 != 0) throw DataError("base64 length is not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        n <<= 6;
        continue;
      }
      const int v = table[static_cast<unsigned char>(c)];
      if (v < 0 || pad > 0) throw DataError("invalid base64 character");
      n = (n << 6) | static_cast<std::uint32_t>(v);
    }
    out.push_back(static_cast<unsigned char>((n >> 16) & 255));
    if (pad < 2) out.push_back(static_cast<unsigned char>((n >> 8) & 255));
    if (pad < 1) out.push_back(static_cast<unsigned char>(n & 255));
  }
  return out;
}

TeacherView::TeacherView(std::size_t layers, std::size_t hidden_dim, std::size_t num_classes)
    : layers_(layers), hidden_(hidden_dim), classes_(num_classes) {
  if (layers == 0 || hidden_dim == 0) throw DataError("teacher needs J >= 1 and H >= 1");
  if (num_classes < 2) throw DataError("teacher needs at least 2 classes");
}

void TeacherView::add(TeacherRecord record) {
  if (record.layers.size() != layers_ * hidden_) {
    throw DataError("record '" + record.id + "' holds " + std::to_string(record.layers.size()) +
                    " values, expected J*H = " + std::to_string(layers_ * hidden_));
  }
  if (record.label < 0 || static_cast<std::size_t>(record.label) >= classes_) {
    throw DataError("record '" + record.id + "' has label " + std::to_string(record.label) + " outside [0, " +
                    std::to_string(classes_) + ")");
  }
  if (index_.count(record.id)) throw DataError("duplicate record id '" + record.id + "'");
  for (auto& v : record.layers) {
    if (!std::isfinite(v)) throw DataError("record '" + record.id + "' has a non-finite value");
    v = round_f32(v);
  }
  index_.emplace(record.id, records_.size());
  records_.push_back(std::move(record));
}

bool TeacherView::contains(std::string_view id) const { return index_.count(std::string(id)) > 0; }

std::size_t TeacherView::index_of(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) throw DataError("teacher has no record with id '" + std::string(id) + "'");
  return it->second;
}

std::span<const double> TeacherView::state(std::size_t index, std::size_t j) const {
  if (j < 1 || j > layers_) throw DataError("teacher layer " + std::to_string(j) + " outside [1, J]");
  return std::span<const double>(records_.at(index).layers).subspan((j - 1) * hidden_, hidden_);
}

std::string TeacherView::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  const std::array<std::uint64_t, 3> header{layers_, hidden_, classes_};
  mix(header.data(), sizeof(header));
  for (const auto& r : records_) {
    mix(r.id.data(), r.id.size());
    mix(&r.label, sizeof(r.label));
    for (double v : r.layers) {
      const auto f = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      mix(&f, sizeof(f));
    }
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

void TeacherView::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write teacher file " + path.string());
  ordered_json header;
  header["schema_version"] = kSchemaVersion;
  header["J"] = layers_;
  header["H"] = hidden_;
  header["num_classes"] = classes_;
  header["pooling"] = "mean";
  header["example_count"] = records_.size();
  out << header.dump() << '\n';
  std::vector<unsigned char> bytes(hidden_ * 4);
  for (const auto& r : records_) {
    ordered_json rec;
    rec["id"] = r.id;
    rec["label"] = r.label;
    json layers = json::array();
    for (std::size_t j = 0; j < layers_; ++j) {
      for (std::size_t k = 0; k < hidden_; ++k) {
        const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(static_cast<float>(r.layers[j * hidden_ + k])));
        std::memcpy(bytes.data() + 4 * k, &bits, 4);
      }
      layers.push_back(base64_encode(bytes));
    }
    rec["layers"] = std::move(layers);
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("failed writing teacher file " + path.string());
}

TeacherView load_teacher(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open teacher file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty teacher file");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ":1: malformed header: " + e.what());
  }
  std::size_t J = 0, H = 0, classes = 0, count = 0;
  try {
    if (header.at("schema_version").get<int>() != TeacherView::kSchemaVersion) {
      throw DataError(path.string() + ":1: unsupported schema_version " + header.at("schema_version").dump());
    }
    if (header.at("pooling").get<std::string>() != "mean") {
      throw DataError(path.string() + ":1: unsupported pooling " + header.at("pooling").dump());
    }
    J = header.at("J").get<std::size_t>();
    H = header.at("H").get<std::size_t>();
    classes = header.at("num_classes").get<std::size_t>();
    count = header.at("example_count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw DataError(path.string() + ":1: malformed header: " + e.what());
  }
  TeacherView view(J, H, classes);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": malformed record (truncated file?): " + e.what());
    }
    TeacherRecord r;
    try {
      r.id = rec.at("id").get<std::string>();
      r.label = rec.at("label").get<int>();
      const auto& layers = rec.at("layers");
      if (!layers.is_array() || layers.size() != J) {
        throw DataError(where + ": record '" + r.id + "' has " + std::to_string(layers.size()) +
                        " layers, header says J=" + std::to_string(J));
      }
      r.layers.reserve(J * H);
      for (const auto& enc : layers) {
        std::vector<unsigned char> bytes;
        try {
          bytes = base64_decode(enc.get<std::string>());
        } catch (const DataError& e) {
          throw DataError(where + ": record '" + r.id + "': " + e.what());
        }
        if (bytes.size() != 4 * H) {
          throw DataError(where + ": record '" + r.id + "' has a layer of " + std::to_string(bytes.size() / 4) +
                          " floats, header says H=" + std::to_string(H));
        }
        for (std::size_t k = 0; k < H; ++k) {
          std::uint32_t bits = 0;
          std::memcpy(&bits, bytes.data() + 4 * k, 4);
          r.layers.push_back(static_cast<double>(std::bit_cast<float>(to_le(bits))));
        }
      }
    } catch (const json::exception& e) {
      throw DataError(where + ": malformed record: " + e.what());
    }
    try {
      view.add(std::move(r));
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  if (view.size() != count) {
    throw DataError(path.string() + ": header declares " + std::to_string(count) + " examples, file holds " +
                    std::to_string(view.size()) + " (truncated file?)");
  }
  return view;
}

namespace {

struct LabeledStates {
  std::vector<std::size_t> rows;  // view indices
  std::vector<int> labels;
};

LabeledStates collect(const TeacherView& view, const Dataset& data, Split split) {
  LabeledStates out;
  for (const Example* e : data.split(split)) {
    out.rows.push_back(view.index_of(e->id));
    out.labels.push_back(e->label);
  }
  return out;
}

double probe_accuracy(const LinearProbe& probe, const TeacherView& view, const LabeledStates& s, std::size_t j) {
  if (s.rows.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto p = probe.probabilities(view.state(s.rows[i], j));
    hits += static_cast<int>(argmax(p)) == s.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(s.rows.size());
}

Tensor one_hot_rows(std::span<const int> labels, std::size_t classes) {
  Tensor t({labels.size(), classes}, 0.0);
  for (std::size_t b = 0; b < labels.size(); ++b) t[b * classes + static_cast<std::size_t>(labels[b])] = 1.0;
  return t;
}

}  // namespace

void retrain_probe(ProbeSet& set, std::size_t j, const TeacherView& view, const Dataset& data,
                   const ProbeTrainingConfig& config) {
  if (j < 1 || j > view.layers()) throw ValidationError("probe index outside [1, J]");
  if (config.batch_size == 0) throw ConfigError("probe batch size must be positive");
  const LabeledStates train = collect(view, data, Split::train);
  const LabeledStates dev = collect(view, data, Split::dev);
  if (std::adjacent_find(train.labels.begin(), train.labels.end(), std::not_equal_to<>()) == train.labels.end()) {
    throw DegenerateError("probe training data holds a single class");
  }
  if (set.probes.size() < view.layers()) {
    set.probes.resize(view.layers());
    set.train_accuracy.resize(view.layers(), 0.0);
    set.dev_accuracy.resize(view.layers(), 0.0);
  }
  const std::size_t H = view.hidden_dim(), C = view.num_classes();
  Rng rng(config.seed * 1000003ULL + j);
  LinearProbe probe("probe" + std::to_string(j), H, C, rng);
  Adam adam(config.lr, config.weight_decay);
  std::vector<std::size_t> order(train.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, order.size() - start);
      Tensor x({B, H});
      std::vector<int> labels(B);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t i = order[start + b];
        auto s = view.state(train.rows[i], j);
        std::copy(s.begin(), s.end(), x.data().begin() + static_cast<std::ptrdiff_t>(b * H));
        labels[b] = train.labels[i];
      }
      Tape tape;
      Var loss = softmax_xent(probe.logits(tape, tape.constant(std::move(x))), one_hot_rows(labels, C));
      tape.backward(loss);
      adam.step(probe.parameters());
    }
  }
  set.train_accuracy[j - 1] = probe_accuracy(probe, view, train, j);
  set.dev_accuracy[j - 1] = probe_accuracy(probe, view, dev, j);
  set.probes[j - 1] = std::move(probe);
  set.epochs = config.epochs;
}

ProbeSet train_probes(const TeacherView& view, const Dataset& data, const ProbeTrainingConfig& config) {
  ProbeSet set;
  for (std::size_t j = 1; j <= view.layers(); ++j) retrain_probe(set, j, view, data, config);
  for (std::size_t j = 1; j <= view.layers(); ++j) {
    spdlog::debug("probe {}: train acc {:.4f}, dev acc {:.4f}", j, set.train_accuracy[j - 1], set.dev_accuracy[j - 1]);
  }
  return set;
}

TeacherKnowledge::TeacherKnowledge(std::shared_ptr<const TeacherView> view, ProbeSet probes)
    : view_(std::move(view)), probes_(std::move(probes)) {
  const std::size_t J = view_->layers(), N = view_->size(), C = view_->num_classes();
  if (probes_.probes.size() != J) throw DataError("probe set does not cover every teacher layer");
  probs_.resize(J * N * C);
  for (std::size_t j = 0; j < J; ++j) {
    const LinearProbe& probe = probes_.probes[j];
    if (probe.in_dim() != view_->hidden_dim() || probe.classes() != C) {
      throw DataError("probe " + std::to_string(j + 1) + " does not match the teacher shape");
    }
    for (std::size_t n = 0; n < N; ++n) {
      const auto p = probe.probabilities(view_->state(n, j + 1));
      std::copy(p.begin(), p.end(), probs_.begin() + static_cast<std::ptrdiff_t>((j * N + n) * C));
    }
  }
}

std::vector<std::vector<double>> TeacherKnowledge::probe_probs(std::span<const std::string> ids,
                                                               std::size_t j) const {
  if (j < 1 || j > layers()) throw DataError("teacher layer " + std::to_string(j) + " is missing");
  const std::size_t N = view_->size(), C = num_classes();
  std::vector<std::vector<double>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const std::size_t n = view_->index_of(id);
    const auto first = probs_.begin() + static_cast<std::ptrdiff_t>(((j - 1) * N + n) * C);
    out.emplace_back(first, first + static_cast<std::ptrdiff_t>(C));
  }
  return out;
}

TeacherBatch TeacherKnowledge::batch(std::span<const std::string> ids) const {
  const std::size_t J = layers(), N = view_->size(), C = num_classes(), B = ids.size();
  std::vector<std::size_t> rows;
  rows.reserve(B);
  for (const auto& id : ids) rows.push_back(view_->index_of(id));
  TeacherBatch t{J, C, {}};
  for (std::size_t j = 0; j < J; ++j) {
    Tensor p({B, C});
    for (std::size_t b = 0; b < B; ++b) {
      std::copy_n(probs_.begin() + static_cast<std::ptrdiff_t>((j * N + rows[b]) * C), C,
                  p.data().begin() + static_cast<std::ptrdiff_t>(b * C));
    }
    t.probs.push_back(std::move(p));
  }
  return t;
}

std::filesystem::path probe_cache_path(const std::filesystem::path& teacher_path) {
  return std::filesystem::path(teacher_path.string() + ".probes.json");
}

void TeacherKnowledge::save_cache(const std::filesystem::path& path) const {
  ordered_json j;
  j["schema_version"] = 1;
  j["teacher_hash"] = view_->content_hash();
  j["J"] = layers();
  j["H"] = view_->hidden_dim();
  j["num_classes"] = num_classes();
  j["epochs"] = probes_.epochs;
  j["train_accuracy"] = probes_.train_accuracy;
  j["dev_accuracy"] = probes_.dev_accuracy;
  json probes = json::array();
  for (const auto& p : probes_.probes) {
    probes.push_back({{"weight", p.weight.value.values()}, {"bias", p.bias.value.values()}});
  }
  j["probes"] = std::move(probes);
  j["probabilities"] = probs_;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write probe cache " + path.string());
  out << j.dump() << '\n';
}

std::unique_ptr<TeacherKnowledge> TeacherKnowledge::load_cache(std::shared_ptr<const TeacherView> view,
                                                               const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return nullptr;
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("malformed probe cache " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("teacher_hash").get<std::string>() != view->content_hash()) {
      spdlog::warn("probe cache {} belongs to a different teacher; ignoring it", path.string());
      return nullptr;
    }
    const std::size_t H = view->hidden_dim(), C = view->num_classes();
    ProbeSet set;
    set.epochs = j.at("epochs").get<std::size_t>();
    set.train_accuracy = j.at("train_accuracy").get<std::vector<double>>();
    set.dev_accuracy = j.at("dev_accuracy").get<std::vector<double>>();
    for (const auto& p : j.at("probes")) {
      LinearProbe probe;
      probe.weight = Parameter("probe.weight", Tensor({C, H}, p.at("weight").get<std::vector<double>>()));
      probe.bias = Parameter("probe.bias", Tensor({C}, p.at("bias").get<std::vector<double>>()));
      set.probes.push_back(std::move(probe));
    }
    auto k = std::make_unique<TeacherKnowledge>(std::move(view), std::move(set));
    auto cached = j.at("probabilities").get<std::vector<double>>();
    if (cached.size() != k->probs_.size()) throw DataError("probe cache " + path.string() + " has the wrong size");
    k->probs_ = std::move(cached);
    return k;
  } catch (const json::exception& e) {
    throw DataError("malformed probe cache " + path.string() + ": " + e.what());
  } catch (const DimensionError& e) {
    throw DataError("malformed probe cache " + path.string() + ": " + e.what());
  }
}

namespace {

struct TeacherNet {
  TeacherNet(TaskType task, std::size_t vocab, const SyntheticTeacherConfig& c, std::size_t classes, Rng& rng)
      : task(task) {
    const std::size_t features = task == TaskType::single_text ? c.hidden : 4 * c.hidden;
    embedding = Parameter("teacher.embedding", uniform_fan_in({vocab, c.hidden}, 1, rng));
    for (std::size_t j = 0; j < c.layers; ++j) {
      const std::size_t in = j == 0 ? features : c.hidden;
      weights.emplace_back("teacher.w" + std::to_string(j + 1), uniform_fan_in({c.hidden, in}, in, rng));
      biases.emplace_back("teacher.b" + std::to_string(j + 1), uniform_fan_in({c.hidden}, in, rng));
    }
    head = LinearProbe("teacher.head", c.hidden, classes, rng);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out{&embedding};
    for (std::size_t j = 0; j < weights.size(); ++j) {
      out.push_back(&weights[j]);
      out.push_back(&biases[j]);
    }
    for (auto* p : head.parameters()) out.push_back(p);
    return out;
  }

  struct Output {
    std::vector<Var> states;
    Var logits;
  };

  Output forward(Tape& tape, const EncodedBatch& batch, int gap_id) {
    const std::size_t B = batch.batch, L = batch.length;
    Var table = tape.param(embedding);
    auto mask = [&](auto keep) {
      Tensor m({B, L}, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        double n = 0.0;
        for (std::size_t l = 0; l < L; ++l) n += keep(b * L + l) ? 1.0 : 0.0;
        for (std::size_t l = 0; l < L; ++l) m[b * L + l] = (n > 0.0 && keep(b * L + l)) ? 1.0 / n : 0.0;
      }
      return tape.constant(std::move(m));
    };
    Var ea = embedding_lookup(table, batch.ids_a, B, L);
    Var mask_a = mask([&](std::size_t i) { return batch.ids_a[i] != Vocab::kPad; });
    Var features = attend_positions(ea, mask_a);
    if (task == TaskType::text_pair) {
      Var eb = embedding_lookup(table, batch.ids_b, B, L);
      auto content_b = [&](std::size_t i) { return batch.ids_b[i] != Vocab::kPad && batch.ids_b[i] != gap_id; };
      Var mask_b = mask(content_b);
      Var mask_ab = mask([&](std::size_t i) { return content_b(i) && batch.ids_a[i] != Vocab::kPad; });
      Var diff = sub(ea, eb);
      features = concat({features, attend_positions(eb, mask_b), attend_positions(mul(ea, eb), mask_ab),
                         attend_positions(mul(diff, diff), mask_ab)},
                        1);
    }
    Output out;
    Var h;
    for (std::size_t j = 0; j < weights.size(); ++j) {
      Var pre = affine(j == 0 ? features : h, tape.param(weights[j]), tape.param(biases[j]));
      h = j == 0 ? adanas::tanh(pre) : add(h, adanas::tanh(pre));
      out.states.push_back(h);
    }
    out.logits = head.logits(tape, h);
    return out;
  }

  static Var embedding_lookup(Var table, const std::vector<int>& ids, std::size_t B, std::size_t L) {
    return adanas::embedding(table, ids, B, L);
  }

  TaskType task;
  Parameter embedding;
  std::vector<Parameter> weights;
  std::vector<Parameter> biases;
  LinearProbe head;
};

std::vector<const Example*> all_examples(const Dataset& d) {
  std::vector<const Example*> out;
  out.reserve(d.examples.size());
  for (const auto& e : d.examples) out.push_back(&e);
  return out;
}

double teacher_accuracy(TeacherNet& net, const Vocab& vocab, const std::vector<const Example*>& examples,
                        TaskType task, int gap_id, std::size_t batch_size) {
  std::size_t hits = 0;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t B = std::min(batch_size, examples.size() - start);
    std::span<const Example* const> part(examples.data() + start, B);
    EncodedBatch batch = encode_batch(vocab, part, task);
    Tape tape;
    auto out = net.forward(tape, batch, gap_id);
    const std::size_t C = out.logits.shape()[1];
    for (std::size_t b = 0; b < B; ++b) {
      hits += static_cast<int>(argmax(out.logits.value().data().subspan(b * C, C))) == batch.labels[b];
    }
  }
  return examples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(examples.size());
}

}  // namespace

SyntheticTeacherResult synthetic_teacher(const Dataset& data, const Dataset& training,
                                         const SyntheticTeacherConfig& config) {
  if (config.layers == 0 || config.hidden == 0 || config.batch_size == 0 || config.max_len == 0) {
    throw ConfigError("synthetic teacher needs positive J, H, batch size and max_len");
  }
  if (training.task_type != data.task_type) throw ConfigError("teacher training data has a different task type");
  const std::size_t classes = std::max(data.num_classes, training.num_classes);
  const Vocab vocab = Vocab::build(training, config.max_len);
  const int gap_id = vocab.index(kToyGapToken) == Vocab::kUnknown ? -1 : vocab.index(kToyGapToken);
  Rng rng(config.seed);
  TeacherNet net(data.task_type, vocab.size(), config, classes, rng);
  Adam adam(config.lr, 0.0);

  std::vector<const Example*> train = training.split(Split::train);
  if (train.empty()) throw DataError("teacher training data has no train examples");
  SyntheticTeacherResult result{TeacherView(config.layers, config.hidden, classes), 0.0, 0};
  auto params = net.parameters();
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t B = std::min(config.batch_size, train.size() - start);
      std::span<const Example* const> part(train.data() + start, B);
      EncodedBatch batch = encode_batch(vocab, part, data.task_type);
      Tape tape;
      auto out = net.forward(tape, batch, gap_id);
      tape.backward(softmax_xent(out.logits, one_hot_rows(batch.labels, classes)));
      adam.step(params);
    }
    result.epochs = epoch + 1;
    result.train_accuracy = teacher_accuracy(net, vocab, train, data.task_type, gap_id, 256);
    spdlog::debug("teacher epoch {}: train accuracy {:.4f}", epoch + 1, result.train_accuracy);
    if (result.train_accuracy >= config.stop_accuracy) break;
  }
  if (result.train_accuracy < config.required_accuracy) {
    throw TrainingError("synthetic teacher reached train accuracy " + std::to_string(result.train_accuracy) +
                        " after " + std::to_string(result.epochs) + " epochs (J=" + std::to_string(config.layers) +
                        ", H=" + std::to_string(config.hidden) + ", lr=" + std::to_string(config.lr) +
                        "); required " + std::to_string(config.required_accuracy));
  }

  const auto examples = all_examples(data);
  for (std::size_t start = 0; start < examples.size(); start += 256) {
    const std::size_t B = std::min<std::size_t>(256, examples.size() - start);
    std::span<const Example* const> part(examples.data() + start, B);
    EncodedBatch batch = encode_batch(vocab, part, data.task_type);
    Tape tape;
    auto out = net.forward(tape, batch, gap_id);
    for (std::size_t b = 0; b < B; ++b) {
      TeacherRecord r{part[b]->id, part[b]->label, {}};
      r.layers.reserve(config.layers * config.hidden);
      for (const Var& s : out.states) {
        auto row = s.value().data().subspan(b * config.hidden, config.hidden);
        r.layers.insert(r.layers.end(), row.begin(), row.end());
      }
      result.view.add(std::move(r));
    }
  }
  return result;
}

}  // namespace adanas
