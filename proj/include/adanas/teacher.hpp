// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adanas/data.hpp"
#include "adanas/losses.hpp"
#include "adanas/nn.hpp"

namespace adanas {

struct TeacherRecord {
  std::string id;
  int label = 0;
  std::vector<double> layers;  // J * H, layer-major, float32-representable
};

/// Frozen per-layer pooled teacher states. Immutable once built.
class TeacherView {
 public:
  static constexpr int kSchemaVersion = 1;

  TeacherView(std::size_t layers, std::size_t hidden_dim, std::size_t num_classes);

  std::size_t layers() const noexcept { return layers_; }
  std::size_t hidden_dim() const noexcept { return hidden_; }
  std::size_t num_classes() const noexcept { return classes_; }
  std::size_t size() const noexcept { return records_.size(); }
  const std::vector<TeacherRecord>& records() const noexcept { return records_; }

  /// Values are rounded to float32. Throws DataError on a duplicate id or a
  /// shape inconsistent with (J, H).
  void add(TeacherRecord record);

  bool contains(std::string_view id) const;
  /// Throws DataError for unknown ids.
  std::size_t index_of(std::string_view id) const;
  /// Layer j in [1, J] of record `index`.
  std::span<const double> state(std::size_t index, std::size_t j) const;

  /// FNV-1a over the header and every record; hex encoded.
  std::string content_hash() const;

  /// Line-delimited interchange format: a JSON header line, then one JSON
  /// record per example with base64 little-endian float32 layers.
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t layers_;
  std::size_t hidden_;
  std::size_t classes_;
  std::vector<TeacherRecord> records_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Throws DataError naming the offending record on schema, shape or id
/// problems, and on truncated files.
TeacherView load_teacher(const std::filesystem::path& path);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

struct ProbeTrainingConfig {
  std::size_t epochs = 20;
  double lr = 3e-4;
  double weight_decay = 1e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

struct ProbeSet {
  std::vector<LinearProbe> probes;  // probes[j-1] reads teacher layer j
  std::vector<double> train_accuracy;
  std::vector<double> dev_accuracy;
  std::size_t epochs = 0;
};

/// Independent softmax probe per teacher layer, trained on the dataset's
/// train split (labels from the dataset, states from the view). Throws
/// DegenerateError when the train split holds a single class.
ProbeSet train_probes(const TeacherView& view, const Dataset& data, const ProbeTrainingConfig& config);

/// Trains probe j only; other probes are untouched.
void retrain_probe(ProbeSet& set, std::size_t j, const TeacherView& view, const Dataset& data,
                   const ProbeTrainingConfig& config);

/// Teacher states plus trained probes with every probe output precomputed.
class TeacherKnowledge {
 public:
  TeacherKnowledge(std::shared_ptr<const TeacherView> view, ProbeSet probes);

  const TeacherView& view() const { return *view_; }
  const ProbeSet& probes() const { return probes_; }
  std::size_t layers() const { return view_->layers(); }
  std::size_t num_classes() const { return view_->num_classes(); }

  /// Probe j's softmax output for each id. Throws DataError for unknown ids.
  std::vector<std::vector<double>> probe_probs(std::span<const std::string> ids, std::size_t j) const;
  /// Teacher side of the attentive KD loss for one batch.
  TeacherBatch batch(std::span<const std::string> ids) const;

  /// Probe parameters and outputs, keyed to the teacher's content hash.
  void save_cache(const std::filesystem::path& path) const;
  /// Returns nullptr when the cache is missing or belongs to another teacher.
  static std::unique_ptr<TeacherKnowledge> load_cache(std::shared_ptr<const TeacherView> view,
                                                       const std::filesystem::path& path);

 private:
  std::shared_ptr<const TeacherView> view_;
  ProbeSet probes_;
  std::vector<double> probs_;  // [J, N, classes]
};

/// Conventional location of the probe cache next to a teacher file.
std::filesystem::path probe_cache_path(const std::filesystem::path& teacher_path);

struct SyntheticTeacherConfig {
  std::size_t layers = 12;
  std::size_t hidden = 64;
  std::uint64_t seed = 0;
  std::size_t max_len = 32;
  std::size_t max_epochs = 60;
  std::size_t batch_size = 32;
  double lr = 5e-3;
  /// Training stops early once train accuracy reaches this value.
  double stop_accuracy = 0.99;
  /// Below this train accuracy after max_epochs, training fails.
  double required_accuracy = 0.9;
};

struct SyntheticTeacherResult {
  TeacherView view;
  double train_accuracy = 0.0;
  std::size_t epochs = 0;
};

/// Embedding + mean-pooled features + J residual tanh layers with a linear
/// head, trained on the train split of `training`, then frozen; emits the
/// pooled state of every layer for every example of `data`. Throws
/// TrainingError when the required train accuracy is not reached.
SyntheticTeacherResult synthetic_teacher(const Dataset& data, const Dataset& training,
                                         const SyntheticTeacherConfig& config);

}  // namespace adanas
