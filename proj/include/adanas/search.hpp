// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adanas/data.hpp"
#include "adanas/losses.hpp"
#include "adanas/optim.hpp"
#include "adanas/search_space.hpp"
#include "adanas/teacher.hpp"

namespace adanas {

enum class TauDecay { linear, exponential };

std::string_view tau_decay_name(TauDecay d) noexcept;
TauDecay parse_tau_decay(std::string_view name);

struct SearchConfig {
  std::size_t k_max = 8;
  std::size_t nodes = 3;
  std::size_t embed_dim = 128;
  std::size_t max_len = 128;
  std::vector<OperationKind> candidates{all_operations().begin(), all_operations().end()};

  double gamma = 0.8;
  double beta = 4.0;
  double temperature = 1.0;

  std::size_t epochs = 80;
  double tau_start = 5.0;
  double tau_end = 0.5;
  TauDecay tau_decay = TauDecay::linear;

  /// Operation weights: SGD with momentum, cosine-annealed learning rate.
  double weight_lr_max = 2e-2;
  double weight_lr_min = 5e-4;
  double momentum = 0.9;
  double weight_decay = 0.0;

  /// Architecture logits: Adam.
  double arch_lr = 3e-4;
  double arch_weight_decay = 1e-3;

  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  LossConfig loss() const { return {gamma, beta, temperature}; }
  SuperNetConfig supernet(TaskType task, std::size_t vocab_size, std::size_t num_classes) const;
  /// Gumbel temperature for a 0-based epoch.
  double tau_at(std::size_t epoch) const;

  /// Every field, in declaration order.
  std::string to_json() const;
  /// Missing keys keep their defaults; unknown keys throw ConfigError.
  static SearchConfig from_json(std::string_view text);
};

struct StepLosses {
  double ce = 0.0;
  double kd = 0.0;
  double eff = 0.0;
  double total = 0.0;
  std::size_t sampled_k = 0;
};

struct ChildCost {
  std::size_t embedding = 0;
  std::size_t cell_ops = 0;
  std::size_t attention = 0;
  std::size_t head = 0;
  std::size_t aux_probes = 0;
  std::size_t cell_flops = 0;

  std::size_t total_params() const { return embedding + cell_ops + attention + head + aux_probes; }
};

/// Analytic parameter and FLOPs counts of a child; equals ChildNet::parameter_count().
ChildCost child_cost(const ChildGraph& child, std::size_t vocab_size, std::size_t num_classes,
                     std::size_t seq_len);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // batch means
  double ce = 0.0;
  double kd = 0.0;
  double eff = 0.0;
  /// Largest |total - ((1-gamma) ce + gamma kd + beta eff)| over the epoch's steps.
  double max_decomposition_error = 0.0;
  double tau = 0.0;
  double weight_lr = 0.0;
  double entropy_k = 0.0;
  double entropy_o = 0.0;  // mean over edges
  ChildGraph child;
  std::size_t child_params = 0;
  std::size_t child_flops = 0;
};

struct SearchRunReport {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  ChildGraph child;
  double wall_seconds = 0.0;

  /// One JSON record per epoch, then a final record with the derived child.
  /// Wall-clock time is excluded so reruns compare byte for byte.
  std::string to_jsonl() const;
};

/// One search run: supernet, both optimizers, RNG and progress.
class SearchSession {
 public:
  /// `teacher` may be null only when gamma == 0. Uses the dataset's train split.
  SearchSession(SearchConfig config, const Dataset& data, std::shared_ptr<const TeacherKnowledge> teacher);

  const SearchConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  SuperNet& net() { return *net_; }
  std::size_t epochs_done() const { return records_.size(); }
  bool finished() const { return records_.size() >= config_.epochs; }

  /// One batch: sample, forward, combined loss, one step of each optimizer.
  /// Throws TrainingError on a non-finite loss.
  StepLosses step(std::span<const Example* const> examples, double weight_lr);
  EpochRecord run_epoch();

  /// Derived child plus every epoch record so far.
  SearchRunReport report() const;

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Throws DataError on a corrupt file or one written under another config.
  void load_checkpoint(const std::filesystem::path& path);

 private:
  SearchConfig config_;
  const Dataset* data_;
  std::shared_ptr<const TeacherKnowledge> teacher_;
  Vocab vocab_;
  std::unique_ptr<SuperNet> net_;
  Sgd weight_opt_;
  Adam arch_opt_;
  Rng rng_;
  std::vector<EpochRecord> records_;
};

struct SearchOptions {
  /// Written after every epoch when set.
  std::optional<std::filesystem::path> checkpoint;
  /// Continue from `checkpoint` if it exists.
  bool resume = false;
};

SearchRunReport search(const SearchConfig& config, const Dataset& data,
                       std::shared_ptr<const TeacherKnowledge> teacher, const SearchOptions& options = {});

struct CheckpointArchitecture {
  SearchConfig config;
  TaskType task_type = TaskType::single_text;
  std::size_t epochs_done = 0;
  ArchParams arch;
};

/// Reads the configuration and architecture logits of a search checkpoint.
CheckpointArchitecture read_checkpoint_architecture(const std::filesystem::path& path);
/// The argmax child of a checkpoint's architecture logits.
ChildGraph derive_from_checkpoint(const std::filesystem::path& path);

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::size_t> class_total;
  std::vector<std::size_t> class_correct;
};

/// Eval-mode accuracy and mean cross-entropy. Throws ValidationError on an empty split.
EvalResult evaluate(ChildNet& net, const Vocab& vocab, const Dataset& data, Split split,
                    std::size_t batch_size = 256);

struct ChildTrainResult {
  double best_dev_accuracy = 0.0;
  double best_dev_loss = 0.0;
  std::size_t best_epoch = 0;  // 1-based
  std::vector<double> dev_accuracy;
  std::vector<double> dev_loss;
  std::vector<double> train_loss;
};

struct TrainedChild {
  std::unique_ptr<ChildNet> net;  // weights of the best dev epoch
  Vocab vocab;
  ChildTrainResult result;
};

/// Fresh seeded initialization, then (1-gamma) CE + gamma KD with the weight
/// optimizer for config.epochs. The best epoch maximises dev accuracy, ties
/// broken by lower dev loss, then earlier epoch.
TrainedChild train_child(const ChildGraph& child, const Dataset& data, const SearchConfig& config,
                         std::shared_ptr<const TeacherKnowledge> teacher);

/// Trained child weights with the graph embedded.
void save_child_weights(ChildNet& net, const std::filesystem::path& path);
/// Throws DataError when the file does not match the net's graph or shapes.
void load_child_weights(ChildNet& net, const std::filesystem::path& path);

inline constexpr std::size_t kEnumerationLimit = 500;

/// |candidates|^edges * k_max.
std::size_t enumeration_size(const SearchConfig& config);
/// Sorted by encoding. Throws GuardError above kEnumerationLimit.
std::vector<ChildGraph> enumerate_children(const SearchConfig& config, TaskType task);

/// Uniform depth in [1, k_max] and uniform op per edge.
ChildGraph random_child(const SearchConfig& config, TaskType task, Rng& rng);

struct RankedChild {
  ChildGraph child;
  double dev_loss = 0.0;
  double dev_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

/// Trains every child with the same budget and seed on `workers` threads;
/// ascending dev loss, ties by encoding.
std::vector<RankedChild> enumerate_and_rank(const SearchConfig& config, const Dataset& data,
                                            std::shared_ptr<const TeacherKnowledge> teacher,
                                            std::size_t workers = 1);

}  // namespace adanas
