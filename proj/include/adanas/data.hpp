// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adanas {

enum class TaskType { single_text, text_pair };

std::string_view task_type_name(TaskType t) noexcept;
TaskType parse_task_type(std::string_view name);

enum class Split { train, dev };

std::string_view split_name(Split s) noexcept;

struct Example {
  std::string id;
  std::string text_a;
  std::optional<std::string> text_b;
  int label = 0;
  Split split = Split::train;
};

struct Dataset {
  TaskType task_type = TaskType::single_text;
  std::size_t num_classes = 0;
  std::vector<Example> examples;

  std::vector<const Example*> split(Split s) const;
  /// Throws DataError when text_b presence disagrees with the task type or a
  /// label is out of range.
  void validate() const;
};

/// Lowercase, strip ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnknown = 1;

  /// Built from the train split only; tokens are indexed in order of first
  /// appearance so the result is deterministic.
  static Vocab build(const Dataset& data, std::size_t max_len = 128);

  int index(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t max_len() const noexcept { return max_len_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::size_t max_len_ = 128;
};

/// Token ids for one batch, row-major [batch, length]. ids_b is empty for
/// single-text tasks.
struct EncodedBatch {
  TaskType task_type = TaskType::single_text;
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids_a;
  std::vector<int> ids_b;
  std::vector<int> labels;
  std::vector<std::string> example_ids;
};

EncodedBatch encode_batch(const Vocab& vocab, std::span<const Example* const> examples,
                          TaskType task_type);

/// Tab-separated with a header naming `text` (single) or `text_a`,`text_b`
/// (pair), plus `label` and an optional `split` column (train/dev, default
/// train). Ids are the zero-based data row index.
Dataset load_dataset(const std::filesystem::path& path, TaskType task_type);
void save_dataset(const Dataset& data, const std::filesystem::path& path);

enum class ToyTaskKind { keyword_sentiment, pair_overlap_equivalence, pair_order_entailment };

std::string_view toy_task_name(ToyTaskKind k) noexcept;
ToyTaskKind parse_toy_task(std::string_view name);
TaskType toy_task_type(ToyTaskKind k) noexcept;

/// Placeholder filling the dropped positions of pair_order_entailment
/// hypotheses.
inline constexpr std::string_view kToyGapToken = "gap";

struct ToyTaskSpec {
  ToyTaskKind kind = ToyTaskKind::keyword_sentiment;
  std::size_t size = 1000;
  std::size_t vocab_size = 200;
  std::uint64_t seed = 0;
  std::size_t min_tokens = 8;
  std::size_t max_tokens = 16;
  /// Probability of flipping a train label (dev labels stay clean).
  double label_noise = 0.0;
};

/// Planted-rule datasets with a stratified 80/20 train/dev split.
Dataset toy_task_generator(const ToyTaskSpec& spec);

/// The planted rule itself; labels every clean generated example correctly.
int toy_rule_label(ToyTaskKind kind, const Example& example);

/// Keeps the originals and appends `copies` augmented versions of every train
/// example, each token independently replaced (by a different in-vocabulary
/// token) with probability replace_prob.
Dataset augment(const Dataset& data, double replace_prob, std::uint64_t seed,
                std::size_t copies = 1);

}  // namespace adanas
