// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "adanas/data.hpp"
#include "adanas/search.hpp"
#include "adanas/teacher.hpp"

namespace adanas::cli {

struct GenDataConfig {
  ToyTaskSpec toy;
  double augment_prob = 0.0;
  std::size_t augment_copies = 1;
};

/// Everything one command needs: search settings, paths and command options.
struct RunConfig {
  SearchConfig search;
  std::optional<std::filesystem::path> dataset;
  std::optional<TaskType> task_type;  // detected from the dataset header when unset
  std::optional<std::filesystem::path> teacher;
  std::optional<SyntheticTeacherConfig> synthetic_teacher;
  ProbeTrainingConfig probes;
  GenDataConfig gen_data;
  std::filesystem::path out = "run";
  std::size_t workers = 1;
  std::optional<std::filesystem::path> child;
  std::optional<std::filesystem::path> checkpoint;
  /// Used by cost-report when no dataset is given.
  std::size_t vocab_size = 0;
  std::size_t num_classes = 2;

  /// Sets the search, data, teacher and probe seeds together.
  void set_seed(std::uint64_t seed);

  /// Every key, defaults included.
  std::string to_json() const;
  /// Unknown keys at any level throw ConfigError.
  static RunConfig from_json(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);
};

/// "default" or comma-separated key=value pairs over the synthetic teacher
/// fields, e.g. "layers=12,hidden=64".
SyntheticTeacherConfig parse_synthetic_teacher_spec(std::string_view spec);

/// Reads the header of a dataset file to tell single-text from text-pair.
TaskType detect_task_type(const std::filesystem::path& path);

}  // namespace adanas::cli
