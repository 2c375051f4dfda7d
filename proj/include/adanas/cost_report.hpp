// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "adanas/search.hpp"

namespace adanas {

struct ReferenceRow {
  std::string_view task;
  std::size_t k;
  std::string_view params;
  std::string_view speedup;
};

/// Published layer counts, parameter sizes and speedups of searched
/// structures, reproduced for context only.
const std::array<ReferenceRow, 6>& reference_rows();

/// Structured text (JSON) with raw and normalized SIZE/FLOPs per op, the
/// child's parameter breakdown and totals, and the reference rows.
std::string cost_report(const ChildGraph& child, std::size_t vocab_size, std::size_t num_classes,
                        std::size_t seq_len);

}  // namespace adanas
