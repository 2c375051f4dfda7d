// SPDX-License-Identifier: Apache-2.0
#include "adanas/cost_report.hpp"

#include <nlohmann/json.hpp>

namespace adanas {

const std::array<ReferenceRow, 6>& reference_rows() {
  static const std::array<ReferenceRow, 6> rows{{
      {"SST-2", 3, "6.4M", "29.3x"},
      {"MRPC", 4, "7.5M", "19.2x"},
      {"QQP", 5, "8.2M", "16.4x"},
      {"MNLI", 7, "9.5M", "12.7x"},
      {"QNLI", 5, "7.9M", "18.1x"},
      {"RTE", 6, "8.6M", "15.5x"},
  }};
  return rows;
}

std::string cost_report(const ChildGraph& child, std::size_t vocab_size, std::size_t num_classes,
                        std::size_t seq_len) {
  const ChildCost cost = child_cost(child, vocab_size, num_classes, seq_len);
  const CostTable& table = build_cost_table(child.embed_dim, seq_len);
  nlohmann::ordered_json j;
  j["child"] = child.encoding();
  j["K"] = child.k;
  j["embed_dim"] = child.embed_dim;
  j["seq_len"] = seq_len;
  j["vocab_size"] = vocab_size;
  j["num_classes"] = num_classes;
  auto& ops = j["operations"] = nlohmann::ordered_json::array();
  for (auto op : all_operations()) {
    const OperationCost& c = table.at(op);
    ops.push_back({{"op", operation_name(op)},
                   {"raw_params", c.raw_params},
                   {"raw_flops", c.raw_flops},
                   {"size_norm", c.size_norm},
                   {"flops_norm", c.flops_norm}});
  }
  j["parameters"] = {{"embedding", cost.embedding},
                     {"cell_ops", cost.cell_ops},
                     {"attention", cost.attention},
                     {"head", cost.head},
                     {"aux_probes", cost.aux_probes}};
  j["total_params"] = cost.total_params();
  j["total_flops"] = cost.cell_flops;
  j["normalized_cell_cost"] = efficiency_cost(child, child.k, table);
  auto& rows = j["reference_rows"] = nlohmann::ordered_json::array();
  for (const auto& r : reference_rows()) {
    rows.push_back({{"task", r.task}, {"K", r.k}, {"params", r.params}, {"speedup", r.speedup}});
  }
  return j.dump(2) + "\n";
}

}  // namespace adanas
