// SPDX-License-Identifier: Apache-2.0
#include "run_config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "adanas/errors.hpp"

namespace adanas::cli {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

template <typename Fn>
void each_key(const json& j, std::string_view section, Fn&& fn) {
  if (!j.is_object()) throw ConfigError("config section '" + std::string(section) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (!fn(key, value)) {
        throw ConfigError("unknown config key '" + (section.empty() ? "" : std::string(section) + ".") + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("bad value for config key '" + key + "': " + e.what());
    }
  }
}

ordered_json teacher_json(const SyntheticTeacherConfig& t) {
  ordered_json j;
  j["layers"] = t.layers;
  j["hidden"] = t.hidden;
  j["seed"] = t.seed;
  j["max_len"] = t.max_len;
  j["max_epochs"] = t.max_epochs;
  j["batch_size"] = t.batch_size;
  j["lr"] = t.lr;
  j["stop_accuracy"] = t.stop_accuracy;
  j["required_accuracy"] = t.required_accuracy;
  return j;
}

bool set_teacher_field(SyntheticTeacherConfig& t, const std::string& key, const json& v) {
  if (key == "layers") t.layers = v.get<std::size_t>();
  else if (key == "hidden") t.hidden = v.get<std::size_t>();
  else if (key == "seed") t.seed = v.get<std::uint64_t>();
  else if (key == "max_len") t.max_len = v.get<std::size_t>();
  else if (key == "max_epochs") t.max_epochs = v.get<std::size_t>();
  else if (key == "batch_size") t.batch_size = v.get<std::size_t>();
  else if (key == "lr") t.lr = v.get<double>();
  else if (key == "stop_accuracy") t.stop_accuracy = v.get<double>();
  else if (key == "required_accuracy") t.required_accuracy = v.get<double>();
  else return false;
  return true;
}

}  // namespace

void RunConfig::set_seed(std::uint64_t seed) {
  search.seed = seed;
  probes.seed = seed;
  gen_data.toy.seed = seed;
  if (synthetic_teacher) synthetic_teacher->seed = seed;
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["search"] = ordered_json::parse(search.to_json());
  j["dataset"] = dataset ? json(dataset->string()) : json(nullptr);
  j["task_type"] = task_type ? json(task_type_name(*task_type)) : json(nullptr);
  j["teacher"] = teacher ? json(teacher->string()) : json(nullptr);
  j["synthetic_teacher"] = synthetic_teacher ? teacher_json(*synthetic_teacher) : ordered_json(nullptr);
  j["probes"] = {{"epochs", probes.epochs},
                 {"lr", probes.lr},
                 {"weight_decay", probes.weight_decay},
                 {"batch_size", probes.batch_size},
                 {"seed", probes.seed}};
  j["gen_data"] = {{"task", toy_task_name(gen_data.toy.kind)},
                   {"size", gen_data.toy.size},
                   {"vocab_size", gen_data.toy.vocab_size},
                   {"seed", gen_data.toy.seed},
                   {"min_tokens", gen_data.toy.min_tokens},
                   {"max_tokens", gen_data.toy.max_tokens},
                   {"label_noise", gen_data.toy.label_noise},
                   {"augment_prob", gen_data.augment_prob},
                   {"augment_copies", gen_data.augment_copies}};
  j["out"] = out.string();
  j["workers"] = workers;
  j["child"] = child ? json(child->string()) : json(nullptr);
  j["checkpoint"] = checkpoint ? json(checkpoint->string()) : json(nullptr);
  j["vocab_size"] = vocab_size;
  j["num_classes"] = num_classes;
  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  auto path = [](const json& v) -> std::optional<std::filesystem::path> {
    if (v.is_null()) return std::nullopt;
    return std::filesystem::path(v.get<std::string>());
  };
  each_key(j, "", [&](const std::string& key, const json& v) {
    if (key == "search") c.search = SearchConfig::from_json(v.dump());
    else if (key == "dataset") c.dataset = path(v);
    else if (key == "task_type") {
      if (v.is_null()) c.task_type.reset();
      else {
        try {
          c.task_type = parse_task_type(v.get<std::string>());
        } catch (const Error& e) {
          throw ConfigError(e.what());
        }
      }
    }
    else if (key == "teacher") c.teacher = path(v);
    else if (key == "synthetic_teacher") {
      if (v.is_null()) c.synthetic_teacher.reset();
      else {
        SyntheticTeacherConfig t;
        each_key(v, "synthetic_teacher", [&](const std::string& k, const json& x) { return set_teacher_field(t, k, x); });
        c.synthetic_teacher = t;
      }
    }
    else if (key == "probes") {
      each_key(v, "probes", [&](const std::string& k, const json& x) {
        if (k == "epochs") c.probes.epochs = x.get<std::size_t>();
        else if (k == "lr") c.probes.lr = x.get<double>();
        else if (k == "weight_decay") c.probes.weight_decay = x.get<double>();
        else if (k == "batch_size") c.probes.batch_size = x.get<std::size_t>();
        else if (k == "seed") c.probes.seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    }
    else if (key == "gen_data") {
      each_key(v, "gen_data", [&](const std::string& k, const json& x) {
        auto& t = c.gen_data.toy;
        if (k == "task") {
          try {
            t.kind = parse_toy_task(x.get<std::string>());
          } catch (const Error& e) {
            throw ConfigError(e.what());
          }
        }
        else if (k == "size") t.size = x.get<std::size_t>();
        else if (k == "vocab_size") t.vocab_size = x.get<std::size_t>();
        else if (k == "seed") t.seed = x.get<std::uint64_t>();
        else if (k == "min_tokens") t.min_tokens = x.get<std::size_t>();
        else if (k == "max_tokens") t.max_tokens = x.get<std::size_t>();
        else if (k == "label_noise") t.label_noise = x.get<double>();
        else if (k == "augment_prob") c.gen_data.augment_prob = x.get<double>();
        else if (k == "augment_copies") c.gen_data.augment_copies = x.get<std::size_t>();
        else return false;
        return true;
      });
    }
    else if (key == "out") c.out = v.get<std::string>();
    else if (key == "workers") c.workers = v.get<std::size_t>();
    else if (key == "child") c.child = path(v);
    else if (key == "checkpoint") c.checkpoint = path(v);
    else if (key == "vocab_size") c.vocab_size = v.get<std::size_t>();
    else if (key == "num_classes") c.num_classes = v.get<std::size_t>();
    else return false;
    return true;
  });
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

SyntheticTeacherConfig parse_synthetic_teacher_spec(std::string_view spec) {
  SyntheticTeacherConfig t;
  if (spec.empty() || spec == "default") return t;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t end = std::min(spec.find(',', start), spec.size());
    const std::string_view item = spec.substr(start, end - start);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("synthetic teacher spec item '" + std::string(item) + "' is not key=value");
    }
    const std::string key(item.substr(0, eq));
    const std::string value(item.substr(eq + 1));
    json v;
    try {
      v = json::parse(value);
      if (!set_teacher_field(t, key, v)) throw ConfigError("unknown synthetic teacher key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("bad synthetic teacher value for '" + key + "': " + e.what());
    }
    start = end + 1;
  }
  return t;
}

TaskType detect_task_type(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream cols(header);
  std::string col;
  while (std::getline(cols, col, '\t')) {
    if (!col.empty() && col.back() == '\r') col.pop_back();
    if (col == "text_b") return TaskType::text_pair;
  }
  return TaskType::single_text;
}

}  // namespace adanas::cli
