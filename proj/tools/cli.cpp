// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "adanas/cost_report.hpp"
#include "adanas/search.hpp"
#include "adanas/teacher.hpp"
#include "run_config.hpp"

namespace adanas::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config:
    case ErrorCategory::guard:
      return kExitConfig;
    case ErrorCategory::data:
    case ErrorCategory::validation:
    case ErrorCategory::degenerate:
      return kExitData;
    case ErrorCategory::training:
      return kExitTraining;
    default:
      return kExitOther;
  }
}

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
  std::optional<std::string> teacher;
  std::optional<std::string> synthetic_teacher;
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> kd_temp;
  std::optional<double> tau_start;
  std::optional<double> tau_end;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> k_max;
  std::optional<std::size_t> workers;
  std::optional<std::string> child;
  std::optional<std::string> checkpoint;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config ? RunConfig::load(*o.config) : RunConfig{};
  if (o.synthetic_teacher) c.synthetic_teacher = parse_synthetic_teacher_spec(*o.synthetic_teacher);
  if (o.seed) c.set_seed(*o.seed);
  if (o.out) c.out = *o.out;
  if (o.dataset) c.dataset = *o.dataset;
  if (o.teacher) c.teacher = *o.teacher;
  if (o.beta) c.search.beta = *o.beta;
  if (o.gamma) c.search.gamma = *o.gamma;
  if (o.kd_temp) c.search.temperature = *o.kd_temp;
  if (o.tau_start) c.search.tau_start = *o.tau_start;
  if (o.tau_end) c.search.tau_end = *o.tau_end;
  if (o.epochs) c.search.epochs = *o.epochs;
  if (o.batch_size) c.search.batch_size = *o.batch_size;
  if (o.k_max) c.search.k_max = *o.k_max;
  if (o.workers) c.workers = *o.workers;
  if (o.child) c.child = *o.child;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  c.search.validate();
  return c;
}

void configure_logging() {
  auto logger = spdlog::get("adanas");
  if (!logger) logger = spdlog::stderr_color_mt("adanas");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%^%l%$] %v");
  const char* env = std::getenv("ADANAS_LOG");
  if (!env || !*env) {
    spdlog::set_level(spdlog::level::info);
    return;
  }
  static const std::map<std::string, spdlog::level::level_enum> levels{
      {"trace", spdlog::level::trace}, {"debug", spdlog::level::debug}, {"info", spdlog::level::info},
      {"warn", spdlog::level::warn},   {"error", spdlog::level::err},   {"off", spdlog::level::off}};
  auto it = levels.find(env);
  if (it == levels.end()) {
    throw ConfigError("ADANAS_LOG must be one of trace, debug, info, warn, error, off (got '" + std::string(env) +
                      "')");
  }
  spdlog::set_level(it->second);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

fs::path prepare_out(const RunConfig& c) {
  fs::create_directories(c.out);
  write_text(c.out / "resolved_config.json", c.to_json());
  return c.out;
}

Dataset load_data(const RunConfig& c) {
  if (!c.dataset) throw ConfigError("this command needs --dataset");
  const TaskType task = c.task_type ? *c.task_type : detect_task_type(*c.dataset);
  return load_dataset(*c.dataset, task);
}

std::shared_ptr<const TeacherKnowledge> knowledge(const RunConfig& c, const Dataset& data, bool retrain) {
  std::shared_ptr<TeacherView> view;
  fs::path teacher_path;
  if (c.teacher) {
    teacher_path = *c.teacher;
    view = std::make_shared<TeacherView>(load_teacher(teacher_path));
  } else if (c.synthetic_teacher) {
    teacher_path = c.out / "teacher.jsonl";
    SyntheticTeacherResult r = synthetic_teacher(data, data, *c.synthetic_teacher);
    spdlog::info("synthetic teacher: train accuracy {:.4f} after {} epochs", r.train_accuracy, r.epochs);
    view = std::make_shared<TeacherView>(std::move(r.view));
    view->save(teacher_path);
  } else {
    throw ConfigError("a teacher is required: pass --teacher or --synthetic-teacher, or set --gamma 0");
  }
  const fs::path cache = probe_cache_path(teacher_path);
  if (!retrain) {
    if (auto k = TeacherKnowledge::load_cache(view, cache)) {
      spdlog::info("loaded probe cache {}", cache.string());
      return k;
    }
  }
  auto k = std::make_shared<TeacherKnowledge>(view, train_probes(*view, data, c.probes));
  k->save_cache(cache);
  spdlog::info("trained {} probes; cache written to {}", view->layers(), cache.string());
  return k;
}

std::shared_ptr<const TeacherKnowledge> teacher_if_needed(const RunConfig& c, const Dataset& data) {
  return c.search.gamma > 0.0 ? knowledge(c, data, false) : nullptr;
}

ChildGraph load_child(const RunConfig& c) {
  if (!c.child) throw ConfigError("this command needs --child");
  return ChildGraph::load(*c.child);
}

int cmd_gen_data(const RunConfig& c) {
  const fs::path out = prepare_out(c);
  Dataset d = toy_task_generator(c.gen_data.toy);
  if (c.gen_data.augment_prob > 0.0) {
    d = augment(d, c.gen_data.augment_prob, c.gen_data.toy.seed, c.gen_data.augment_copies);
  }
  save_dataset(d, out / "data.tsv");
  std::cout << (out / "data.tsv").string() << "\n";
  return kExitOk;
}

int cmd_probe_train(const RunConfig& c) {
  const fs::path out = prepare_out(c);
  const Dataset data = load_data(c);
  auto k = knowledge(c, data, true);
  ordered_json j;
  j["teacher_hash"] = k->view().content_hash();
  j["J"] = k->layers();
  j["H"] = k->view().hidden_dim();
  j["epochs"] = k->probes().epochs;
  j["train_accuracy"] = k->probes().train_accuracy;
  j["dev_accuracy"] = k->probes().dev_accuracy;
  write_text(out / "probes.json", j.dump(2) + "\n");
  for (std::size_t l = 0; l < k->layers(); ++l) {
    std::cout << "probe " << l + 1 << " dev_accuracy " << k->probes().dev_accuracy[l] << "\n";
  }
  return kExitOk;
}

int cmd_search(const RunConfig& c) {
  const fs::path out = prepare_out(c);
  const Dataset data = load_data(c);
  auto teacher = teacher_if_needed(c, data);
  SearchOptions opts;
  opts.checkpoint = c.checkpoint.value_or(out / "checkpoint.bin");
  opts.resume = true;
  const SearchRunReport report = search(c.search, data, teacher, opts);
  report.child.save(out / "child.json");
  write_text(out / "report.jsonl", report.to_jsonl());
  write_text(out / "timing.json", ordered_json{{"wall_seconds", report.wall_seconds}}.dump() + "\n");
  std::cout << report.child.encoding() << "\n";
  return kExitOk;
}

int cmd_derive(const RunConfig& c) {
  if (!c.checkpoint) throw ConfigError("derive needs --checkpoint");
  const fs::path out = prepare_out(c);
  const ChildGraph child = derive_from_checkpoint(*c.checkpoint);
  child.save(out / "child.json");
  std::cout << child.encoding() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& c) {
  const ChildGraph child = load_child(c);
  const fs::path out = prepare_out(c);
  const Dataset data = load_data(c);
  auto teacher = teacher_if_needed(c, data);
  TrainedChild t = train_child(child, data, c.search, teacher);
  save_child_weights(*t.net, out / "weights.bin");
  ordered_json j;
  j["child"] = child.encoding();
  j["seed"] = c.search.seed;
  j["best_dev_accuracy"] = t.result.best_dev_accuracy;
  j["best_dev_loss"] = t.result.best_dev_loss;
  j["best_epoch"] = t.result.best_epoch;
  j["dev_accuracy"] = t.result.dev_accuracy;
  j["dev_loss"] = t.result.dev_loss;
  j["train_loss"] = t.result.train_loss;
  write_text(out / "train_report.json", j.dump(2) + "\n");
  std::cout << "best_dev_accuracy " << t.result.best_dev_accuracy << " epoch " << t.result.best_epoch << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& c) {
  const ChildGraph child = load_child(c);
  if (!c.checkpoint) throw ConfigError("eval needs --checkpoint pointing at trained child weights");
  const fs::path out = prepare_out(c);
  const Dataset data = load_data(c);
  const Vocab vocab = Vocab::build(data, c.search.max_len);
  ChildNet net(child, vocab.size(), data.num_classes, c.search.seed);
  load_child_weights(net, *c.checkpoint);
  const EvalResult r = evaluate(net, vocab, data, Split::dev);
  ordered_json j;
  j["child"] = child.encoding();
  j["split"] = "dev";
  j["accuracy"] = r.accuracy;
  j["mean_loss"] = r.mean_loss;
  j["correct"] = r.correct;
  j["total"] = r.total;
  j["class_total"] = r.class_total;
  j["class_correct"] = r.class_correct;
  write_text(out / "eval.json", j.dump(2) + "\n");
  std::cout << "accuracy " << r.accuracy << " (" << r.correct << "/" << r.total << ")\n";
  return kExitOk;
}

int cmd_cost_report(const RunConfig& c) {
  const ChildGraph child = load_child(c);
  const fs::path out = prepare_out(c);
  std::size_t vocab = c.vocab_size, classes = c.num_classes;
  if (c.dataset) {
    const Dataset data = load_data(c);
    vocab = Vocab::build(data, c.search.max_len).size();
    classes = data.num_classes;
  }
  write_text(out / "cost_report.json", cost_report(child, vocab, classes, c.search.max_len));
  std::cout << "total_params " << child_cost(child, vocab, classes, c.search.max_len).total_params() << "\n";
  return kExitOk;
}

int cmd_enumerate(const RunConfig& c) {
  const fs::path out = prepare_out(c);
  const Dataset data = load_data(c);
  auto teacher = teacher_if_needed(c, data);
  const auto ranking = enumerate_and_rank(c.search, data, teacher, c.workers);
  std::string lines;
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    ordered_json j;
    j["rank"] = i + 1;
    j["child"] = ranking[i].child.encoding();
    j["dev_loss"] = ranking[i].dev_loss;
    j["dev_accuracy"] = ranking[i].dev_accuracy;
    j["best_epoch"] = ranking[i].best_epoch;
    lines += j.dump() + "\n";
  }
  write_text(out / "ranking.jsonl", lines);
  std::cout << "enumerated " << ranking.size() << " children; best " << ranking.front().child.encoding() << "\n";
  return kExitOk;
}

template <typename T>
std::string with_default(const std::string& text, const T& value) {
  std::ostringstream os;
  os << text << " [default: " << value << "]";
  return os.str();
}

void report_error(std::string_view category, std::string_view message) {
  std::string flat(message);
  for (char& ch : flat)
    if (ch == '\n') ch = ' ';
  std::cerr << "error: category=" << category << " message=" << flat << "\n";
}

}  // namespace

int run(int argc, const char* const* argv) {
  const SearchConfig d;
  CLI::App app{"Task-adaptive compression of a teacher model into a small searched CNN."};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON run configuration; flags take precedence [default: none]");
  app.add_option("--seed", o.seed, with_default("Seed for search, data, teacher and probes", d.seed));
  app.add_option("--out", o.out, with_default("Output directory", "run"));
  app.add_option("--dataset", o.dataset, "Dataset TSV file [default: none]");
  app.add_option("--teacher", o.teacher, "Teacher interchange file [default: none]");
  app.add_option("--synthetic-teacher", o.synthetic_teacher,
                 "Train a synthetic teacher: 'default' or key=value list, e.g. layers=12,hidden=64 [default: none]");
  app.add_option("--beta", o.beta, with_default("Efficiency loss weight", d.beta));
  app.add_option("--gamma", o.gamma, with_default("Knowledge loss weight", d.gamma));
  app.add_option("--kd-temp", o.kd_temp, with_default("Distillation temperature", d.temperature));
  app.add_option("--tau-start", o.tau_start, with_default("Initial Gumbel-Softmax temperature", d.tau_start));
  app.add_option("--tau-end", o.tau_end, with_default("Final Gumbel-Softmax temperature", d.tau_end));
  app.add_option("--epochs", o.epochs, with_default("Search or training epochs", d.epochs));
  app.add_option("--batch-size", o.batch_size, with_default("Mini-batch size", d.batch_size));
  app.add_option("--k-max", o.k_max, with_default("Maximum number of stacked cells", d.k_max));
  app.add_option("--workers", o.workers, with_default("Worker threads for enumerate", 1));
  app.add_option("--child", o.child, "Child graph JSON file [default: none]");
  app.add_option("--checkpoint", o.checkpoint,
                 "Search checkpoint (search, derive) or trained child weights (eval) [default: <out>/checkpoint.bin "
                 "for search]");

  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const RunConfig&);
  };
  const Command commands[] = {
      {"gen-data", "Generate a toy task dataset into <out>/data.tsv", cmd_gen_data},
      {"probe-train", "Train and cache per-layer teacher probes", cmd_probe_train},
      {"search", "Search a child architecture; writes child.json, report.jsonl, checkpoint", cmd_search},
      {"derive", "Derive the argmax child of a search checkpoint", cmd_derive},
      {"train", "Train a child from scratch; writes weights.bin and train_report.json", cmd_train},
      {"eval", "Evaluate trained child weights on the dev split", cmd_eval},
      {"cost-report", "Parameter and FLOPs report of a child", cmd_cost_report},
      {"enumerate", "Train and rank every child of a small search space", cmd_enumerate},
  };
  for (const auto& c : commands) app.add_subcommand(c.name, c.help)->fallthrough();
  app.require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("config", e.what());
    return kExitConfig;
  }

  try {
    configure_logging();
    const RunConfig config = resolve(o);
    for (const auto& c : commands) {
      if (app.got_subcommand(c.name)) return c.fn(config);
    }
    return kExitOther;
  } catch (const Error& e) {
    report_error(category_name(e.category()), e.what());
    return exit_code(e.category());
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return kExitOther;
  }
}

}  // namespace adanas::cli
