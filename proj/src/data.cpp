// SPDX-License-Identifier: Apache-2.0
#include "adanas/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

#include "adanas/errors.hpp"

namespace adanas {
namespace {

const std::vector<std::string> kPositiveKeywords{"great", "superb", "excellent"};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, '\t')) out.push_back(cell);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

std::string filler(std::size_t i) { return "w" + std::to_string(i); }

using Rng = std::mt19937_64;

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::vector<std::string> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<std::string> t(n);
  for (auto& w : t) w = filler(uniform_index(rng, vocab));
  return t;
}

double positional_match(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::size_t n = std::max(a.size(), b.size());
  if (n == 0) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(n);
}

bool ordered_subsequence(const std::vector<std::string>& needle,
                         const std::vector<std::string>& hay) {
  std::size_t pos = 0;
  for (const auto& w : needle) {
    while (pos < hay.size() && hay[pos] != w) ++pos;
    if (pos == hay.size()) return false;
    ++pos;
  }
  return true;
}

Example make_keyword(Rng& rng, const ToyTaskSpec& s, int want) {
  const std::size_t n = s.min_tokens + uniform_index(rng, s.max_tokens - s.min_tokens + 1);
  auto tokens = random_tokens(rng, n, s.vocab_size);
  if (want == 1) {
    const std::size_t hits = 1 + uniform_index(rng, 2);
    for (std::size_t h = 0; h < hits; ++h) {
      tokens[uniform_index(rng, n)] = kPositiveKeywords[uniform_index(rng, kPositiveKeywords.size())];
    }
  }
  Example e;
  e.text_a = join(tokens);
  return e;
}

Example make_overlap(Rng& rng, const ToyTaskSpec& s, int want) {
  const std::size_t n = s.min_tokens + uniform_index(rng, s.max_tokens - s.min_tokens + 1);
  const auto a = random_tokens(rng, n, s.vocab_size);
  auto b = a;
  // Positives keep at least 80% of positions, negatives at most 40%.
  const double frac = want == 1 ? 0.2 * std::uniform_real_distribution<double>(0.0, 1.0)(rng)
                                 : 0.6 + 0.4 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  const auto replaced = static_cast<std::size_t>(frac * static_cast<double>(n) + 0.5);
  for (std::size_t i = 0; i < replaced; ++i) b[order[i]] = filler(uniform_index(rng, s.vocab_size));
  Example e;
  e.text_a = join(a);
  e.text_b = join(b);
  return e;
}

Example make_entailment(Rng& rng, const ToyTaskSpec& s, int want) {
  const std::size_t n = s.min_tokens + uniform_index(rng, s.max_tokens - s.min_tokens + 1);
  const auto a = random_tokens(rng, n, s.vocab_size);
  std::vector<std::string> b(n, std::string(kToyGapToken));
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::bernoulli_distribution(0.5)(rng)) {
      b[i] = a[i];
      kept.push_back(i);
    }
  }
  if (kept.size() < 2) {
    for (std::size_t i : {std::size_t{0}, n - 1}) {
      b[i] = a[i];
      if (std::find(kept.begin(), kept.end(), i) == kept.end()) kept.push_back(i);
    }
    std::sort(kept.begin(), kept.end());
  }
  if (want == 0) {
    if (std::bernoulli_distribution(0.5)(rng)) {
      std::string foreign;
      do {
        foreign = filler(uniform_index(rng, s.vocab_size));
      } while (std::find(a.begin(), a.end(), foreign) != a.end());
      b[kept[uniform_index(rng, kept.size())]] = foreign;
    } else {
      const std::size_t i = uniform_index(rng, kept.size());
      std::size_t j = uniform_index(rng, kept.size() - 1);
      if (j >= i) ++j;
      std::swap(b[kept[i]], b[kept[j]]);
    }
  }
  Example e;
  e.text_a = join(a);
  e.text_b = join(b);
  return e;
}

}  // namespace

std::string_view task_type_name(TaskType t) noexcept {
  return t == TaskType::single_text ? "single_text" : "text_pair";
}

TaskType parse_task_type(std::string_view name) {
  if (name == "single_text") return TaskType::single_text;
  if (name == "text_pair") return TaskType::text_pair;
  throw ConfigError("unknown task type '" + std::string(name) + "'");
}

std::string_view split_name(Split s) noexcept { return s == Split::train ? "train" : "dev"; }

std::vector<const Example*> Dataset::split(Split s) const {
  std::vector<const Example*> out;
  for (const auto& e : examples) {
    if (e.split == s) out.push_back(&e);
  }
  return out;
}

void Dataset::validate() const {
  for (const auto& e : examples) {
    if (e.text_b.has_value() != (task_type == TaskType::text_pair)) {
      throw DataError("example " + e.id + ": text_b presence does not match task type " +
                      std::string(task_type_name(task_type)));
    }
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= num_classes) {
      throw DataError("example " + e.id + ": label " + std::to_string(e.label) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocab Vocab::build(const Dataset& data, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max_len must be positive");
  Vocab v;
  v.max_len_ = max_len;
  v.tokens_ = {"<pad>", "<unk>"};
  auto add = [&](const std::string& text) {
    for (auto& tok : tokenize(text)) {
      if (v.index_.count(tok)) continue;
      v.index_.emplace(tok, static_cast<int>(v.tokens_.size()));
      v.tokens_.push_back(std::move(tok));
    }
  };
  for (const Example* e : data.split(Split::train)) {
    add(e->text_a);
    if (e->text_b) add(*e->text_b);
  }
  return v;
}

int Vocab::index(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

EncodedBatch encode_batch(const Vocab& vocab, std::span<const Example* const> examples,
                          TaskType task_type) {
  EncodedBatch out;
  out.task_type = task_type;
  out.batch = examples.size();
  out.length = vocab.max_len();
  out.ids_a.assign(out.batch * out.length, Vocab::kPad);
  if (task_type == TaskType::text_pair) out.ids_b.assign(out.batch * out.length, Vocab::kPad);
  auto fill = [&](std::vector<int>& ids, std::size_t row, const std::string& text, const Example& e) {
    const auto tokens = tokenize(text);
    if (tokens.empty()) spdlog::warn("example {} has no tokens; encoding as padding", e.id);
    const std::size_t n = std::min(tokens.size(), out.length);
    for (std::size_t i = 0; i < n; ++i) ids[row * out.length + i] = vocab.index(tokens[i]);
  };
  for (std::size_t r = 0; r < examples.size(); ++r) {
    const Example& e = *examples[r];
    fill(out.ids_a, r, e.text_a, e);
    if (task_type == TaskType::text_pair) {
      if (!e.text_b) throw DataError("example " + e.id + " lacks text_b for a pair task");
      fill(out.ids_b, r, *e.text_b, e);
    }
    out.labels.push_back(e.label);
    out.example_ids.push_back(e.id);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, TaskType task_type) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty()) {
    throw DataError(path.string() + ":1: empty file (missing header)");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  std::optional<std::size_t> col_a, col_b;
  if (task_type == TaskType::single_text) {
    col_a = column("text");
    if (!col_a) col_a = column("text_a");
    if (!col_a) throw DataError(path.string() + ":1: missing column 'text'");
  } else {
    col_a = column("text_a");
    col_b = column("text_b");
    if (!col_a) throw DataError(path.string() + ":1: missing column 'text_a'");
    if (!col_b) throw DataError(path.string() + ":1: missing column 'text_b'");
  }
  const auto col_label = column("label");
  if (!col_label) throw DataError(path.string() + ":1: missing column 'label'");
  const auto col_split = column("split");

  Dataset data;
  data.task_type = task_type;
  int max_label = -1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    auto cell = [&](std::size_t i) -> const std::string& {
      if (i >= cells.size()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " columns, got " +
                        std::to_string(cells.size()));
      }
      return cells[i];
    };
    Example e;
    e.id = std::to_string(data.examples.size());
    e.text_a = cell(*col_a);
    if (col_b) e.text_b = cell(*col_b);
    const std::string& label = cell(*col_label);
    try {
      std::size_t used = 0;
      e.label = std::stoi(label, &used);
      if (used != label.size()) throw std::invalid_argument(label);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": label '" + label +
                      "' is not an integer");
    }
    if (e.label < 0) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": label " + label +
                      " out of range");
    }
    if (col_split) {
      const std::string& s = cell(*col_split);
      if (s == "train") {
        e.split = Split::train;
      } else if (s == "dev") {
        e.split = Split::dev;
      } else {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown split '" + s + "'");
      }
    }
    max_label = std::max(max_label, e.label);
    data.examples.push_back(std::move(e));
  }
  if (data.examples.empty()) throw DataError(path.string() + ":" + std::to_string(line_no) + ": no data rows");
  data.num_classes = static_cast<std::size_t>(max_label + 1);
  data.validate();
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset " + path.string());
  const bool pair = data.task_type == TaskType::text_pair;
  out << (pair ? "text_a\ttext_b" : "text") << "\tlabel\tsplit\n";
  for (const auto& e : data.examples) {
    out << e.text_a;
    if (pair) out << '\t' << e.text_b.value_or("");
    out << '\t' << e.label << '\t' << split_name(e.split) << '\n';
  }
}

std::string_view toy_task_name(ToyTaskKind k) noexcept {
  switch (k) {
    case ToyTaskKind::keyword_sentiment: return "keyword_sentiment";
    case ToyTaskKind::pair_overlap_equivalence: return "pair_overlap_equivalence";
    case ToyTaskKind::pair_order_entailment: return "pair_order_entailment";
  }
  return "unknown";
}

ToyTaskKind parse_toy_task(std::string_view name) {
  for (auto k : {ToyTaskKind::keyword_sentiment, ToyTaskKind::pair_overlap_equivalence,
                 ToyTaskKind::pair_order_entailment}) {
    if (toy_task_name(k) == name) return k;
  }
  throw ConfigError("unknown toy task '" + std::string(name) + "'");
}

TaskType toy_task_type(ToyTaskKind k) noexcept {
  return k == ToyTaskKind::keyword_sentiment ? TaskType::single_text : TaskType::text_pair;
}

int toy_rule_label(ToyTaskKind kind, const Example& e) {
  const auto a = tokenize(e.text_a);
  switch (kind) {
    case ToyTaskKind::keyword_sentiment:
      for (const auto& t : a) {
        if (std::find(kPositiveKeywords.begin(), kPositiveKeywords.end(), t) != kPositiveKeywords.end()) {
          return 1;
        }
      }
      return 0;
    case ToyTaskKind::pair_overlap_equivalence:
      return positional_match(a, tokenize(e.text_b.value_or(""))) >= 0.5 ? 1 : 0;
    case ToyTaskKind::pair_order_entailment: {
      std::vector<std::string> needle;
      for (auto& t : tokenize(e.text_b.value_or(""))) {
        if (t != kToyGapToken) needle.push_back(std::move(t));
      }
      return ordered_subsequence(needle, a) ? 1 : 0;
    }
  }
  return 0;
}

Dataset toy_task_generator(const ToyTaskSpec& spec) {
  if (spec.size < 100) throw ConfigError("toy task size must be at least 100");
  if (spec.vocab_size < 20) throw ConfigError("toy task vocab_size must be at least 20");
  if (spec.min_tokens < 2 || spec.max_tokens < spec.min_tokens) {
    throw ConfigError("toy task token range is invalid");
  }
  if (spec.label_noise < 0.0 || spec.label_noise > 0.5) {
    throw ConfigError("label_noise must lie in [0, 0.5]");
  }
  Rng rng(spec.seed);
  Dataset data;
  data.task_type = toy_task_type(spec.kind);
  data.num_classes = 2;

  std::vector<Example> by_class[2];
  for (std::size_t i = 0; i < spec.size; ++i) {
    const int want = static_cast<int>(i % 2);
    Example e;
    // Rejection keeps the planted rule authoritative and classes exactly balanced.
    do {
      switch (spec.kind) {
        case ToyTaskKind::keyword_sentiment: e = make_keyword(rng, spec, want); break;
        case ToyTaskKind::pair_overlap_equivalence: e = make_overlap(rng, spec, want); break;
        case ToyTaskKind::pair_order_entailment: e = make_entailment(rng, spec, want); break;
      }
      e.label = toy_rule_label(spec.kind, e);
    } while (e.label != want);
    by_class[want].push_back(std::move(e));
  }
  std::vector<Example> train, dev;
  for (auto& cls : by_class) {
    const std::size_t n_train = cls.size() * 4 / 5;
    for (std::size_t i = 0; i < cls.size(); ++i) {
      cls[i].split = i < n_train ? Split::train : Split::dev;
      (i < n_train ? train : dev).push_back(std::move(cls[i]));
    }
  }
  std::shuffle(train.begin(), train.end(), rng);
  std::shuffle(dev.begin(), dev.end(), rng);
  if (spec.label_noise > 0.0) {
    std::bernoulli_distribution flip(spec.label_noise);
    for (auto& e : train) {
      if (flip(rng)) e.label = 1 - e.label;
    }
  }
  for (auto& e : train) data.examples.push_back(std::move(e));
  for (auto& e : dev) data.examples.push_back(std::move(e));
  for (std::size_t i = 0; i < data.examples.size(); ++i) data.examples[i].id = std::to_string(i);
  data.validate();
  return data;
}

Dataset augment(const Dataset& data, double replace_prob, std::uint64_t seed, std::size_t copies) {
  if (replace_prob < 0.0 || replace_prob > 1.0) {
    throw ConfigError("replace_prob must lie in [0, 1]");
  }
  Dataset out = data;
  // Zero probability would only add verbatim duplicates.
  if (copies == 0 || replace_prob == 0.0) return out;
  std::vector<std::string> pool;
  {
    const Vocab v = Vocab::build(data);
    pool.assign(v.tokens().begin() + 2, v.tokens().end());
  }
  if (pool.size() < 2) return out;
  Rng rng(seed);
  std::bernoulli_distribution hit(replace_prob);
  auto perturb = [&](const std::string& text) {
    auto tokens = tokenize(text);
    for (auto& t : tokens) {
      if (!hit(rng)) continue;
      std::string repl;
      do {
        repl = pool[uniform_index(rng, pool.size())];
      } while (repl == t);
      t = std::move(repl);
    }
    return join(tokens);
  };
  for (const auto& e : data.examples) {
    if (e.split != Split::train) continue;
    for (std::size_t c = 1; c <= copies; ++c) {
      Example aug = e;
      aug.id = e.id + "#aug" + std::to_string(c);
      aug.text_a = perturb(e.text_a);
      if (e.text_b) aug.text_b = perturb(*e.text_b);
      out.examples.push_back(std::move(aug));
    }
  }
  return out;
}

}  // namespace adanas
