// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "adanas/errors.hpp"
#include "adanas/search.hpp"

namespace adanas {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() /
                 (std::string("adanas_search_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
  fs::create_directories(dir);
  return dir;
}

SearchConfig tiny(std::uint64_t seed = 1) {
  SearchConfig c;
  c.k_max = 3;
  c.nodes = 2;
  c.embed_dim = 6;
  c.max_len = 12;
  c.epochs = 2;
  c.batch_size = 16;
  c.seed = seed;
  return c;
}

Dataset toy(ToyTaskKind kind = ToyTaskKind::keyword_sentiment, std::size_t size = 160, std::uint64_t seed = 3) {
  ToyTaskSpec spec;
  spec.kind = kind;
  spec.size = size;
  spec.vocab_size = 40;
  spec.seed = seed;
  spec.min_tokens = 4;
  spec.max_tokens = 8;
  return toy_task_generator(spec);
}

std::shared_ptr<const TeacherKnowledge> teacher_for(const Dataset& d) {
  SyntheticTeacherConfig tc;
  tc.layers = 4;
  tc.hidden = 8;
  tc.max_len = 12;
  auto view = std::make_shared<TeacherView>(synthetic_teacher(d, d, tc).view);
  ProbeTrainingConfig pc;
  pc.epochs = 3;
  return std::make_shared<TeacherKnowledge>(view, train_probes(*view, d, pc));
}

TEST(SearchConfig, DefaultsFollowThePublishedSetup) {
  SearchConfig c;
  EXPECT_EQ(c.k_max, 8u);
  EXPECT_EQ(c.nodes, 3u);
  EXPECT_EQ(c.embed_dim, 128u);
  EXPECT_EQ(c.gamma, 0.8);
  EXPECT_EQ(c.beta, 4.0);
  EXPECT_EQ(c.temperature, 1.0);
  EXPECT_EQ(c.epochs, 80u);
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_lr_max, 2e-2);
  EXPECT_EQ(c.weight_lr_min, 5e-4);
  EXPECT_EQ(c.arch_lr, 3e-4);
  EXPECT_EQ(c.arch_weight_decay, 1e-3);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.candidates.size(), kNumOperations);
  EXPECT_NO_THROW(c.validate());
}

TEST(SearchConfig, TauScheduleEndpoints) {
  SearchConfig c;
  EXPECT_DOUBLE_EQ(c.tau_at(0), 5.0);
  EXPECT_DOUBLE_EQ(c.tau_at(79), 0.5);
  for (std::size_t e = 1; e < 80; ++e) EXPECT_LT(c.tau_at(e), c.tau_at(e - 1));
  c.tau_decay = TauDecay::exponential;
  EXPECT_DOUBLE_EQ(c.tau_at(0), 5.0);
  EXPECT_NEAR(c.tau_at(79), 0.5, 1e-12);
}

TEST(SearchConfig, JsonRoundTripAndUnknownKeys) {
  SearchConfig c = tiny(9);
  c.candidates = {OperationKind::skip, OperationKind::std_conv_3};
  c.tau_decay = TauDecay::exponential;
  const SearchConfig back = SearchConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.seed, 9u);
  EXPECT_THROW(SearchConfig::from_json(R"({"k_maxx": 3})"), ConfigError);
  EXPECT_THROW(SearchConfig::from_json(R"({"epochs": "many"})"), ConfigError);
  EXPECT_THROW(SearchConfig::from_json(R"({"candidates": ["conv9"]})"), ConfigError);
  EXPECT_THROW(SearchConfig::from_json("[1]"), ConfigError);
}

TEST(SearchConfig, Validation) {
  auto bad = [](auto mutate) {
    SearchConfig c;
    mutate(c);
    return c;
  };
  EXPECT_THROW(bad([](SearchConfig& c) { c.k_max = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SearchConfig& c) { c.gamma = 1.5; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SearchConfig& c) { c.tau_end = 0.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SearchConfig& c) { c.weight_lr_min = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](SearchConfig& c) { c.candidates.clear(); }).validate(), ConfigError);
  EXPECT_THROW(bad([](SearchConfig& c) { c.candidates.push_back(OperationKind::skip); }).validate(), ConfigError);
  EXPECT_THROW(bad([](SearchConfig& c) { c.batch_size = 0; }).validate(), ConfigError);
}

TEST(Search, DecompositionHoldsEveryStep) {
  Dataset d = toy();
  auto teacher = teacher_for(d);
  SearchSession s(tiny(), d, teacher);
  while (!s.finished()) {
    const EpochRecord r = s.run_epoch();
    EXPECT_LE(r.max_decomposition_error, 1e-9);
    EXPECT_NEAR(r.loss, 0.2 * r.ce + 0.8 * r.kd + 4.0 * r.eff, 1e-9);
    EXPECT_GT(r.kd, 0.0);
    EXPECT_GT(r.eff, 0.0);
  }
}

TEST(Search, PlainSupervisedBoundary) {
  Dataset d = toy();
  SearchConfig c = tiny();
  c.gamma = 0.0;
  c.beta = 0.0;
  const SearchRunReport r = search(c, d, nullptr);
  ASSERT_EQ(r.epochs.size(), 2u);
  for (const auto& e : r.epochs) {
    EXPECT_EQ(e.kd, 0.0);
    EXPECT_EQ(e.eff, 0.0);
    EXPECT_EQ(e.loss, e.ce);
  }
}

TEST(Search, NeedsTeacherForKnowledgeTerm) {
  Dataset d = toy();
  EXPECT_THROW(SearchSession(tiny(), d, nullptr), ConfigError);
}

TEST(Search, TeacherMustCoverTrainIds) {
  Dataset d = toy();
  auto teacher = teacher_for(d);
  Dataset other = toy(ToyTaskKind::keyword_sentiment, 200, 4);
  for (auto& e : other.examples) e.id = "x" + e.id;
  EXPECT_THROW(SearchSession(tiny(), other, teacher), DataError);
}

TEST(Search, DeterministicUnderFixedSeed) {
  Dataset d = toy();
  auto teacher = teacher_for(d);
  const SearchRunReport a = search(tiny(5), d, teacher);
  const SearchRunReport b = search(tiny(5), d, teacher);
  EXPECT_EQ(a.to_jsonl(), b.to_jsonl());
  EXPECT_EQ(a.child, b.child);
}

TEST(Search, ReportIsLineDelimited) {
  Dataset d = toy();
  SearchConfig c = tiny();
  c.gamma = 0.0;
  const SearchRunReport r = search(c, d, nullptr);
  std::istringstream in(r.to_jsonl());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    EXPECT_EQ(line.front(), '{');
  }
  EXPECT_EQ(lines, 3u);
  EXPECT_NE(r.to_jsonl().find("\"final\":true"), std::string::npos);
  EXPECT_EQ(r.epochs.back().child, r.child);
}

TEST(Search, CheckpointResumeIsBitwise) {
  Dataset d = toy();
  auto teacher = teacher_for(d);
  SearchConfig c = tiny(2);
  c.epochs = 3;
  const fs::path dir = temp_dir();

  SearchSession straight(c, d, teacher);
  straight.run_epoch();
  straight.save_checkpoint(dir / "ck.bin");
  const EpochRecord expected = straight.run_epoch();
  straight.run_epoch();

  SearchSession resumed(c, d, teacher);
  resumed.load_checkpoint(dir / "ck.bin");
  EXPECT_EQ(resumed.epochs_done(), 1u);
  const EpochRecord got = resumed.run_epoch();
  EXPECT_EQ(got.loss, expected.loss);
  EXPECT_EQ(got.ce, expected.ce);
  EXPECT_EQ(got.kd, expected.kd);
  EXPECT_EQ(got.eff, expected.eff);
  resumed.run_epoch();
  EXPECT_EQ(resumed.report().to_jsonl(), straight.report().to_jsonl());
  EXPECT_EQ(resumed.net().arch.theta_o.value, straight.net().arch.theta_o.value);

  SearchOptions opts{dir / "run.bin", true};
  const SearchRunReport full = search(c, d, teacher, opts);
  EXPECT_EQ(full.to_jsonl(), straight.report().to_jsonl());
  const SearchRunReport again = search(c, d, teacher, opts);  // already finished: loads and derives
  EXPECT_EQ(again.to_jsonl(), full.to_jsonl());
  EXPECT_EQ(derive_from_checkpoint(dir / "run.bin"), full.child);
  const CheckpointArchitecture arch = read_checkpoint_architecture(dir / "run.bin");
  EXPECT_EQ(arch.epochs_done, 3u);
  EXPECT_EQ(arch.config.to_json(), c.to_json());
  fs::remove_all(dir);
}

TEST(Search, CheckpointRejectsOtherConfigAndCorruption) {
  Dataset d = toy();
  SearchConfig c = tiny();
  c.gamma = 0.0;
  const fs::path dir = temp_dir();
  SearchSession s(c, d, nullptr);
  s.run_epoch();
  s.save_checkpoint(dir / "ck.bin");
  SearchConfig other = c;
  other.beta = 1.0;
  SearchSession t(other, d, nullptr);
  EXPECT_THROW(t.load_checkpoint(dir / "ck.bin"), DataError);
  const auto size = fs::file_size(dir / "ck.bin");
  fs::resize_file(dir / "ck.bin", size / 2);
  SearchSession u(c, d, nullptr);
  EXPECT_THROW(u.load_checkpoint(dir / "ck.bin"), DataError);
  EXPECT_THROW(u.load_checkpoint(dir / "missing.bin"), DataError);
  fs::remove_all(dir);
}

TEST(Search, EfficiencyAloneMovesOperationLogits) {
  Dataset d = toy();
  SearchConfig c = tiny();
  c.gamma = 1.0;
  c.beta = 4.0;
  SearchSession s(c, d, teacher_for(d));
  // Measure the gradient of the efficiency term only.
  Tape tape;
  Rng rng(3);
  ArchSample sample = sample_architecture(tape, s.net().arch, rng, SampleMode::hard);
  Var eff = efficiency_loss(sample.layers, sample.edges, c.candidates, build_cost_table(c.embed_dim, c.max_len));
  tape.backward(eff);
  double norm = 0.0;
  for (double g : s.net().arch.theta_o.grad.data()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(Search, HugeBetaCollapsesToFreeOps) {
  Dataset d = toy();
  SearchConfig c = tiny();
  c.gamma = 0.0;
  c.beta = 100.0;
  c.epochs = 20;
  c.arch_lr = 3e-2;
  const SearchRunReport r = search(c, d, nullptr);
  EXPECT_EQ(r.child.k, 1u);
  for (auto op : r.child.ops) EXPECT_TRUE(op == OperationKind::zero || op == OperationKind::skip);
}

TEST(ChildCost, MatchesBuiltNetwork) {
  Rng rng(4);
  SearchConfig c = tiny();
  for (int trial = 0; trial < 20; ++trial) {
    const ChildGraph g = random_child(c, TaskType::single_text, rng);
    ChildNet net(g, 37, 3, 1);
    std::size_t counted = 0;
    for (auto* p : net.parameters()) counted += p->value.size();
    EXPECT_EQ(child_cost(g, 37, 3, c.max_len).total_params(), counted) << g.encoding();
  }
}

TEST(ChildCost, AllSkipHasNoCellParameters) {
  ChildGraph g;
  g.k = 2;
  g.nodes = 2;
  g.embed_dim = 4;
  g.ops.assign(CellTopology(2).num_edges(), OperationKind::skip);
  const ChildCost cost = child_cost(g, 10, 2, 8);
  EXPECT_EQ(cost.cell_ops, 0u);
  EXPECT_EQ(cost.cell_flops, 0u);
  EXPECT_EQ(cost.embedding, 40u);
  EXPECT_EQ(cost.head, 10u);
}

TEST(Evaluate, EmptySplitIsValidationError) {
  Dataset d = toy();
  for (auto& e : d.examples) e.split = Split::train;
  Vocab v = Vocab::build(d, 12);
  Rng rng(1);
  ChildGraph g = random_child(tiny(), TaskType::single_text, rng);
  ChildNet net(g, v.size(), 2, 1);
  EXPECT_THROW(evaluate(net, v, d, Split::dev), ValidationError);
}

TEST(Evaluate, MatchesManualCount) {
  Dataset d = toy();
  std::size_t kept = 0;
  Dataset small = d;
  small.examples.clear();
  for (const auto& e : d.examples) {
    if (e.split == Split::dev && kept < 10) {
      small.examples.push_back(e);
      ++kept;
    } else if (e.split == Split::train) {
      small.examples.push_back(e);
    }
  }
  Vocab v = Vocab::build(small, 12);
  Rng rng(2);
  ChildNet net(random_child(tiny(), TaskType::single_text, rng), v.size(), 2, 3);
  const EvalResult r = evaluate(net, v, small, Split::dev, 3);
  std::size_t correct = 0;
  for (const Example* e : small.split(Split::dev)) {
    const Example* one[] = {e};
    Tape tape;
    auto out = net.forward(tape, encode_batch(v, one, small.task_type), BnMode::eval);
    correct += static_cast<int>(argmax(out.logits.value().data())) == e->label;
  }
  EXPECT_EQ(r.total, 10u);
  EXPECT_EQ(r.correct, correct);
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(correct) / 10.0);
  EXPECT_EQ(r.class_total[0] + r.class_total[1], 10u);
}

TEST(TrainChild, AllZeroChildPredictsMajorityRate) {
  Dataset d = toy();
  SearchConfig c = tiny();
  c.gamma = 0.0;
  c.epochs = 3;
  ChildGraph g;
  g.k = 1;
  g.nodes = c.nodes;
  g.embed_dim = c.embed_dim;
  g.ops.assign(CellTopology(c.nodes).num_edges(), OperationKind::zero);
  TrainedChild t = train_child(g, d, c, nullptr);
  const EvalResult r = evaluate(*t.net, t.vocab, d, Split::dev);
  const double majority =
      static_cast<double>(std::max(r.class_total[0], r.class_total[1])) / static_cast<double>(r.total);
  EXPECT_LE(r.accuracy, majority + 1e-12);
  EXPECT_EQ(r.accuracy, t.result.best_dev_accuracy);
}

TEST(TrainChild, LearnsKeywordSentiment) {
  Dataset d = toy(ToyTaskKind::keyword_sentiment, 400);
  SearchConfig c = tiny();
  c.gamma = 0.0;
  c.epochs = 12;
  ChildGraph g;
  g.k = 1;
  g.nodes = c.nodes;
  g.embed_dim = 16;
  c.embed_dim = 16;
  g.ops = {OperationKind::std_conv_3, OperationKind::skip, OperationKind::max_pool_3, OperationKind::skip,
           OperationKind::skip};
  g.ops.resize(CellTopology(c.nodes).num_edges(), OperationKind::skip);
  TrainedChild t = train_child(g, d, c, nullptr);
  EXPECT_GE(t.result.best_dev_accuracy, 0.9);
  EXPECT_GE(t.result.best_epoch, 1u);
  EXPECT_EQ(t.result.dev_accuracy.size(), 12u);
}

TEST(TrainChild, WeightsRoundTrip) {
  Dataset d = toy();
  SearchConfig c = tiny();
  c.gamma = 0.0;
  Rng rng(8);
  const ChildGraph g = random_child(c, TaskType::single_text, rng);
  TrainedChild t = train_child(g, d, c, nullptr);
  const fs::path dir = temp_dir();
  save_child_weights(*t.net, dir / "w.bin");
  ChildNet fresh(g, t.vocab.size(), 2, 99);
  load_child_weights(fresh, dir / "w.bin");
  EXPECT_EQ(evaluate(fresh, t.vocab, d, Split::dev).mean_loss, evaluate(*t.net, t.vocab, d, Split::dev).mean_loss);
  ChildGraph other = g;
  other.k = g.k == 1 ? 2 : 1;
  ChildNet mismatch(other, t.vocab.size(), 2, 1);
  EXPECT_THROW(load_child_weights(mismatch, dir / "w.bin"), DataError);
  fs::remove_all(dir);
}

TEST(TrainChild, KnowledgeTermChangesTraining) {
  Dataset d = toy();
  auto teacher = teacher_for(d);
  SearchConfig c = tiny();
  Rng rng(8);
  const ChildGraph g = random_child(c, TaskType::single_text, rng);
  TrainedChild with = train_child(g, d, c, teacher);
  c.gamma = 0.0;
  TrainedChild without = train_child(g, d, c, teacher);
  EXPECT_NE(with.result.train_loss, without.result.train_loss);
}

SearchConfig enum_config() {
  SearchConfig c = tiny();
  c.nodes = 1;
  c.k_max = 2;
  c.candidates = {OperationKind::std_conv_3, OperationKind::max_pool_3, OperationKind::zero};
  c.gamma = 0.0;
  c.epochs = 1;
  return c;
}

TEST(Enumerate, CountsTheRestrictedSpace) {
  const auto children = enumerate_children(enum_config(), TaskType::single_text);
  EXPECT_EQ(children.size(), 18u);
  std::set<std::string> keys;
  for (const auto& c : children) keys.insert(c.encoding());
  EXPECT_EQ(keys.size(), 18u);
  EXPECT_TRUE(std::is_sorted(children.begin(), children.end(),
                             [](const auto& a, const auto& b) { return a.encoding() < b.encoding(); }));
}

TEST(Enumerate, GuardRejectsLargeSpaces) {
  SearchConfig c = tiny();
  c.nodes = 3;
  EXPECT_GT(enumeration_size(c), kEnumerationLimit);
  EXPECT_THROW(enumerate_children(c, TaskType::single_text), GuardError);
  EXPECT_THROW(enumerate_and_rank(c, toy(), nullptr), GuardError);
}

TEST(Enumerate, RankingIsDeterministicAcrossWorkerCounts) {
  Dataset d = toy();
  const auto one = enumerate_and_rank(enum_config(), d, nullptr, 1);
  const auto three = enumerate_and_rank(enum_config(), d, nullptr, 3);
  ASSERT_EQ(one.size(), 18u);
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].child, three[i].child);
    EXPECT_EQ(one[i].dev_loss, three[i].dev_loss);
  }
  for (std::size_t i = 1; i < one.size(); ++i) EXPECT_LE(one[i - 1].dev_loss, one[i].dev_loss);
}

TEST(Enumerate, RandomChildrenAreValidAndVaried) {
  SearchConfig c = tiny();
  Rng rng(1);
  std::set<std::string> seen;
  for (int i = 0; i < 50; ++i) {
    const ChildGraph g = random_child(c, TaskType::text_pair, rng);
    EXPECT_NO_THROW(g.validate());
    EXPECT_GE(g.k, 1u);
    EXPECT_LE(g.k, c.k_max);
    seen.insert(g.encoding());
  }
  EXPECT_GT(seen.size(), 40u);
}

}  // namespace
}  // namespace adanas
