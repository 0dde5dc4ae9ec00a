#include <gtest/gtest.h>

#include <map>
#include <random>

#include "compactnet/errors.hpp"
#include "compactnet/search.hpp"
#include "test_util.hpp"

namespace compactnet {
namespace {

using testing::noise_free;

struct Fixture {
  NetworkSpec spec = micro_mobilenet_spec(4);
  Model model = build_model(spec, 3);
  DatasetPair data = synthetic_dataset(4, 8, 8, 1);
  PlatformProfile profile =
      collect_profile(*synthetic_backend(noise_free(1e-3, 2e-3, 0.5, 1), spec), spec, 1);
};

// No training; accuracy read from a table keyed by the trimmed slot.
SearchHooks rigged(std::map<int, double> score_by_slot, const NetworkSpec& original) {
  SearchHooks h;
  h.fine_tune = [](Model m, const Dataset&, const Dataset&, const TrainConfig&) { return m; };
  h.evaluate = [score_by_slot, original](const Model& m, const Dataset&) {
    double score = 0.5;
    for (const auto& [slot, value] : score_by_slot) {
      if (m.spec.layer(slot).out_channels != original.layer(slot).out_channels) score = value;
    }
    return score;
  };
  return h;
}

SearchHooks no_training() {
  SearchHooks h;
  h.fine_tune = [](Model m, const Dataset&, const Dataset&, const TrainConfig&) { return m; };
  // Deterministic stand-in for accuracy: favors keeping the wide layers.
  h.evaluate = [](const Model& m, const Dataset&) {
    double s = 0.0;
    const auto counts = filter_counts(m.spec);
    for (size_t i = 0; i < counts.size(); ++i) s += counts[i] * (1.0 + 0.1 * static_cast<double>(i));
    return s / 100.0;
  };
  return h;
}

TEST(TrimToBudget, AlreadyWithinBudgetIsUnchanged) {
  Fixture f;
  const double lat = simulate(f.profile, f.spec);
  const auto out = trim_to_budget(f.model, f.profile, 2, lat, 1);
  EXPECT_TRUE(out.feasible);
  EXPECT_EQ(out.model, f.model);
  EXPECT_EQ(out.kept.size(), 12u);
  EXPECT_THROW(trim_to_budget(f.model, f.profile, 2, 0.0, 1), ConfigError);
  EXPECT_THROW(trim_to_budget(f.model, f.profile, 5, lat, 1), SpecError);
}

TEST(TrimToBudget, ConstantTableIsInfeasible) {
  Fixture f;
  PlatformProfile flat = f.profile;
  for (auto& [_, t] : flat.tables) std::fill(t.latencies.begin(), t.latencies.end(), 1.0);
  const auto out = trim_to_budget(f.model, flat, 3, simulate(flat, f.spec) - 0.5, 1);
  EXPECT_FALSE(out.feasible);
}

TEST(TrimToBudget, CountIsLargestMeetingBudget) {
  Fixture f;
  const double base = simulate(f.profile, f.spec);
  for (int slot : trimmable_layers(f.spec)) {
    for (int b = 1; b <= 20; ++b) {
      const double budget = base * (1.0 - 0.01 * b);
      int oracle = 0;
      for (int c = 1; c <= f.spec.layer(slot).out_channels; ++c) {
        if (simulate(f.profile, trim_layer(f.spec, slot, c)) <= budget) oracle = c;
      }
      const auto out = trim_to_budget(f.model, f.profile, slot, budget, 1);
      if (oracle == 0) {
        EXPECT_FALSE(out.feasible);
      } else {
        ASSERT_TRUE(out.feasible);
        EXPECT_EQ(out.model.spec.layer(slot).out_channels, oracle);
        EXPECT_LE(out.latency_us, budget);
      }
    }
  }
}

TEST(TrimToBudget, KeepsLargestNorms) {
  Fixture f;
  std::mt19937 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    Model m = build_model(f.spec, gen());
    const auto slots = trimmable_layers(f.spec);
    const int slot = slots[gen() % slots.size()];
    const int width = f.spec.layer(slot).out_channels;
    const int target = 1 + static_cast<int>(gen() % static_cast<unsigned>(width - 1));
    const double budget = simulate(f.profile, trim_layer(f.spec, slot, target));
    const auto out = trim_to_budget(m, f.profile, slot, budget, 1);
    ASSERT_TRUE(out.feasible);
    const int count = static_cast<int>(out.kept.size());
    const auto norms = filter_l2_norms(m, slot);
    std::vector<int> idx(norms.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return norms[static_cast<size_t>(a)] != norms[static_cast<size_t>(b)]
                 ? norms[static_cast<size_t>(a)] > norms[static_cast<size_t>(b)]
                 : a < b;
    });
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(out.kept, idx);
  }
}

TEST(RunIteration, RiggedEvaluatorPicksArgmax) {
  Fixture f;
  SearchConfig cfg;
  cfg.t_final = 1.1;
  cfg.n_iterations = 1;
  const auto plan = schedule(cfg, simulate(f.profile, f.spec));
  const std::map<int, double> table = {{0, 0.2}, {1, 0.4}, {2, 0.9}, {3, 0.3}, {4, 0.1}};
  const auto state = initial_state(f.model, f.profile, f.data.validation, rigged(table, f.spec));
  const auto next = run_iteration(state, cfg, plan, f.profile, f.data.train, f.data.validation,
                                  rigged(table, f.spec));
  ASSERT_EQ(next.history.size(), 1u);
  int expected = -1;
  double best = -1;
  for (const auto& c : next.history[0].candidates) {
    if (c.feasible && table.at(c.slot_id) > best) {
      best = table.at(c.slot_id);
      expected = c.slot_id;
    }
  }
  EXPECT_EQ(next.history[0].selected_slot, expected);
  EXPECT_EQ(expected, 2);
  int changed = 0;
  for (const auto& l : f.spec.layers) {
    changed += next.model.spec.layer(l.slot_id).out_channels != l.out_channels;
  }
  EXPECT_EQ(changed, 1);
}

TEST(RunIteration, TiesBreakOnLatencyThenSlot) {
  Fixture f;
  SearchConfig cfg;
  cfg.t_final = 1.05;
  cfg.n_iterations = 1;
  const auto plan = schedule(cfg, simulate(f.profile, f.spec));
  SearchHooks flat = no_training();
  flat.evaluate = [](const Model&, const Dataset&) { return 0.5; };
  const auto state = initial_state(f.model, f.profile, f.data.validation, flat);
  const auto next =
      run_iteration(state, cfg, plan, f.profile, f.data.train, f.data.validation, flat);
  const auto& cands = next.history[0].candidates;
  const CandidateRecord* expected = nullptr;
  for (const auto& c : cands) {
    if (!c.feasible) continue;
    if (!expected || c.latency_us < expected->latency_us) expected = &c;
  }
  ASSERT_NE(expected, nullptr);
  EXPECT_EQ(next.history[0].selected_slot, expected->slot_id);
}

TEST(RunIteration, AllInfeasibleThrowsWithPartialLog) {
  Fixture f;
  PlatformProfile flat = f.profile;
  for (auto& [_, t] : flat.tables) std::fill(t.latencies.begin(), t.latencies.end(), 1.0);
  SearchConfig cfg;
  cfg.t_final = 1.2;
  cfg.n_iterations = 2;
  try {
    run_search(cfg, f.model, flat, f.data.train, f.data.validation, no_training());
    FAIL();
  } catch (const TargetUnreachable& e) {
    EXPECT_EQ(e.iteration(), 0);
    EXPECT_DOUBLE_EQ(e.budget_us(), simulate(flat, f.spec) / (1.0 + 0.2 / (1.0 + 0.96)));
    EXPECT_EQ(e.best_latency_us(), simulate(flat, f.spec));
    ASSERT_EQ(e.partial_log().iterations.size(), 1u);
    EXPECT_EQ(e.partial_log().iterations[0].candidates.size(), 5u);
  }
}

TEST(RunSearch, MeetsTargetAndOneLayerPerIteration) {
  Fixture f;
  SearchConfig cfg;
  cfg.t_final = 1.6;
  cfg.n_iterations = 8;
  cfg.decay = 0.9;
  const auto r = run_search(cfg, f.model, f.profile, f.data.train, f.data.validation, no_training());
  ASSERT_TRUE(r.completed);
  const double l0 = simulate(f.profile, f.spec);
  EXPECT_GE(l0 / simulate(f.profile, r.model.spec), 1.6);
  EXPECT_TRUE(audit_one_layer_per_iteration(r.log).empty());
  ASSERT_EQ(r.log.iterations.size(), 8u);
  for (size_t i = 0; i < r.log.iterations.size(); ++i) {
    EXPECT_LE(r.log.iterations[i].latency_us, r.log.schedule.latency_budgets[i]);
  }
}

TEST(RunSearch, BarelyAboveOneRemovesASingleFilter) {
  Fixture f;
  SearchConfig cfg;
  cfg.t_final = 1.0 + 1e-9;
  cfg.n_iterations = 3;
  const auto r = run_search(cfg, f.model, f.profile, f.data.train, f.data.validation, no_training());
  const auto before = filter_counts(f.spec);
  const auto after = filter_counts(r.model.spec);
  int removed = 0;
  for (size_t i = 0; i < before.size(); ++i) removed += before[i] - after[i];
  EXPECT_EQ(removed, 1);
  ASSERT_EQ(r.log.iterations.size(), 3u);
  EXPECT_EQ(r.log.iterations[1].filter_counts, r.log.iterations[0].filter_counts);
  EXPECT_EQ(r.log.iterations[2].filter_counts, r.log.iterations[0].filter_counts);
}

TEST(RunSearch, DeterministicAndJobIndependent) {
  Fixture f;
  const auto data = synthetic_dataset(4, 48, 24, 2);
  SearchConfig cfg;
  cfg.t_final = 1.3;
  cfg.n_iterations = 2;
  cfg.finetune.epochs = 1;
  cfg.finetune.batch_size = 16;
  cfg.retrain.epochs = 1;
  cfg.seed = 5;
  SearchOptions serial, parallel;
  parallel.jobs = 3;
  const auto a = run_search(cfg, f.model, f.profile, data.train, data.validation, {}, serial);
  const auto b = run_search(cfg, f.model, f.profile, data.train, data.validation, {}, parallel);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(to_json(a.log).dump(), to_json(b.log).dump());
}

TEST(RunSearch, ResumeMatchesUninterrupted) {
  Fixture f;
  SearchConfig cfg;
  cfg.t_final = 1.5;
  cfg.n_iterations = 6;
  const auto hooks = no_training();
  const auto full = run_search(cfg, f.model, f.profile, f.data.train, f.data.validation, hooks);

  SearchState saved;
  SearchOptions stop;
  stop.on_iteration = [&](const SearchState& s, const SearchLog&) {
    saved = s;
    return s.iteration < 3;
  };
  const auto partial = run_search(cfg, f.model, f.profile, f.data.train, f.data.validation, hooks, stop);
  EXPECT_FALSE(partial.completed);
  EXPECT_EQ(saved.iteration, 3);
  const auto resumed = continue_search(cfg, saved, full.log.pretrained_accuracy, f.profile,
                                       f.data.train, f.data.validation, hooks);
  EXPECT_EQ(resumed.model, full.model);
  EXPECT_EQ(to_json(resumed.log).dump(), to_json(full.log).dump());
}

TEST(SearchLog, JsonRoundTrip) {
  Fixture f;
  SearchConfig cfg;
  cfg.t_final = 1.3;
  cfg.n_iterations = 3;
  const auto r = run_search(cfg, f.model, f.profile, f.data.train, f.data.validation, no_training());
  const auto doc = to_json(r.log);
  EXPECT_EQ(search_log_from_json(nlohmann::json::parse(doc.dump())), r.log);
  const auto& cand = doc["iterations"][0]["candidates"][0];
  std::vector<std::string> keys;
  for (const auto& [k, _] : cand.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"slot", "kept", "latency_us", "accuracy",
                                            "feasible", "selected"}));
}

TEST(Auditor, FlagsMultiLayerAndGrowth) {
  SearchLog log;
  log.original_filter_counts = {8, 8, 12};
  IterationRecord a;
  a.iteration = 0;
  a.filter_counts = {7, 8, 12};
  IterationRecord b;
  b.iteration = 1;
  b.filter_counts = {6, 7, 12};
  IterationRecord c;
  c.iteration = 2;
  c.filter_counts = {6, 8, 12};
  log.iterations = {a};
  EXPECT_TRUE(audit_one_layer_per_iteration(log).empty());
  log.iterations = {a, b};
  EXPECT_EQ(audit_one_layer_per_iteration(log).size(), 1u);
  log.iterations = {a, b, c};
  EXPECT_EQ(audit_one_layer_per_iteration(log).size(), 2u);
}

TEST(Cross, IdenticalProfilesGiveSymmetricMatrix) {
  Fixture f;
  SearchConfig cfg;
  cfg.t_final = 1.3;
  cfg.n_iterations = 3;
  const auto r = cross_platform_experiment(cfg, f.model, f.profile, f.profile, f.data.train,
                                           f.data.validation, no_training());
  EXPECT_EQ(r.speedup[0][1], r.speedup[0][0]);
  EXPECT_EQ(r.speedup[1][0], r.speedup[1][1]);
  EXPECT_EQ(r.speedup[0][0], r.speedup[1][1]);
  EXPECT_EQ(r.filters[0], r.filters[1]);
}

TEST(Seeds, IndependentOfOrderAndDistinct) {
  EXPECT_EQ(candidate_seed(1, 2, 3), candidate_seed(1, 2, 3));
  EXPECT_NE(candidate_seed(1, 2, 3), candidate_seed(1, 3, 2));
  EXPECT_NE(candidate_seed(1, 2, 3), reinit_seed(1, 2, 3));
  EXPECT_NE(retrain_seed(1), retrain_seed(2));
}

}  // namespace
}  // namespace compactnet
