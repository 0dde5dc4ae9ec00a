#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "compactnet/rng.hpp"
#include "compactnet/search.hpp"

namespace compactnet {

TargetUnreachable::TargetUnreachable(int iteration, double budget_us,
                                     double best_latency_us,
                                     SearchLog partial_log)
    : Error([&] {
        std::ostringstream msg;
        msg << "target unreachable at iteration " << iteration
            << ": budget " << budget_us << " us, best achievable "
            << best_latency_us << " us";
        return msg.str();
      }()),
      iteration_(iteration),
      budget_us_(budget_us),
      best_latency_us_(best_latency_us),
      partial_log_(std::move(partial_log)) {}

uint64_t candidate_seed(uint64_t search_seed, int iteration, int slot_id) {
  return derive_seed({search_seed, static_cast<uint64_t>(iteration),
                      static_cast<uint64_t>(slot_id), 0});
}

uint64_t reinit_seed(uint64_t search_seed, int iteration, int slot_id) {
  return derive_seed({search_seed, static_cast<uint64_t>(iteration),
                      static_cast<uint64_t>(slot_id), 1});
}

uint64_t retrain_seed(uint64_t search_seed) {
  return derive_seed({search_seed, 0x7265747261696eULL});
}

SearchHooks default_hooks() {
  SearchHooks hooks;
  hooks.fine_tune = [](Model model, const Dataset& train_set, const Dataset& val,
                       const TrainConfig& cfg) {
    return train(std::move(model), train_set, val, cfg).model;
  };
  hooks.evaluate = [](const Model& model, const Dataset& data) {
    return evaluate(model, data);
  };
  return hooks;
}

namespace {

SearchHooks complete(SearchHooks hooks) {
  SearchHooks defaults = default_hooks();
  if (!hooks.fine_tune) hooks.fine_tune = defaults.fine_tune;
  if (!hooks.evaluate) hooks.evaluate = defaults.evaluate;
  return hooks;
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads. The first
// exception (by index) is rethrown after all workers finish.
template <typename Fn>
void parallel_for(size_t count, int jobs, Fn fn) {
  const size_t workers =
      std::min(count, static_cast<size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

TrimOutcome trim_to_budget(const Model& model, const PlatformProfile& profile,
                           int slot_id, double budget_us, int min_filters,
                           uint64_t reinit_seed) {
  if (!(budget_us > 0.0)) throw ConfigError("latency budget must be positive");
  const LayerSpec& layer = model.spec.layer(slot_id);
  if (!layer.trimmable) {
    throw SpecError("slot " + std::to_string(slot_id) + " is not trimmable");
  }
  const int current = layer.out_channels;

  TrimOutcome outcome;
  outcome.latency_us = simulate(profile, model.spec);
  if (outcome.latency_us <= budget_us) {
    outcome.feasible = true;
    outcome.model = model;
    outcome.kept.resize(static_cast<size_t>(current));
    std::iota(outcome.kept.begin(), outcome.kept.end(), 0);
    return outcome;
  }

  int count = current - 1;
  double latency = outcome.latency_us;
  for (; count >= std::max(1, min_filters); --count) {
    latency = simulate(profile, trim_layer(model.spec, slot_id, count));
    if (latency <= budget_us) break;
  }
  if (count < std::max(1, min_filters)) {
    outcome.model = model;
    // Best achievable is the smallest latency seen along the way.
    if (current > std::max(1, min_filters)) {
      outcome.latency_us = std::min(outcome.latency_us, latency);
    }
    return outcome;
  }
  const auto norms = filter_l2_norms(model, slot_id);
  outcome.kept = top_filters(norms, count);
  outcome.model = remove_filters(model, slot_id, outcome.kept, reinit_seed);
  outcome.latency_us = latency;
  outcome.feasible = true;
  return outcome;
}

SearchState initial_state(const Model& pretrained,
                          const PlatformProfile& profile, const Dataset& val,
                          const SearchHooks& hooks) {
  const SearchHooks h = complete(hooks);
  check_model(pretrained);
  SearchState state;
  state.model = pretrained;
  state.original_latency_us = simulate(profile, pretrained.spec);
  state.accuracy = h.evaluate(pretrained, val);
  state.original_filter_counts = filter_counts(pretrained.spec);
  return state;
}

SearchLog make_log(const SearchState& state, const TargetSchedule& schedule,
                   double pretrained_accuracy) {
  SearchLog log;
  log.schedule = schedule;
  log.pretrained_accuracy = pretrained_accuracy;
  log.original_filter_counts = state.original_filter_counts;
  log.iterations = state.history;
  return log;
}

SearchState run_iteration(const SearchState& state, const SearchConfig& cfg,
                          const TargetSchedule& schedule,
                          const PlatformProfile& profile, const Dataset& train,
                          const Dataset& val, const SearchHooks& hooks,
                          int jobs) {
  const SearchHooks h = complete(hooks);
  const int i = state.iteration;
  if (i < 0 || i >= cfg.n_iterations ||
      static_cast<size_t>(i) >= schedule.latency_budgets.size()) {
    throw ConfigError("iteration " + std::to_string(i) + " outside schedule");
  }
  const double budget = schedule.latency_budgets[static_cast<size_t>(i)];
  const std::vector<int> slots = trimmable_layers(state.model.spec);

  struct Candidate {
    CandidateRecord record;
    Model model;
  };
  std::vector<Candidate> candidates(slots.size());
  parallel_for(slots.size(), jobs, [&](size_t c) {
    const int slot = slots[c];
    TrimOutcome trimmed =
        trim_to_budget(state.model, profile, slot, budget, cfg.min_filters,
                       reinit_seed(cfg.seed, i, slot));
    Candidate& out = candidates[c];
    out.record.slot_id = slot;
    out.record.latency_us = trimmed.latency_us;
    out.record.feasible = trimmed.feasible;
    if (!trimmed.feasible) return;
    out.record.kept = std::move(trimmed.kept);
    TrainConfig tune = cfg.finetune;
    tune.seed = candidate_seed(cfg.seed, i, slot);
    out.model = h.fine_tune(std::move(trimmed.model), train, val, tune);
    out.record.accuracy = h.evaluate(out.model, val);
  });

  // Highest accuracy, then lower latency, then lower slot id.
  int best = -1;
  double best_latency = std::numeric_limits<double>::infinity();
  for (size_t c = 0; c < candidates.size(); ++c) {
    const CandidateRecord& r = candidates[c].record;
    best_latency = std::min(best_latency, r.latency_us);
    if (!r.feasible) continue;
    if (best < 0) {
      best = static_cast<int>(c);
      continue;
    }
    const CandidateRecord& b = candidates[static_cast<size_t>(best)].record;
    if (r.accuracy > b.accuracy ||
        (r.accuracy == b.accuracy && r.latency_us < b.latency_us)) {
      best = static_cast<int>(c);
    }
  }

  IterationRecord record;
  record.iteration = i;
  record.budget_us = budget;
  record.cumulative_factor = schedule.cumulative_factors[static_cast<size_t>(i)];
  for (const Candidate& c : candidates) record.candidates.push_back(c.record);

  if (best < 0) {
    SearchState failed = state;
    failed.history.push_back(record);
    throw TargetUnreachable(i, budget, best_latency,
                            make_log(failed, schedule, 0.0));
  }

  Candidate& winner = candidates[static_cast<size_t>(best)];
  record.candidates[static_cast<size_t>(best)].selected = true;
  record.selected_slot = winner.record.slot_id;
  record.filter_counts = filter_counts(winner.model.spec);
  record.latency_us = winner.record.latency_us;
  record.accuracy = winner.record.accuracy;

  if (simulate(profile, winner.model.spec) > budget) {
    throw std::logic_error("selected candidate exceeds its latency budget");
  }

  SearchState next;
  next.iteration = i + 1;
  next.model = std::move(winner.model);
  next.original_latency_us = state.original_latency_us;
  next.accuracy = record.accuracy;
  next.original_filter_counts = state.original_filter_counts;
  next.history = state.history;
  next.history.push_back(std::move(record));
  return next;
}

SearchResult continue_search(const SearchConfig& cfg, SearchState state,
                             double pretrained_accuracy,
                             const PlatformProfile& profile,
                             const Dataset& train, const Dataset& val,
                             const SearchHooks& hooks,
                             const SearchOptions& options) {
  cfg.check();
  const SearchHooks h = complete(hooks);
  const TargetSchedule plan = schedule(cfg, state.original_latency_us);

  while (state.iteration < cfg.n_iterations) {
    try {
      state = run_iteration(state, cfg, plan, profile, train, val, h,
                            options.jobs);
    } catch (const TargetUnreachable& e) {
      SearchLog partial = e.partial_log();
      partial.pretrained_accuracy = pretrained_accuracy;
      throw TargetUnreachable(e.iteration(), e.budget_us(), e.best_latency_us(),
                              std::move(partial));
    }
    if (options.on_iteration &&
        !options.on_iteration(state, make_log(state, plan, pretrained_accuracy))) {
      SearchResult partial;
      partial.model = state.model;
      partial.log = make_log(state, plan, pretrained_accuracy);
      return partial;
    }
  }

  TrainConfig retrain_cfg = cfg.retrain;
  retrain_cfg.seed = retrain_seed(cfg.seed);
  SearchResult result;
  result.model = h.fine_tune(state.model, train, val, retrain_cfg);
  result.log = make_log(state, plan, pretrained_accuracy);
  result.log.completed = true;
  result.log.final_latency_us = simulate(profile, result.model.spec);
  result.log.final_accuracy = h.evaluate(result.model, val);
  result.completed = true;

  if (state.original_latency_us / result.log.final_latency_us <
      cfg.t_final * (1.0 - 1e-12)) {
    throw std::logic_error("final model misses the speedup target");
  }
  return result;
}

SearchResult run_search(const SearchConfig& cfg, const Model& pretrained,
                        const PlatformProfile& profile, const Dataset& train,
                        const Dataset& val, const SearchHooks& hooks,
                        const SearchOptions& options) {
  cfg.check();
  SearchState state = initial_state(pretrained, profile, val, hooks);
  const double pretrained_accuracy = state.accuracy;
  return continue_search(cfg, std::move(state), pretrained_accuracy, profile,
                         train, val, hooks, options);
}

CrossReport cross_platform_experiment(const SearchConfig& cfg,
                                      const Model& pretrained,
                                      const PlatformProfile& profile_a,
                                      const PlatformProfile& profile_b,
                                      const Dataset& train, const Dataset& val,
                                      const SearchHooks& hooks,
                                      const SearchOptions& options) {
  const PlatformProfile* profiles[2] = {&profile_a, &profile_b};
  CrossReport report;
  Model optimal[2];
  for (int p = 0; p < 2; ++p) {
    SearchResult result =
        run_search(cfg, pretrained, *profiles[p], train, val, hooks, options);
    report.names[p] = profiles[p]->platform_name;
    report.filters[p] = filter_counts(result.model.spec);
    report.accuracy[p] = result.log.final_accuracy;
    report.logs[p] = std::move(result.log);
    optimal[p] = std::move(result.model);
  }
  for (int p = 0; p < 2; ++p) {
    for (int q = 0; q < 2; ++q) {
      report.speedup[p][q] = simulate(*profiles[q], pretrained.spec) /
                             simulate(*profiles[q], optimal[p].spec);
    }
  }
  return report;
}

std::vector<std::string> audit_one_layer_per_iteration(const SearchLog& log) {
  std::vector<std::string> problems;
  std::vector<int> previous = log.original_filter_counts;
  for (const IterationRecord& it : log.iterations) {
    if (it.filter_counts.size() != previous.size()) {
      problems.push_back("iteration " + std::to_string(it.iteration) +
                         ": trimmable layer count changed");
      previous = it.filter_counts;
      continue;
    }
    int changed = 0;
    for (size_t s = 0; s < previous.size(); ++s) {
      if (it.filter_counts[s] != previous[s]) ++changed;
      if (it.filter_counts[s] > previous[s]) {
        problems.push_back("iteration " + std::to_string(it.iteration) +
                           ": layer " + std::to_string(s) + " grew");
      }
    }
    if (changed > 1) {
      problems.push_back("iteration " + std::to_string(it.iteration) + ": " +
                         std::to_string(changed) + " layers changed");
    }
    previous = it.filter_counts;
  }
  return problems;
}

}  // namespace compactnet
