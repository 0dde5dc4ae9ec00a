#pragma once

// The progressive trimming loop: a decaying speedup schedule, one trimmed
// layer per iteration chosen by validation accuracy among latency-feasible
// candidates, and a final retrain.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compactnet/errors.hpp"
#include "compactnet/latsim.hpp"
#include "compactnet/micronn.hpp"

namespace compactnet {

struct SearchConfig {
  double t_final = 1.4;  // original latency / trimmed latency
  int n_iterations = 6;
  double decay = 0.96;
  TrainConfig finetune = finetune_desk_preset();
  TrainConfig retrain = retrain_desk_preset();
  uint64_t seed = 0;
  int min_filters = 1;

  void check() const;
  bool operator==(const SearchConfig&) const = default;
};

struct TargetSchedule {
  double original_latency_us = 0.0;
  // Literal per-iteration sub-targets t_init/N * d^i; they sum to t_final.
  double t_init = 0.0;
  std::vector<double> raw_subtargets;
  // Normalized schedule driving the search: F_i = 1 + sum_{j<=i} increments,
  // with increments decaying by d and F_{N-1} == t_final.
  std::vector<double> increments;
  std::vector<double> cumulative_factors;
  std::vector<double> latency_budgets;  // original_latency_us / F_i

  bool operator==(const TargetSchedule&) const = default;
};

double invert_initial_target(double t_final, int n, double d);
std::vector<double> raw_subtargets(double t_init, int n, double d);
TargetSchedule schedule(const SearchConfig& cfg, double original_latency_us);

struct TrimOutcome {
  bool feasible = false;
  Model model;            // trimmed model (input model when infeasible)
  std::vector<int> kept;  // kept filter indices, ascending
  double latency_us = 0.0;  // simulated; best achievable when infeasible
};

// Lowers the slot's filter count one at a time until the simulated model
// latency meets the budget, keeping the largest-norm filters.
TrimOutcome trim_to_budget(const Model& model, const PlatformProfile& profile,
                           int slot_id, double budget_us, int min_filters,
                           uint64_t reinit_seed = 0);

struct CandidateRecord {
  int slot_id = 0;
  std::vector<int> kept;
  double latency_us = 0.0;
  double accuracy = 0.0;
  bool feasible = false;
  bool selected = false;
  bool operator==(const CandidateRecord&) const = default;
};

struct IterationRecord {
  int iteration = 0;
  double budget_us = 0.0;
  double cumulative_factor = 0.0;
  std::vector<CandidateRecord> candidates;
  int selected_slot = -1;
  std::vector<int> filter_counts;  // after this iteration
  double latency_us = 0.0;
  double accuracy = 0.0;
  bool operator==(const IterationRecord&) const = default;
};

struct SearchState {
  int iteration = 0;  // next iteration to run
  Model model;
  double original_latency_us = 0.0;
  double accuracy = 0.0;
  std::vector<int> original_filter_counts;
  std::vector<IterationRecord> history;
};

struct SearchLog {
  TargetSchedule schedule;
  double pretrained_accuracy = 0.0;
  std::vector<int> original_filter_counts;
  std::vector<IterationRecord> iterations;
  bool completed = false;
  double final_latency_us = 0.0;
  double final_accuracy = 0.0;
  bool operator==(const SearchLog&) const = default;
};

nlohmann::ordered_json to_json(const TargetSchedule& schedule);
TargetSchedule target_schedule_from_json(const nlohmann::json& doc);
nlohmann::ordered_json to_json(const SearchLog& log);
SearchLog search_log_from_json(const nlohmann::json& doc);

// Raised when no candidate of an iteration can meet its latency budget.
class TargetUnreachable : public Error {
 public:
  TargetUnreachable(int iteration, double budget_us, double best_latency_us,
                    SearchLog partial_log);
  int iteration() const noexcept { return iteration_; }
  double budget_us() const noexcept { return budget_us_; }
  double best_latency_us() const noexcept { return best_latency_us_; }
  const SearchLog& partial_log() const noexcept { return partial_log_; }

 private:
  int iteration_;
  double budget_us_;
  double best_latency_us_;
  SearchLog partial_log_;
};

// Training and scoring used for candidates; replaceable for tests.
struct SearchHooks {
  std::function<Model(Model, const Dataset& train, const Dataset& val,
                      const TrainConfig&)>
      fine_tune;
  std::function<double(const Model&, const Dataset&)> evaluate;
};

SearchHooks default_hooks();

struct SearchOptions {
  int jobs = 1;  // candidate parallelism
  // Invoked after every completed iteration; returning false stops the
  // search early (the result is then marked incomplete).
  std::function<bool(const SearchState&, const SearchLog&)> on_iteration;
};

// Seeds derived from (search seed, iteration, slot) so candidates are
// independent of scheduling order.
uint64_t candidate_seed(uint64_t search_seed, int iteration, int slot_id);
uint64_t reinit_seed(uint64_t search_seed, int iteration, int slot_id);
uint64_t retrain_seed(uint64_t search_seed);

SearchState initial_state(const Model& pretrained,
                          const PlatformProfile& profile, const Dataset& val,
                          const SearchHooks& hooks);

SearchLog make_log(const SearchState& state, const TargetSchedule& schedule,
                   double pretrained_accuracy);

SearchState run_iteration(const SearchState& state, const SearchConfig& cfg,
                          const TargetSchedule& schedule,
                          const PlatformProfile& profile, const Dataset& train,
                          const Dataset& val, const SearchHooks& hooks,
                          int jobs = 1);

struct SearchResult {
  Model model;
  SearchLog log;
  bool completed = false;
};

SearchResult run_search(const SearchConfig& cfg, const Model& pretrained,
                        const PlatformProfile& profile, const Dataset& train,
                        const Dataset& val, const SearchHooks& hooks = {},
                        const SearchOptions& options = {});

// Continues from a checkpointed state (used for resume).
SearchResult continue_search(const SearchConfig& cfg, SearchState state,
                             double pretrained_accuracy,
                             const PlatformProfile& profile,
                             const Dataset& train, const Dataset& val,
                             const SearchHooks& hooks = {},
                             const SearchOptions& options = {});

struct CrossReport {
  std::string names[2];
  // speedup[i][j]: model optimized on profile i, timed on profile j.
  double speedup[2][2] = {{0, 0}, {0, 0}};
  std::vector<int> filters[2];
  double accuracy[2] = {0, 0};
  SearchLog logs[2];
};

CrossReport cross_platform_experiment(const SearchConfig& cfg,
                                      const Model& pretrained,
                                      const PlatformProfile& profile_a,
                                      const PlatformProfile& profile_b,
                                      const Dataset& train, const Dataset& val,
                                      const SearchHooks& hooks = {},
                                      const SearchOptions& options = {});

nlohmann::ordered_json to_json(const CrossReport& report);

// Log auditor: returns a description of every iteration in which more than
// one slot's filter count changed or any count increased.
std::vector<std::string> audit_one_layer_per_iteration(const SearchLog& log);

}  // namespace compactnet
