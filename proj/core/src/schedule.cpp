#include <algorithm>
#include <cmath>

#include "compactnet/search.hpp"

namespace compactnet {

void SearchConfig::check() const {
  if (!(t_final > 1.0)) throw ConfigError("t_final must be > 1");
  if (n_iterations < 1) throw ConfigError("n_iterations must be >= 1");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("decay must be in (0, 1]");
  if (min_filters < 1) throw ConfigError("min_filters must be >= 1");
  finetune.check();
  retrain.check();
}

namespace {

// (1 - d) / (1 - d^n): the share of a geometric series taken by its first term.
double first_term_share(int n, double d) {
  if (d == 1.0) return 1.0 / n;
  return (1.0 - d) / -std::expm1(n * std::log(d));
}

}  // namespace

double invert_initial_target(double t_final, int n, double d) {
  if (!(t_final > 0.0) || n < 1 || !(d > 0.0 && d <= 1.0)) {
    throw ConfigError("invert_initial_target needs t_final > 0, n >= 1, d in (0, 1]");
  }
  return t_final * n * first_term_share(n, d);
}

std::vector<double> raw_subtargets(double t_init, int n, double d) {
  std::vector<double> out(static_cast<size_t>(n));
  double scale = t_init / n;
  for (int i = 0; i < n; ++i) {
    out[static_cast<size_t>(i)] = scale;
    scale *= d;
  }
  return out;
}

TargetSchedule schedule(const SearchConfig& cfg, double original_latency_us) {
  cfg.check();
  if (!(original_latency_us > 0.0)) {
    throw ConfigError("original latency must be positive");
  }
  const int n = cfg.n_iterations;
  const double d = cfg.decay;
  TargetSchedule s;
  s.original_latency_us = original_latency_us;
  s.t_init = invert_initial_target(cfg.t_final, n, d);
  s.raw_subtargets = raw_subtargets(s.t_init, n, d);

  double step = (cfg.t_final - 1.0) * first_term_share(n, d);
  double factor = 1.0;
  for (int i = 0; i < n; ++i) {
    s.increments.push_back(step);
    factor += step;
    // Rounding may push a late factor a few ulps past t_final.
    factor = std::min(factor, cfg.t_final);
    s.cumulative_factors.push_back(factor);
    s.latency_budgets.push_back(original_latency_us / factor);
    step *= d;
  }
  s.cumulative_factors.back() = cfg.t_final;
  s.latency_budgets.back() = original_latency_us / cfg.t_final;
  return s;
}

}  // namespace compactnet
