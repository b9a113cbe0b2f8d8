#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "demosel/common.hpp"
#include "demosel/theory/binary.hpp"
#include "demosel/theory/closed_form.hpp"
#include "demosel/theory/min_norm.hpp"

namespace demosel::theory {

enum class SimMethod { topk, topk_div };

inline std::string_view to_string(SimMethod m) { return m == SimMethod::topk ? "topk" : "topk_div"; }

inline SimMethod parse_sim_method(std::string_view s) {
  if (s == "topk") return SimMethod::topk;
  if (s == "topk_div" || s == "topk-div") return SimMethod::topk_div;
  throw ValidationError("simulation supports methods topk and topk_div, got '" + std::string(s) + "'");
}

struct SimConfig {
  DistributionParams dist;
  std::size_t k = 2;
  double alpha = 0.5;
  std::size_t train_scale = 1; // general only: |D| = d * train_scale
  std::size_t trials = 100;    // test queries per seed
  std::size_t seeds = 1;
  std::uint64_t master_seed = 0;
  std::vector<SimMethod> methods{SimMethod::topk, SimMethod::topk_div};

  void validate() const {
    dist.validate();
    if (k == 0) throw ValidationError("k must be positive");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
    if (trials == 0) throw ValidationError("trials must be positive");
    if (seeds == 0) throw ValidationError("seeds must be positive");
    if (dist.kind == Distribution::general && train_scale == 0) throw ValidationError("train_scale must be positive");
    if (methods.empty()) throw ValidationError("no simulation methods requested");
  }
};

/// Cosine selection over binary demonstrations with uniformly random
/// tie-breaking. Many demonstrations tie at the top similarity in these
/// settings, and the analysis treats tied choices symmetrically.
class BinarySelector {
public:
  BinarySelector(const std::vector<BinaryExample>& pool, std::size_t dim) : pool_(pool), dim_(dim) {}

  std::vector<std::size_t> select(SimMethod method, const Support& query, std::size_t k, double alpha,
                                  std::mt19937_64& rng) const {
    const std::size_t n = pool_.size();
    if (k > n) throw ValidationError("k = " + std::to_string(k) + " exceeds pool size " + std::to_string(n));
    std::vector<char> mask(dim_, 0);
    for (auto i : query) mask[i] = 1;
    std::vector<double> sim(n);
    for (std::size_t i = 0; i < n; ++i) sim[i] = cosine(pool_[i].support, mask, query.size());

    std::vector<char> eligible(n, 1);
    std::vector<double> cos_sum(n, 0.0), score(n, 0.0);
    std::vector<std::size_t> picked;
    for (std::size_t step = 0; step < k; ++step) {
      if (method == SimMethod::topk) {
        score = sim;
      } else {
        if (step > 0) {
          const auto& last = pool_[picked.back()].support;
          std::fill(mask.begin(), mask.end(), 0);
          for (auto i : last) mask[i] = 1;
          for (std::size_t i = 0; i < n; ++i)
            if (eligible[i]) cos_sum[i] += cosine(pool_[i].support, mask, last.size());
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double div = step == 0 ? 0.0 : 1.0 - cos_sum[i] / static_cast<double>(step);
          score[i] = alpha * sim[i] + (1.0 - alpha) * div;
        }
      }
      const auto best = pick_random_best(score, eligible, rng);
      picked.push_back(best);
      eligible[best] = 0;
    }
    return picked;
  }

private:
  static double cosine(const Support& s, const std::vector<char>& mask, std::size_t mask_size) {
    std::size_t o = 0;
    for (auto i : s) o += static_cast<std::size_t>(mask[i]);
    return static_cast<double>(o) / std::sqrt(static_cast<double>(s.size()) * static_cast<double>(mask_size));
  }

  static std::size_t pick_random_best(const std::vector<double>& score, const std::vector<char>& eligible,
                                      std::mt19937_64& rng) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < score.size(); ++i)
      if (eligible[i]) best = std::max(best, score[i]);
    std::vector<std::size_t> ties;
    for (std::size_t i = 0; i < score.size(); ++i)
      if (eligible[i] && score[i] >= best - 1e-12) ties.push_back(i);
    return ties[uniform_index(rng, ties.size())];
  }

  const std::vector<BinaryExample>& pool_;
  std::size_t dim_;
};

struct MethodStats {
  double mean_loss = 0.0;
  double se_loss = 0.0;
  double mean_coverage = 0.0;
  std::size_t n = 0;
};

struct SeedReport {
  std::uint64_t seed = 0;
  std::map<SimMethod, MethodStats> methods;
};

struct SimReport {
  SimConfig config;
  std::map<SimMethod, MethodStats> methods;
  std::vector<SeedReport> per_seed;
};

struct TrialOutcome {
  double loss = 0.0;
  double coverage = 0.0;
};

namespace detail {

/// Demonstration pool and test queries for one seed of the general setting:
/// distinct supports, with the test set disjoint from the pool.
inline void sample_general_split(const DistributionParams& p, std::size_t pool_size, std::size_t test_size,
                                 std::mt19937_64& rng, std::vector<BinaryExample>& pool,
                                 std::vector<BinaryExample>& test) {
  const double total = ground_set_size(p);
  if (static_cast<double>(pool_size + test_size) > total)
    throw ValidationError("requested |D| = " + std::to_string(pool_size) + " plus " + std::to_string(test_size) +
                          " test queries exceeds ground-set size " + std::to_string(static_cast<long long>(total)));
  pool.clear();
  test.clear();
  if (total <= kGroundSetLimit && static_cast<double>(pool_size + test_size) * 2 > total) {
    auto all = build_ground_set(p);
    shuffle_in_place(all, rng);
    pool.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(pool_size));
    test.assign(all.begin() + static_cast<std::ptrdiff_t>(pool_size),
                all.begin() + static_cast<std::ptrdiff_t>(pool_size + test_size));
    return;
  }
  std::set<Support> seen;
  while (pool.size() < pool_size) {
    auto e = sample_demo(p, rng);
    if (seen.insert(e.support).second) pool.push_back(std::move(e));
  }
  while (test.size() < test_size) {
    auto e = sample_query(p, rng);
    if (seen.insert(e.support).second) test.push_back(std::move(e));
  }
}

inline MethodStats summarize(const std::vector<TrialOutcome>& outcomes) {
  std::vector<double> losses, cov;
  losses.reserve(outcomes.size());
  cov.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    losses.push_back(o.loss);
    cov.push_back(o.coverage);
  }
  const auto l = estimate_mean(losses);
  const auto c = estimate_mean(cov);
  return {l.mean, l.std_error, c.mean, outcomes.size()};
}

} // namespace detail

/// Evaluates one query: selection per method, then min-norm loss and coverage.
inline std::vector<TrialOutcome> run_trial(const SimConfig& cfg, const std::vector<BinaryExample>& pool,
                                           const BinaryExample& query, const Vector& theta, std::uint64_t trial_seed) {
  const std::size_t dim = cfg.dist.dim();
  const BinarySelector selector(pool, dim);
  const Vector eq = query.embedding();
  std::vector<TrialOutcome> out;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    std::mt19937_64 rng(derive_seed(trial_seed, 1000 + m));
    const auto picked = selector.select(cfg.methods[m], query.support, cfg.k, cfg.alpha, rng);
    std::vector<const Support*> rows;
    for (auto i : picked) rows.push_back(&pool[i].support);
    const MinNormModel model(data_matrix(rows, dim));
    out.push_back({prediction_loss(model.predict(theta, eq), theta, eq), coverage_ratio(rows, query.support)});
  }
  return out;
}

/// Runs cfg.seeds independent repetitions of cfg.trials test queries each.
/// example1/example2 use the full enumerated ground set as the pool and draw
/// queries from the query distribution; general samples a fresh pool of
/// d * train_scale distinct demonstrations per seed plus a disjoint test set.
/// Every trial has its own generator, so results are identical for any
/// `threads`.
inline SimReport run_simulation(const SimConfig& cfg, unsigned threads = 1) {
  cfg.validate();
  const std::size_t dim = cfg.dist.dim();
  const bool enumerated = cfg.dist.kind != Distribution::general;
  std::vector<BinaryExample> ground;
  if (enumerated) {
    ground = build_ground_set(cfg.dist);
    if (cfg.k > ground.size()) throw ValidationError("k exceeds the ground-set size");
  }

  SimReport report;
  report.config = cfg;
  std::vector<std::vector<TrialOutcome>> all(cfg.methods.size());
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const std::uint64_t seed = derive_seed(cfg.master_seed, s);
    std::mt19937_64 seed_rng(seed);
    std::vector<BinaryExample> sampled_pool, test;
    if (!enumerated) {
      detail::sample_general_split(cfg.dist, dim * cfg.train_scale, cfg.trials, seed_rng, sampled_pool, test);
      if (cfg.k > sampled_pool.size()) throw ValidationError("k exceeds |D|");
    }
    const auto& pool = enumerated ? ground : sampled_pool;

    std::vector<std::vector<TrialOutcome>> outcomes(cfg.trials);
    parallel_for(cfg.trials, threads, [&](std::size_t t) {
      const std::uint64_t trial_seed = derive_seed(seed, t);
      std::mt19937_64 rng(trial_seed);
      const BinaryExample query = enumerated ? sample_query(cfg.dist, rng) : test[t];
      Vector theta(static_cast<Eigen::Index>(dim));
      for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = unit_uniform(rng);
      outcomes[t] = run_trial(cfg, pool, query, theta, trial_seed);
    });

    SeedReport sr;
    sr.seed = seed;
    for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
      std::vector<TrialOutcome> per_method;
      per_method.reserve(cfg.trials);
      for (const auto& o : outcomes) per_method.push_back(o[m]);
      sr.methods[cfg.methods[m]] = detail::summarize(per_method);
      all[m].insert(all[m].end(), per_method.begin(), per_method.end());
    }
    report.per_seed.push_back(std::move(sr));
  }
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) report.methods[cfg.methods[m]] = detail::summarize(all[m]);
  return report;
}

inline nlohmann::ordered_json to_json(const SimConfig& c) {
  nlohmann::ordered_json j;
  j["distribution"] = std::string(to_string(c.dist.kind));
  j["l"] = c.dist.l;
  j["d"] = c.dist.dim();
  j["k"] = c.k;
  j["alpha"] = c.alpha;
  if (c.dist.kind == Distribution::general) j["train_scale"] = c.train_scale;
  j["trials"] = c.trials;
  j["seeds"] = c.seeds;
  j["master_seed"] = c.master_seed;
  auto ms = nlohmann::ordered_json::array();
  for (auto m : c.methods) ms.push_back(std::string(to_string(m)));
  j["methods"] = std::move(ms);
  return j;
}

inline nlohmann::ordered_json to_json(const std::map<SimMethod, MethodStats>& methods) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [m, s] : methods) {
    nlohmann::ordered_json o;
    o["mean_loss"] = s.mean_loss;
    o["se_loss"] = s.se_loss;
    o["mean_coverage"] = s.mean_coverage;
    o["n"] = s.n;
    j[std::string(to_string(m))] = std::move(o);
  }
  return j;
}

inline nlohmann::ordered_json to_json(const SimReport& r) {
  nlohmann::ordered_json j;
  j["config"] = to_json(r.config);
  j["methods"] = to_json(r.methods);
  j["trial_count"] = r.config.trials * r.config.seeds;
  auto seeds = nlohmann::ordered_json::array();
  auto per_seed = nlohmann::ordered_json::array();
  for (const auto& s : r.per_seed) {
    seeds.push_back(s.seed);
    nlohmann::ordered_json o;
    o["seed"] = s.seed;
    o["methods"] = to_json(s.methods);
    per_seed.push_back(std::move(o));
  }
  j["seeds"] = std::move(seeds);
  j["per_seed"] = std::move(per_seed);
  return j;
}

/// Aligned text table: one Loss and one Coverage row per method.
inline std::string render_table(const SimReport& r) {
  std::ostringstream os;
  const auto& c = r.config;
  os << "Simulation of the min-norm solution\n"
     << "distribution=" << to_string(c.dist.kind) << " d=" << c.dist.dim() << " l=" << c.dist.l << " K=" << c.k
     << " alpha=" << c.alpha;
  if (c.dist.kind == Distribution::general) os << " train_scale=" << c.train_scale;
  os << " seeds=" << c.seeds << " trials/seed=" << c.trials << "\n\n";
  os << std::left << std::setw(10) << "Method" << std::setw(7) << "Shot" << std::setw(10) << "Metric" << std::right
     << std::setw(12) << "Value" << std::setw(12) << "SE" << '\n';
  os << std::string(51, '-') << '\n';
  os << std::fixed;
  for (const auto& [m, s] : r.methods) {
    const std::string name = m == SimMethod::topk ? "TopK" : "TopK-Div";
    const std::string shot = "K=" + std::to_string(c.k);
    os << std::left << std::setw(10) << name << std::setw(7) << shot << std::setw(10) << "Loss" << std::right
       << std::setw(12) << std::setprecision(4) << s.mean_loss << std::setw(12) << s.se_loss << '\n';
    os << std::left << std::setw(10) << "" << std::setw(7) << "" << std::setw(10) << "Coverage" << std::right
       << std::setw(12) << std::setprecision(4) << s.mean_coverage << '\n';
  }
  return os.str();
}

} // namespace demosel::theory
