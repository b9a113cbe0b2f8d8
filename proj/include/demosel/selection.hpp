#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "demosel/common.hpp"
#include "demosel/embedding_store.hpp"

namespace demosel::selection {

using store::ExampleRecord;
using store::Pool;

enum class Method { rand, topk, div, topk_div, kmeans };

inline std::string_view to_string(Method m) {
  switch (m) {
  case Method::rand: return "rand";
  case Method::topk: return "topk";
  case Method::div: return "div";
  case Method::topk_div: return "topk_div";
  case Method::kmeans: return "kmeans";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "rand") return Method::rand;
  if (s == "topk") return Method::topk;
  if (s == "div") return Method::div;
  if (s == "topk_div" || s == "topk-div") return Method::topk_div;
  if (s == "kmeans" || s == "k-means") return Method::kmeans;
  throw ValidationError("unknown selection method '" + std::string(s) + "'");
}

inline constexpr double kDefaultAlpha = 0.5;
inline constexpr std::size_t kDefaultCoresetSize = 100;
inline constexpr std::size_t kDefaultKMeansIterations = 100;

/// Scores closer than this to the step maximum count as tied; ties go to the
/// lowest pool index. Absorbs last-ulp differences such as those introduced by
/// rescaling an embedding.
inline constexpr double kTieTolerance = 1e-12;

struct SelectionConfig {
  Method method = Method::topk;
  std::size_t k = 4;
  double alpha = kDefaultAlpha;
  std::size_t coreset_size = kDefaultCoresetSize;
  std::uint64_t seed = 0;
  std::size_t kmeans_max_iterations = kDefaultKMeansIterations;

  void validate(std::size_t pool_size) const {
    if (k == 0) throw ValidationError("k must be positive");
    if (k > pool_size)
      throw ValidationError("k = " + std::to_string(k) + " exceeds pool size " + std::to_string(pool_size));
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
    if (method == Method::div) {
      if (coreset_size < k)
        throw ValidationError("coreset size " + std::to_string(coreset_size) + " is smaller than k = " +
                              std::to_string(k));
      if (coreset_size > pool_size)
        throw ValidationError("coreset size " + std::to_string(coreset_size) + " exceeds pool size " +
                              std::to_string(pool_size));
    }
  }
};

struct StepScore {
  double sim = 0.0;
  double div = 0.0;
  double combined = 0.0;
};

struct SelectionResult {
  std::string query_id;
  std::vector<std::size_t> indices; // pool positions, selection order
  std::vector<std::string> demo_ids;
  std::vector<StepScore> step_scores;
  SelectionConfig config;
};

template <typename T, typename U>
double dot(std::span<const T> a, std::span<const U> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
double norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

/// <a,b> / (|a| |b|) in double precision.
template <typename T, typename U>
double cosine_similarity(std::span<const T> a, std::span<const U> b) {
  if (a.size() != b.size())
    throw ValidationError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw ValidationError("cosine similarity of a zero-norm vector");
  return dot(a, b) / (na * nb);
}

template <typename T, typename U>
double cosine_similarity(const std::vector<T>& a, const std::vector<U>& b) {
  return cosine_similarity(std::span<const T>(a), std::span<const U>(b));
}

/// 1 - mean cosine similarity between e and each member of `selected`.
/// Lies in [0, 2]; in [0, 1] when all cosines are nonnegative.
template <typename T>
double set_diversity(const std::vector<T>& e, const std::vector<std::vector<T>>& selected) {
  if (selected.empty()) throw ValidationError("diversity against an empty set is undefined");
  double s = 0.0;
  for (const auto& m : selected) s += cosine_similarity(e, m);
  return 1.0 - s / static_cast<double>(selected.size());
}

namespace detail {

/// Pool embeddings widened to double with precomputed norms.
class CosineView {
public:
  explicit CosineView(const Pool& pool) : dim_(pool.dim()), n_(pool.size()), data_(n_ * dim_), norms_(n_) {
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& e = pool[i].embedding;
      std::copy(e.begin(), e.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
      norms_[i] = selection::norm(row(i));
    }
  }

  std::size_t size() const { return n_; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }

  double cos(std::size_t i, std::size_t j) const { return dot(row(i), row(j)) / (norms_[i] * norms_[j]); }

  std::vector<double> similarities_to(const std::vector<float>& q) const {
    if (q.size() != dim_)
      throw ValidationError("query dimension " + std::to_string(q.size()) + " does not match pool dimension " +
                            std::to_string(dim_));
    const double nq = selection::norm(std::span<const float>(q));
    if (!(nq > 0.0)) throw ValidationError("query embedding has zero norm");
    std::vector<double> out(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = dot(row(i), std::span<const float>(q)) / (norms_[i] * nq);
    return out;
  }

private:
  std::size_t dim_, n_;
  std::vector<double> data_;
  std::vector<double> norms_;
};

/// Lowest index among eligible candidates whose score is within kTieTolerance
/// of the eligible maximum.
inline std::size_t pick_best(const std::vector<double>& score, const std::vector<char>& eligible) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < score.size(); ++i)
    if (eligible[i]) best = std::max(best, score[i]);
  for (std::size_t i = 0; i < score.size(); ++i)
    if (eligible[i] && score[i] >= best - kTieTolerance) return i;
  throw std::logic_error("pick_best: no eligible candidate");
}

inline SelectionResult finish(const Pool& demos, const ExampleRecord* query, SelectionConfig cfg,
                              std::vector<std::size_t> indices, std::vector<StepScore> scores) {
  SelectionResult r;
  if (query) r.query_id = query->id;
  r.indices = std::move(indices);
  for (auto i : r.indices) r.demo_ids.push_back(demos[i].id);
  r.step_scores = std::move(scores);
  r.config = cfg;
  return r;
}

/// Diagnostic sim/div per step for methods that do not optimize them directly.
inline std::vector<StepScore> describe_steps(const CosineView& view, const std::vector<double>& sim,
                                             const std::vector<std::size_t>& picked) {
  std::vector<StepScore> out;
  for (std::size_t s = 0; s < picked.size(); ++s) {
    double div = 0.0;
    if (s > 0) {
      double acc = 0.0;
      for (std::size_t t = 0; t < s; ++t) acc += view.cos(picked[s], picked[t]);
      div = 1.0 - acc / static_cast<double>(s);
    }
    const double si = sim.empty() ? 0.0 : sim[picked[s]];
    out.push_back({si, div, si});
  }
  return out;
}

inline std::vector<std::size_t> topk_over(const std::vector<double>& sim, std::vector<char> eligible,
                                          std::size_t k) {
  std::vector<std::size_t> picked;
  picked.reserve(k);
  for (std::size_t step = 0; step < k; ++step) {
    const auto best = pick_best(sim, eligible);
    picked.push_back(best);
    eligible[best] = 0;
  }
  return picked;
}

} // namespace detail

/// Uniform sample of K distinct demos (partial Fisher-Yates seeded by cfg.seed).
inline SelectionResult select_rand(const Pool& demos, const ExampleRecord& query, const SelectionConfig& cfg) {
  cfg.validate(demos.size());
  std::vector<std::size_t> perm(demos.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(mix64(cfg.seed));
  for (std::size_t i = 0; i < cfg.k; ++i) {
    std::swap(perm[i], perm[i + uniform_index(rng, perm.size() - i)]);
  }
  perm.resize(cfg.k);
  const detail::CosineView view(demos);
  std::vector<double> sim;
  if (query.embedding.size() == demos.dim()) sim = view.similarities_to(query.embedding);
  auto steps = detail::describe_steps(view, sim, perm);
  return detail::finish(demos, &query, cfg, std::move(perm), std::move(steps));
}

/// The K demos most cosine-similar to the query, in descending order.
inline SelectionResult select_topk(const Pool& demos, const ExampleRecord& query, const SelectionConfig& cfg) {
  cfg.validate(demos.size());
  const detail::CosineView view(demos);
  const auto sim = view.similarities_to(query.embedding);
  auto picked = detail::topk_over(sim, std::vector<char>(demos.size(), 1), cfg.k);
  auto steps = detail::describe_steps(view, sim, picked);
  return detail::finish(demos, &query, cfg, std::move(picked), std::move(steps));
}

/// Greedy diversity coreset starting from `first`: each step adds the demo
/// with the largest diversity against the current coreset.
inline std::vector<std::size_t> build_div_coreset_from(const Pool& demos, std::size_t m, std::size_t first) {
  const std::size_t n = demos.size();
  if (m == 0 || m > n)
    throw ValidationError("coreset size " + std::to_string(m) + " must lie in [1, " + std::to_string(n) + "]");
  if (first >= n) throw ValidationError("coreset start index out of range");
  const detail::CosineView view(demos);
  std::vector<std::size_t> core{first};
  std::vector<char> eligible(n, 1);
  eligible[first] = 0;
  std::vector<double> cos_sum(n, 0.0), div(n, 0.0);
  while (core.size() < m) {
    const auto last = core.back();
    for (std::size_t i = 0; i < n; ++i) {
      if (!eligible[i]) continue;
      cos_sum[i] += view.cos(i, last);
      div[i] = 1.0 - cos_sum[i] / static_cast<double>(core.size());
    }
    const auto best = detail::pick_best(div, eligible);
    core.push_back(best);
    eligible[best] = 0;
  }
  return core;
}

/// Query-independent coreset; the starting demo is drawn uniformly using `seed`.
inline std::vector<std::size_t> build_div_coreset(const Pool& demos, std::size_t m, std::uint64_t seed) {
  if (m == 0 || m > demos.size())
    throw ValidationError("coreset size " + std::to_string(m) + " must lie in [1, " +
                          std::to_string(demos.size()) + "]");
  std::mt19937_64 rng(mix64(seed));
  return build_div_coreset_from(demos, m, uniform_index(rng, demos.size()));
}

/// TopK restricted to a precomputed coreset.
inline SelectionResult select_div(const Pool& demos, const ExampleRecord& query, const SelectionConfig& cfg,
                                  const std::vector<std::size_t>& coreset) {
  if (cfg.k == 0) throw ValidationError("k must be positive");
  if (cfg.k > coreset.size())
    throw ValidationError("k = " + std::to_string(cfg.k) + " exceeds coreset size " + std::to_string(coreset.size()));
  const detail::CosineView view(demos);
  const auto sim = view.similarities_to(query.embedding);
  std::vector<char> eligible(demos.size(), 0);
  for (auto i : coreset) {
    if (i >= demos.size()) throw ValidationError("coreset index out of range");
    eligible[i] = 1;
  }
  auto picked = detail::topk_over(sim, std::move(eligible), cfg.k);
  auto steps = detail::describe_steps(view, sim, picked);
  return detail::finish(demos, &query, cfg, std::move(picked), std::move(steps));
}

/// Greedy alpha * similarity + (1 - alpha) * diversity. The first pick has
/// diversity 0, so it is the most similar demo.
inline SelectionResult select_topk_div(const Pool& demos, const ExampleRecord& query, const SelectionConfig& cfg) {
  cfg.validate(demos.size());
  const std::size_t n = demos.size();
  const detail::CosineView view(demos);
  const auto sim = view.similarities_to(query.embedding);
  std::vector<char> eligible(n, 1);
  std::vector<double> cos_sum(n, 0.0), div(n, 0.0), score(n, 0.0);
  std::vector<std::size_t> picked;
  std::vector<StepScore> steps;
  for (std::size_t step = 0; step < cfg.k; ++step) {
    for (std::size_t i = 0; i < n; ++i) {
      if (!eligible[i]) continue;
      if (step > 0) {
        cos_sum[i] += view.cos(i, picked.back());
        div[i] = 1.0 - cos_sum[i] / static_cast<double>(step);
      }
      score[i] = cfg.alpha * sim[i] + (1.0 - cfg.alpha) * div[i];
    }
    const auto best = detail::pick_best(score, eligible);
    picked.push_back(best);
    steps.push_back({sim[best], div[best], score[best]});
    eligible[best] = 0;
  }
  return detail::finish(demos, &query, cfg, std::move(picked), std::move(steps));
}

/// K-means representatives: farthest-point seeding from a seed-chosen first
/// point, Lloyd iterations on L2-normalized embeddings, then per cluster the
/// member nearest its centroid. Returns pool indices in cluster order.
inline std::vector<std::size_t> kmeans_representatives(const Pool& demos, std::size_t k, std::uint64_t seed,
                                                       std::size_t max_iterations = kDefaultKMeansIterations) {
  const std::size_t n = demos.size(), d = demos.dim();
  if (k == 0 || k > n)
    throw ValidationError("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(n) + "]");
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = demos[i].embedding;
    const double nrm = store::euclidean_norm(e);
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = static_cast<double>(e[j]) / nrm;
  }
  auto point = [&](std::size_t i) { return std::span<const double>(x.data() + i * d, d); };
  auto dist2 = [&](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return s;
  };

  std::vector<double> centroids(k * d);
  auto centroid = [&](std::size_t c) { return std::span<double>(centroids.data() + c * d, d); };
  auto set_centroid = [&](std::size_t c, std::size_t i) { std::ranges::copy(point(i), centroid(c).begin()); };

  // farthest-point seeding; chosen points are excluded so seeds stay distinct
  std::mt19937_64 rng(mix64(seed));
  std::vector<char> seeded(n, 0);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t current = uniform_index(rng, n);
  for (std::size_t c = 0; c < k; ++c) {
    set_centroid(c, current);
    seeded[current] = 1;
    if (c + 1 == k) break;
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(point(i), point(current)));
    std::vector<char> eligible(n);
    for (std::size_t i = 0; i < n; ++i) eligible[i] = !seeded[i];
    current = detail::pick_best(nearest, eligible);
  }

  std::vector<std::size_t> assign(n, k);
  auto nearest_centroid = [&](std::size_t i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double dd = dist2(point(i), centroid(c));
      if (dd < best_d - kTieTolerance) {
        best_d = dd;
        best = c;
      }
    }
    return best;
  };

  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = nearest_centroid(i);
      if (c != assign[i]) changed = true;
      assign[i] = c;
    }
    if (!changed) break;
    std::vector<std::size_t> count(k, 0);
    std::fill(centroids.begin(), centroids.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      auto cc = centroid(assign[i]);
      for (std::size_t j = 0; j < d; ++j) cc[j] += point(i)[j];
    }
    std::vector<char> used_for_reseed(n, 0);
    for (std::size_t c = 0; c < k; ++c)
      if (count[c] > 0)
        for (auto& v : centroid(c)) v /= static_cast<double>(count[c]);
    // empty clusters are re-seeded from the point farthest from its own centroid
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      std::vector<double> far(n);
      std::vector<char> eligible(n);
      for (std::size_t i = 0; i < n; ++i) {
        far[i] = dist2(point(i), centroid(assign[i]));
        eligible[i] = !used_for_reseed[i];
      }
      const auto p = detail::pick_best(far, eligible);
      used_for_reseed[p] = 1;
      set_centroid(c, p);
    }
  }

  std::vector<char> taken(n, 0);
  std::vector<std::size_t> reps;
  reps.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> closeness(n, 0.0);
    std::vector<char> eligible(n, 0);
    bool any_member = false;
    for (std::size_t i = 0; i < n; ++i)
      if (assign[i] == c && !taken[i]) any_member = true;
    for (std::size_t i = 0; i < n; ++i) {
      eligible[i] = !taken[i] && (!any_member || assign[i] == c);
      closeness[i] = -dist2(point(i), centroid(c));
    }
    const auto best = detail::pick_best(closeness, eligible);
    taken[best] = 1;
    reps.push_back(best);
  }
  return reps;
}

/// Query-independent k-means selection. `query`, when given, only feeds the
/// diagnostic step scores.
inline SelectionResult select_kmeans(const Pool& demos, const SelectionConfig& cfg,
                                     const ExampleRecord* query = nullptr) {
  cfg.validate(demos.size());
  auto picked = kmeans_representatives(demos, cfg.k, cfg.seed, cfg.kmeans_max_iterations);
  const detail::CosineView view(demos);
  std::vector<double> sim;
  if (query) sim = view.similarities_to(query->embedding);
  auto steps = detail::describe_steps(view, sim, picked);
  return detail::finish(demos, query, cfg, std::move(picked), std::move(steps));
}

/// Wraps a query-independent pick (k-means representatives, a cached
/// selection) as a result for `query`, with the usual diagnostic scores.
inline SelectionResult describe_fixed(const Pool& demos, const ExampleRecord& query, const SelectionConfig& cfg,
                                      std::vector<std::size_t> picked) {
  for (auto i : picked)
    if (i >= demos.size()) throw ValidationError("selected index out of range");
  const detail::CosineView view(demos);
  const auto sim = view.similarities_to(query.embedding);
  auto steps = detail::describe_steps(view, sim, picked);
  return detail::finish(demos, &query, cfg, std::move(picked), std::move(steps));
}

/// Dispatches on cfg.method. For div, `coreset` must be supplied.
inline SelectionResult select(const Pool& demos, const ExampleRecord& query, const SelectionConfig& cfg,
                              const std::vector<std::size_t>* coreset = nullptr) {
  switch (cfg.method) {
  case Method::rand: return select_rand(demos, query, cfg);
  case Method::topk: return select_topk(demos, query, cfg);
  case Method::div: {
    cfg.validate(demos.size());
    if (coreset) return select_div(demos, query, cfg, *coreset);
    const auto core = build_div_coreset(demos, cfg.coreset_size, cfg.seed);
    return select_div(demos, query, cfg, core);
  }
  case Method::topk_div: return select_topk_div(demos, query, cfg);
  case Method::kmeans: return select_kmeans(demos, cfg, &query);
  }
  throw std::logic_error("unhandled selection method");
}

/// One line of the selections JSONL output.
inline nlohmann::ordered_json to_json(const SelectionResult& r) {
  nlohmann::ordered_json j;
  j["query_id"] = r.query_id;
  j["method"] = std::string(to_string(r.config.method));
  j["k"] = r.config.k;
  if (r.config.method == Method::topk_div) j["alpha"] = r.config.alpha;
  if (r.config.method == Method::div) j["coreset_size"] = r.config.coreset_size;
  j["seed"] = r.config.seed;
  j["demo_ids"] = r.demo_ids;
  auto steps = nlohmann::ordered_json::array();
  for (const auto& s : r.step_scores) {
    nlohmann::ordered_json o;
    o["sim"] = s.sim;
    o["div"] = s.div;
    o["combined"] = s.combined;
    steps.push_back(std::move(o));
  }
  j["step_scores"] = std::move(steps);
  return j;
}

/// Parses one selections line back; only the fields the renderer needs.
struct SelectionLine {
  std::string query_id;
  std::vector<std::string> demo_ids;
};

inline SelectionLine parse_selection_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed selection line: ") + e.what());
  }
  try {
    return {j.at("query_id").get<std::string>(), j.at("demo_ids").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("selection line needs string 'query_id' and string array 'demo_ids'");
  }
}

} // namespace demosel::selection
