#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iterator>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "demosel/common.hpp"
#include "demosel/theory/min_norm.hpp"

namespace demosel::theory {

/// Sorted, duplicate-free 0-based coordinate indices.
using Support = std::vector<std::uint32_t>;

inline Support make_range(std::uint32_t begin, std::uint32_t end) {
  Support s(end - begin);
  std::iota(s.begin(), s.end(), begin);
  return s;
}

inline Support set_union(const Support& a, const Support& b) {
  Support out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

inline std::size_t overlap(const Support& a, const Support& b) {
  std::size_t n = 0;
  for (auto ia = a.begin(), ib = b.begin(); ia != a.end() && ib != b.end();) {
    if (*ia < *ib)
      ++ia;
    else if (*ib < *ia)
      ++ib;
    else {
      ++n;
      ++ia;
      ++ib;
    }
  }
  return n;
}

/// Skill-set embedding e_T in {0,1}^d.
struct BinaryExample {
  Support support;
  std::size_t dim = 0;

  Vector embedding() const {
    Vector e = Vector::Zero(static_cast<Eigen::Index>(dim));
    for (auto i : support) e(i) = 1.0;
    return e;
  }

  bool operator==(const BinaryExample&) const = default;
};

inline Matrix data_matrix(const std::vector<const Support*>& rows, std::size_t dim) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (auto i : *rows[r]) m(static_cast<Eigen::Index>(r), i) = 1.0;
  return m;
}

enum class Distribution { example1, example2, general };

inline std::string_view to_string(Distribution d) {
  switch (d) {
  case Distribution::example1: return "example1";
  case Distribution::example2: return "example2";
  case Distribution::general: return "general";
  }
  return "?";
}

inline Distribution parse_distribution(std::string_view s) {
  if (s == "example1") return Distribution::example1;
  if (s == "example2") return Distribution::example2;
  if (s == "general") return Distribution::general;
  throw ValidationError("unknown distribution '" + std::string(s) + "'");
}

/// Parameters of a demonstration/query distribution.
struct DistributionParams {
  Distribution kind = Distribution::general;
  std::size_t l = 0;
  std::size_t d = 0; // ignored (4l) for example1/example2

  std::size_t dim() const { return kind == Distribution::general ? d : 4 * l; }

  void validate() const {
    switch (kind) {
    case Distribution::example1:
      if (l < 2 || l % 2 != 0) throw ValidationError("example1 requires an even l >= 2");
      break;
    case Distribution::example2:
      if (l < 3) throw ValidationError("example2 requires l >= 3");
      break;
    case Distribution::general:
      if (l == 0) throw ValidationError("general distribution requires l >= 1");
      if (l > d) throw ValidationError("general distribution requires l <= d");
      break;
    }
  }
};

namespace detail {

inline Support sample_subset(std::uint32_t begin, std::uint32_t end, std::size_t size, std::mt19937_64& rng) {
  Support out = sample_sorted(end - begin, size, rng);
  for (auto& x : out) x += begin;
  return out;
}

} // namespace detail

/// Draws one demonstration:
///  example1: l/2 coordinates from [0, 2l) and l/2 from [2l, 4l)
///  example2: l-1 coordinates from [0, 2l) and 1 from [2l, 4l)
///  general:  l coordinates from [0, d)
inline BinaryExample sample_demo(const DistributionParams& p, std::mt19937_64& rng) {
  p.validate();
  const auto l = static_cast<std::uint32_t>(p.l);
  switch (p.kind) {
  case Distribution::example1:
    return {set_union(detail::sample_subset(0, 2 * l, l / 2, rng), detail::sample_subset(2 * l, 4 * l, l / 2, rng)),
            p.dim()};
  case Distribution::example2:
    return {set_union(detail::sample_subset(0, 2 * l, l - 1, rng), detail::sample_subset(2 * l, 4 * l, 1, rng)),
            p.dim()};
  case Distribution::general:
    return {detail::sample_subset(0, static_cast<std::uint32_t>(p.d), p.l, rng), p.dim()};
  }
  throw std::logic_error("unhandled distribution");
}

/// Draws one query. For example1/example2 queries are l coordinates of
/// [0, 2l); the general setting is in-distribution.
inline BinaryExample sample_query(const DistributionParams& p, std::mt19937_64& rng) {
  p.validate();
  if (p.kind == Distribution::general) return sample_demo(p, rng);
  return {detail::sample_subset(0, static_cast<std::uint32_t>(2 * p.l), p.l, rng), p.dim()};
}

/// C(n, k) in floating point; exact below 2^53.
inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

inline constexpr double kGroundSetLimit = 1e6;

inline double ground_set_size(const DistributionParams& p) {
  switch (p.kind) {
  case Distribution::example1: return binomial(2 * p.l, p.l / 2) * binomial(2 * p.l, p.l / 2);
  case Distribution::example2: return binomial(2 * p.l, p.l - 1) * static_cast<double>(2 * p.l);
  case Distribution::general: return binomial(p.d, p.l);
  }
  return 0.0;
}

namespace detail {

inline void for_each_combination(std::uint32_t begin, std::uint32_t end, std::size_t k,
                                 const std::function<void(const Support&)>& fn) {
  Support cur(k);
  const std::uint32_t n = end - begin;
  if (k > n) return;
  std::vector<std::uint32_t> idx(k);
  std::iota(idx.begin(), idx.end(), 0u);
  for (;;) {
    for (std::size_t i = 0; i < k; ++i) cur[i] = begin + idx[i];
    fn(cur);
    std::size_t i = k;
    while (i > 0 && idx[i - 1] == n - k + (i - 1)) --i;
    if (i == 0) return;
    ++idx[i - 1];
    for (std::size_t j = i; j < k; ++j) idx[j] = idx[j - 1] + 1;
  }
}

} // namespace detail

/// Every element of the distribution's support exactly once, in
/// lexicographic order. Refuses ground sets above kGroundSetLimit.
inline std::vector<BinaryExample> build_ground_set(const DistributionParams& p) {
  p.validate();
  if (ground_set_size(p) > kGroundSetLimit)
    throw ValidationError("ground set of " + std::string(to_string(p.kind)) + " with l=" + std::to_string(p.l) +
                          " is too large to enumerate");
  const auto l = static_cast<std::uint32_t>(p.l);
  std::vector<BinaryExample> out;
  switch (p.kind) {
  case Distribution::example2:
    detail::for_each_combination(0, 2 * l, l - 1, [&](const Support& lower) {
      for (std::uint32_t u = 2 * l; u < 4 * l; ++u) {
        Support s = lower;
        s.push_back(u);
        out.push_back({std::move(s), p.dim()});
      }
    });
    break;
  case Distribution::example1: {
    std::vector<Support> lowers, uppers;
    detail::for_each_combination(0, 2 * l, l / 2, [&](const Support& s) { lowers.push_back(s); });
    detail::for_each_combination(2 * l, 4 * l, l / 2, [&](const Support& s) { uppers.push_back(s); });
    for (const auto& lo : lowers)
      for (const auto& up : uppers) out.push_back({set_union(lo, up), p.dim()});
    break;
  }
  case Distribution::general:
    detail::for_each_combination(0, static_cast<std::uint32_t>(p.d), p.l,
                                 [&](const Support& s) { out.push_back({s, p.dim()}); });
    break;
  }
  return out;
}

/// Fraction of the query's coordinates covered by the union of the selected
/// supports.
inline double coverage_ratio(const std::vector<const Support*>& selected, const Support& query) {
  if (query.empty()) throw ValidationError("coverage ratio of an empty query support");
  Support cover;
  for (const auto* s : selected) cover = set_union(cover, *s);
  return static_cast<double>(overlap(cover, query)) / static_cast<double>(query.size());
}

inline double coverage_ratio(const std::vector<BinaryExample>& selected, const BinaryExample& query) {
  std::vector<const Support*> rows;
  for (const auto& s : selected) rows.push_back(&s.support);
  return coverage_ratio(rows, query.support);
}

} // namespace demosel::theory
