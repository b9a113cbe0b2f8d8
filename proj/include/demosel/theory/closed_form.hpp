#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string_view>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "demosel/common.hpp"
#include "demosel/theory/binary.hpp"
#include "demosel/theory/min_norm.hpp"

namespace demosel::theory {

/// Exact rational number with a positive denominator, always reduced.
/// Intermediates use 128-bit arithmetic; results must fit in 64 bits.
class Rational {
public:
  constexpr Rational(std::int64_t n = 0) : num_(n), den_(1) {}
  Rational(__int128 n, __int128 d) { assign(n, d); }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  friend Rational operator+(const Rational& a, const Rational& b) {
    return {static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
            static_cast<__int128>(a.den_) * b.den_};
  }
  friend Rational operator-(const Rational& a, const Rational& b) {
    return {static_cast<__int128>(a.num_) * b.den_ - static_cast<__int128>(b.num_) * a.den_,
            static_cast<__int128>(a.den_) * b.den_};
  }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return {static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_};
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw std::domain_error("rational division by zero");
    return {static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_};
  }
  friend bool operator==(const Rational& a, const Rational& b) { return a.num_ == b.num_ && a.den_ == b.den_; }
  friend bool operator<(const Rational& a, const Rational& b) {
    return static_cast<__int128>(a.num_) * b.den_ < static_cast<__int128>(b.num_) * a.den_;
  }
  friend bool operator>(const Rational& a, const Rational& b) { return b < a; }
  friend std::ostream& operator<<(std::ostream& os, const Rational& r) { return os << r.num_ << '/' << r.den_; }

private:
  static __int128 gcd128(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    return a;
  }

  void assign(__int128 n, __int128 d) {
    if (d == 0) throw std::domain_error("rational with zero denominator");
    if (d < 0) {
      n = -n;
      d = -d;
    }
    const __int128 g = gcd128(n, d);
    if (g > 1) {
      n /= g;
      d /= g;
    }
    constexpr __int128 lim = std::numeric_limits<std::int64_t>::max();
    if (n > lim || -n > lim || d > lim) throw std::overflow_error("rational overflow");
    num_ = static_cast<std::int64_t>(n);
    den_ = static_cast<std::int64_t>(d);
  }

  std::int64_t num_;
  std::int64_t den_;
};

// --- Example I: conditional loss L_{a,b} ----------------------------------

inline void check_example1_args(std::int64_t l, std::int64_t a, std::int64_t b) {
  if (l < 2 || l % 2 != 0) throw ValidationError("L_ab requires an even l >= 2");
  if (a < 0 || b < 0 || a > l / 2 || b > l / 2) throw ValidationError("L_ab requires 0 <= a, b <= l/2");
  if (a + b > l - 1) throw ValidationError("L_ab requires a + b <= l - 1");
}

/// The stated closed form
///   [ (l/2+a+b)^2 (l/2-a) + a(a+b)^2/2 + l^3/8 + 3(bl-a^2-ab)^2/2 ] / (6 (l+a+b)^2)
/// as an exact rational. It equals l/24 at a = b = 0. For other (a, b) it does
/// not match the loss of the configuration it is derived from; see
/// example1_conditional_loss.
inline Rational closed_form_L_ab_exact(std::int64_t l, std::int64_t a, std::int64_t b) {
  check_example1_args(l, a, b);
  const __int128 h = l / 2;
  const __int128 s = h + a + b;
  const __int128 m = static_cast<__int128>(b) * l - static_cast<__int128>(a) * a - static_cast<__int128>(a) * b;
  // everything scaled by 8 to clear the halves
  const __int128 num = 8 * s * s * (h - a) + 4 * static_cast<__int128>(a) * (a + b) * (a + b) +
                       static_cast<__int128>(l) * l * l + 12 * m * m;
  const __int128 den = 48 * static_cast<__int128>(l + a + b) * (l + a + b);
  return {num, den};
}

inline double closed_form_L_ab(std::int64_t l, std::int64_t a, std::int64_t b) {
  return closed_form_L_ab_exact(l, a, b).to_double();
}

/// Two fixed demonstrations and a query.
struct FixedConfig {
  Support first;
  Support second;
  Support query;
  std::size_t dim = 0;
};

/// The symmetric representative used for L_{a,b}: query [0, l),
///   T1 = [0, l/2) u [2l, 5l/2)
///   T2 = [l/2-a, l-a) u [5l/2-b, 3l-b)
/// so T1 and T2 share a coordinates inside the query and b outside it.
inline FixedConfig example1_config(std::int64_t l, std::int64_t a, std::int64_t b) {
  check_example1_args(l, a, b);
  const auto L = static_cast<std::uint32_t>(l), A = static_cast<std::uint32_t>(a),
             B = static_cast<std::uint32_t>(b), H = L / 2;
  FixedConfig c;
  c.dim = 4 * L;
  c.first = set_union(make_range(0, H), make_range(2 * L, 2 * L + H));
  c.second = set_union(make_range(H - A, L - A), make_range(2 * L + H - B, 3 * L - B));
  c.query = make_range(0, L);
  return c;
}

enum class Example2Case { L1, L2, L3 };

inline std::string_view to_string(Example2Case c) {
  switch (c) {
  case Example2Case::L1: return "L1";
  case Example2Case::L2: return "L2";
  case Example2Case::L3: return "L3";
  }
  return "?";
}

/// Query [0, l), T1 = [0, l-1) u {2l}, and T2 per case:
///   L1: [1, l) u {2l+1}   (different query coordinate, different extra)
///   L2: [1, l) u {2l}     (different query coordinate, shared extra)
///   L3: [0, l-1) u {2l+1} (same query coordinates, different extra)
inline FixedConfig example2_config(std::int64_t l, Example2Case which) {
  if (l < 3) throw ValidationError("example2 requires l >= 3");
  const auto L = static_cast<std::uint32_t>(l);
  FixedConfig c;
  c.dim = 4 * L;
  c.query = make_range(0, L);
  c.first = set_union(make_range(0, L - 1), {2 * L});
  switch (which) {
  case Example2Case::L1: c.second = set_union(make_range(1, L), {2 * L + 1}); break;
  case Example2Case::L2: c.second = set_union(make_range(1, L), {2 * L}); break;
  case Example2Case::L3: c.second = set_union(make_range(0, L - 1), {2 * L + 1}); break;
  }
  return c;
}

/// L1 = 1/12 and L2 = L3 = (9l^2 - 7l + 2) / (12 (2l-1)^2).
inline Rational closed_form_example2_exact(std::int64_t l, Example2Case which) {
  if (l < 3) throw ValidationError("example2 requires l >= 3");
  if (which == Example2Case::L1) return {__int128{1}, __int128{12}};
  const __int128 L = l;
  return {9 * L * L - 7 * L + 2, 12 * (2 * L - 1) * (2 * L - 1)};
}

inline double closed_form_example2(std::int64_t l, Example2Case which) {
  return closed_form_example2_exact(l, which).to_double();
}

/// L2 with a (12l-1)^2 denominator, the competing reading of the L2 formula.
/// Kept only so Monte Carlo can rule it out.
inline double example2_L2_alternative(std::int64_t l) {
  const double L = static_cast<double>(l);
  return (9 * L * L - 7 * L + 2) / (12 * (12 * L - 1) * (12 * L - 1));
}

/// Exact E_theta[loss] for two binary demonstrations, theta ~ U[0,1]^d i.i.d.
/// The prediction error is -<r, theta> with r the residual of projecting the
/// query onto span(e1, e2), so the expectation is (sum r)^2/4 + (sum r^2)/12.
inline Rational exact_expected_loss(const FixedConfig& c) {
  const std::int64_t n1 = static_cast<std::int64_t>(c.first.size());
  const std::int64_t n2 = static_cast<std::int64_t>(c.second.size());
  const std::int64_t o = static_cast<std::int64_t>(overlap(c.first, c.second));
  const std::int64_t q1 = static_cast<std::int64_t>(overlap(c.query, c.first));
  const std::int64_t q2 = static_cast<std::int64_t>(overlap(c.query, c.second));
  Rational c1, c2;
  const std::int64_t det = n1 * n2 - o * o;
  if (det != 0) {
    c1 = Rational(__int128{q1} * n2 - __int128{q2} * o, __int128{det});
    c2 = Rational(__int128{q2} * n1 - __int128{q1} * o, __int128{det});
  } else {
    // identical rows: project onto the single direction
    c1 = Rational(__int128{q1}, __int128{n1});
  }
  std::vector<char> in1(c.dim, 0), in2(c.dim, 0), inq(c.dim, 0);
  for (auto i : c.first) in1[i] = 1;
  for (auto i : c.second) in2[i] = 1;
  for (auto i : c.query) inq[i] = 1;
  Rational sum, sum_sq;
  for (std::size_t i = 0; i < c.dim; ++i) {
    Rational r = Rational(std::int64_t{inq[i]});
    if (in1[i]) r = r - c1;
    if (in2[i]) r = r - c2;
    sum = sum + r;
    sum_sq = sum_sq + r * r;
  }
  return sum * sum / Rational(4) + sum_sq / Rational(12);
}

/// The true conditional loss of the L_{a,b} configuration.
inline Rational example1_conditional_loss(std::int64_t l, std::int64_t a, std::int64_t b) {
  return exact_expected_loss(example1_config(l, a, b));
}

/// E_theta[loss] for any selected rows, in floating point.
inline double expected_loss(const std::vector<const Support*>& rows, const Support& query, std::size_t dim) {
  const MinNormModel model(data_matrix(rows, dim));
  const Vector r = model.residual(BinaryExample{query, dim}.embedding());
  return r.sum() * r.sum() / 4.0 + r.squaredNorm() / 12.0;
}

inline constexpr std::size_t kMinFixedConfigTrials = 1000;

/// Monte Carlo mean of the min-norm prediction loss with a fresh
/// theta ~ U[0,1]^d per trial. Trial t draws from its own generator seeded by
/// derive_seed(seed, t), so the estimate does not depend on `threads`.
inline MeanEstimate run_fixed_config_mc(const std::vector<Support>& rows, const Support& query, std::size_t dim,
                                        std::size_t trials, std::uint64_t seed, unsigned threads = 1) {
  if (trials < kMinFixedConfigTrials)
    throw ValidationError("fixed-configuration Monte Carlo needs at least " + std::to_string(kMinFixedConfigTrials) +
                          " trials");
  std::vector<const Support*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  const MinNormModel model(data_matrix(ptrs, dim));
  const Vector eq = BinaryExample{query, dim}.embedding();
  std::vector<double> losses(trials);
  parallel_for(trials, threads, [&](std::size_t t) {
    std::mt19937_64 rng(derive_seed(seed, t));
    Vector theta(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = unit_uniform(rng);
    losses[t] = prediction_loss(model.predict(theta, eq), theta, eq);
  });
  return estimate_mean(losses);
}

inline MeanEstimate run_fixed_config_mc(const FixedConfig& c, std::size_t trials, std::uint64_t seed,
                                        unsigned threads = 1) {
  return run_fixed_config_mc({c.first, c.second}, c.query, c.dim, trials, seed, threads);
}

} // namespace demosel::theory
