#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "demosel/common.hpp"
#include "demosel/embedding_store.hpp"

namespace demosel::eval {

using store::ExampleRecord;

enum class Family { qa, reading, math };

inline std::string_view to_string(Family f) {
  switch (f) {
  case Family::qa: return "qa";
  case Family::reading: return "reading";
  case Family::math: return "math";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "qa") return Family::qa;
  if (s == "reading") return Family::reading;
  if (s == "math") return Family::math;
  throw ValidationError("unknown prompt family '" + std::string(s) + "' (expected qa, reading or math)");
}

inline constexpr std::string_view kMathInstruction =
    "Let's think step by step. You need to solve the final question and answer in the format: \n#### {result}";

/// Block layout and decoding stops of one prompt family.
///   qa:      "Question: {question}\nAnswer: {answer}"
///   reading: "Support: {support}\nQuestion: {question}\nAnswer: {answer}"
///   math:    qa blocks; the instruction line sits directly above the final question.
/// Blocks are separated by a blank line and the prompt ends with "Answer:".
/// Math generation has no stop strings: decoding runs until the model stops.
struct PromptTemplate {
  Family family = Family::qa;
  std::vector<std::string> stops;

  static PromptTemplate for_family(Family f) {
    PromptTemplate t;
    t.family = f;
    switch (f) {
    case Family::qa: t.stops = {"\n\n", "\n\n\n", "Question", "Question:"}; break;
    case Family::reading: t.stops = {"\n\n", "\n\n\n", "Support", "Support:", "Question", "Question:"}; break;
    case Family::math: break;
    }
    return t;
  }
};

namespace detail {

inline const std::string& required_field(const ExampleRecord& r, const std::string& name) {
  auto it = r.fields.find(name);
  if (it == r.fields.end()) throw ValidationError("record '" + r.id + "' is missing field '" + name + "'");
  return it->second;
}

inline void append_block(std::string& out, Family f, const ExampleRecord& r, const std::string* answer) {
  if (f == Family::reading) out += "Support: " + required_field(r, "support") + "\n";
  out += "Question: " + required_field(r, "question") + "\nAnswer:";
  if (answer) out += " " + *answer;
}

} // namespace detail

inline std::string render_prompt(const PromptTemplate& t, const std::vector<const ExampleRecord*>& demos,
                                 const ExampleRecord& query) {
  std::string out;
  for (const auto* d : demos) {
    detail::append_block(out, t.family, *d, &detail::required_field(*d, "answer"));
    out += "\n\n";
  }
  if (t.family == Family::math) {
    out += kMathInstruction;
    out += "\n";
  }
  detail::append_block(out, t.family, query, nullptr);
  return out;
}

inline std::string render_prompt(const PromptTemplate& t, const std::vector<ExampleRecord>& demos,
                                 const ExampleRecord& query) {
  std::vector<const ExampleRecord*> ptrs;
  for (const auto& d : demos) ptrs.push_back(&d);
  return render_prompt(t, ptrs, query);
}

/// Seed 0 keeps the given order; any other seed applies a seeded shuffle.
template <class T>
std::vector<T> permute_demos(std::vector<T> demos, std::uint64_t permutation_seed) {
  if (permutation_seed == 0 || demos.size() < 2) return demos;
  std::mt19937_64 rng(mix64(permutation_seed));
  shuffle_in_place(demos, rng);
  return demos;
}

/// Cuts `generated` at the earliest occurrence of any stop string. When two
/// stops begin at the same offset the longer one wins; the cut position is the
/// same either way. Empty stop strings are ignored.
inline std::string truncate_at_stop(std::string_view generated, const std::vector<std::string>& stops) {
  std::size_t cut = generated.size();
  for (const auto& s : stops) {
    if (s.empty()) continue;
    const auto pos = generated.find(s);
    if (pos != std::string_view::npos && pos < cut) cut = pos;
  }
  return std::string(generated.substr(0, cut));
}

inline std::string trim(std::string_view s) {
  constexpr std::string_view ws = " \t\n\r\f\v";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

struct MathOptions {
  bool strip_commas = true;
};

inline std::string normalize_math(std::string_view s, const MathOptions& opt = {}) {
  std::string out = trim(s);
  if (opt.strip_commas) std::erase(out, ',');
  return out;
}

/// Three stages, first success wins:
///  1. text after the last "#### " up to the end of that line
///  2. content of the last \boxed{...}, braces balanced
///  3. the last signed decimal or fraction token
/// The result is trimmed and (optionally) stripped of commas.
inline std::optional<std::string> extract_math_answer(std::string_view text, const MathOptions& opt = {}) {
  if (const auto pos = text.rfind("#### "); pos != std::string_view::npos) {
    auto rest = text.substr(pos + 5);
    rest = rest.substr(0, rest.find('\n'));
    if (auto v = normalize_math(rest, opt); !v.empty()) return v;
  }
  constexpr std::string_view boxed = "\\boxed{";
  for (auto pos = text.rfind(boxed); pos != std::string_view::npos;
       pos = pos == 0 ? std::string_view::npos : text.rfind(boxed, pos - 1)) {
    const std::size_t start = pos + boxed.size();
    int depth = 1;
    std::size_t i = start;
    for (; i < text.size() && depth > 0; ++i) {
      if (text[i] == '{') ++depth;
      else if (text[i] == '}') --depth;
    }
    if (depth == 0) {
      if (auto v = normalize_math(text.substr(start, i - 1 - start), opt); !v.empty()) return v;
    }
  }
  static const std::regex number(R"([+-]?\d+(?:,\d{3})*(?:\.\d+)?(?:/\d+(?:\.\d+)?)?)");
  const std::string s(text);
  std::optional<std::string> last;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), number); it != std::sregex_iterator(); ++it)
    last = it->str();
  if (last) return normalize_math(*last, opt);
  return std::nullopt;
}

/// Trimmed byte equality against any gold answer. Case-sensitive.
inline bool exact_match(std::string_view prediction, const std::vector<std::string>& golds) {
  if (golds.empty()) throw ValidationError("exact_match needs at least one gold answer");
  const auto p = trim(prediction);
  return std::any_of(golds.begin(), golds.end(), [&](const std::string& g) { return trim(g) == p; });
}

enum class Label { positive, negative };

inline std::string_view to_string(Label l) { return l == Label::positive ? "positive" : "negative"; }

/// Positive iff the positive verbalizer scores strictly higher; ties are negative.
inline Label score_classification(double positive_score, double negative_score) {
  if (!std::isfinite(positive_score) || !std::isfinite(negative_score))
    throw ValidationError("classification scores must be finite");
  return positive_score > negative_score ? Label::positive : Label::negative;
}

/// Index of the option with the highest mean log-probability; the first
/// option wins ties.
inline std::size_t score_multichoice(const std::vector<std::pair<std::string, double>>& option_scores) {
  if (option_scores.empty()) throw ValidationError("empty options");
  if (option_scores.size() < 2) throw ValidationError("multichoice needs at least two options");
  std::size_t best = 0;
  for (std::size_t i = 0; i < option_scores.size(); ++i) {
    if (!std::isfinite(option_scores[i].second))
      throw ValidationError("non-finite score for option '" + option_scores[i].first + "'");
    if (option_scores[i].second > option_scores[best].second) best = i;
  }
  return best;
}

/// Accuracy per alpha on the grid 0.1, ..., 1.0, keyed by tenths (1..10).
using AlphaGrid = std::map<int, double>;

inline AlphaGrid parse_alpha_grid(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("alpha grid must be a JSON object");
  AlphaGrid grid;
  for (auto it = j.begin(); it != j.end(); ++it) {
    double alpha = 0.0;
    try {
      std::size_t used = 0;
      alpha = std::stod(it.key(), &used);
      if (used != it.key().size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ValidationError("alpha grid key '" + it.key() + "' is not a number");
    }
    const double tenths = std::round(alpha * 10.0);
    if (std::abs(alpha * 10.0 - tenths) > 1e-9 || tenths < 1 || tenths > 10)
      throw ValidationError("alpha grid key '" + it.key() + "' is not one of 0.1, ..., 1.0");
    if (!it.value().is_number()) throw ValidationError("accuracy for alpha " + it.key() + " must be a number");
    if (!grid.emplace(static_cast<int>(tenths), it.value().get<double>()).second)
      throw ValidationError("duplicate alpha grid key '" + it.key() + "'");
  }
  return grid;
}

/// Mean accuracy over alpha in {0.6..1.0} minus mean over {0.1..0.5}.
inline double compute_delta(const AlphaGrid& acc) {
  for (int i = 1; i <= 10; ++i)
    if (!acc.count(i)) throw ValidationError("missing alpha grid point " + std::to_string(i / 10) + "." +
                                             std::to_string(i % 10));
  if (acc.size() != 10) throw ValidationError("alpha grid has points outside 0.1, ..., 1.0");
  CompensatedSum lo, hi;
  for (int i = 1; i <= 5; ++i) lo.add(acc.at(i));
  for (int i = 6; i <= 10; ++i) hi.add(acc.at(i));
  return hi.value() / 5.0 - lo.value() / 5.0;
}

struct ExampleOutcome {
  std::string id;
  bool correct = false;
  std::string prediction;
  std::string group; // empty when ungrouped
};

struct GroupStats {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t correct = 0;
};

struct EvalReport {
  double accuracy = 0.0;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::map<std::string, GroupStats> subgroups;
  std::optional<double> delta;
  std::vector<ExampleOutcome> per_example;
};

/// Overall and per-group accuracy. Groups partition the examples: either every
/// outcome carries a group or none does.
inline EvalReport aggregate(std::vector<ExampleOutcome> outcomes) {
  if (outcomes.empty()) throw ValidationError("no examples");
  const bool grouped = !outcomes.front().group.empty();
  EvalReport r;
  for (const auto& o : outcomes) {
    if (o.group.empty() == grouped)
      throw ValidationError("subgroup tags must cover every example or be absent (example '" + o.id + "')");
    ++r.n;
    r.correct += o.correct ? 1 : 0;
    if (grouped) {
      auto& g = r.subgroups[o.group];
      ++g.n;
      g.correct += o.correct ? 1 : 0;
    }
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.n);
  for (auto& [_, g] : r.subgroups) g.accuracy = static_cast<double>(g.correct) / static_cast<double>(g.n);
  r.per_example = std::move(outcomes);
  return r;
}

inline EvalReport aggregate(const std::vector<bool>& correct, const std::vector<std::string>& tags = {}) {
  if (!tags.empty() && tags.size() != correct.size())
    throw ValidationError("subgroup tags must cover every example");
  std::vector<ExampleOutcome> out;
  for (std::size_t i = 0; i < correct.size(); ++i)
    out.push_back({std::to_string(i), correct[i], {}, tags.empty() ? std::string{} : tags[i]});
  return aggregate(std::move(out));
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["n"] = r.n;
  j["correct"] = r.correct;
  j["subgroups"] = nlohmann::ordered_json::object();
  for (const auto& [tag, g] : r.subgroups)
    j["subgroups"][tag] = {{"accuracy", g.accuracy}, {"n", g.n}, {"correct", g.correct}};
  if (r.delta) j["delta"] = *r.delta;
  auto per = nlohmann::ordered_json::array();
  for (const auto& o : r.per_example) {
    nlohmann::ordered_json e;
    e["query_id"] = o.id;
    e["correct"] = o.correct;
    e["prediction"] = o.prediction;
    if (!o.group.empty()) e["group"] = o.group;
    per.push_back(std::move(e));
  }
  j["per_example"] = std::move(per);
  return j;
}

} // namespace demosel::eval
