#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "demosel/common.hpp"
#include "demosel/embedding_store.hpp"
#include "demosel/model_client.hpp"
#include "demosel/prompt_eval.hpp"
#include "demosel/selection.hpp"

namespace demosel::harness {

using store::ExampleRecord;
using store::Pool;

enum class TaskKind { generation, math, classification, multichoice };

inline std::string_view to_string(TaskKind k) {
  switch (k) {
  case TaskKind::generation: return "generation";
  case TaskKind::math: return "math";
  case TaskKind::classification: return "classification";
  case TaskKind::multichoice: return "multichoice";
  }
  return "?";
}

inline TaskKind parse_task(std::string_view s) {
  if (s == "generation") return TaskKind::generation;
  if (s == "math") return TaskKind::math;
  if (s == "classification") return TaskKind::classification;
  if (s == "multichoice") return TaskKind::multichoice;
  throw ValidationError("unknown task '" + std::string(s) + "'");
}

/// How a query is judged.
///  generation:     truncate at the template stops, exact match against the golds
///  math:           extract the final expression from both output and gold, then compare
///  classification: compare the two verbalizer scores
///  multichoice:    options come from the query field `options_field`, one per line
/// Golds are the `answer` field plus any meta entries whose key starts with
/// "alt_answer".
struct TaskSpec {
  TaskKind kind = TaskKind::generation;
  eval::PromptTemplate prompt = eval::PromptTemplate::for_family(eval::Family::qa);
  std::string positive = "great";
  std::string negative = "terrible";
  std::string options_field = "options";
  int max_tokens = 256;
  eval::MathOptions math;
  /// "" for no subgroups, "dataset" for the record's dataset tag, or
  /// "meta:<key>" for a meta entry.
  std::string group_by;

  void validate() const {
    if (kind == TaskKind::classification && (positive.empty() || negative.empty() || positive == negative))
      throw ValidationError("classification needs two distinct non-empty verbalizers");
    if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");
    if (!group_by.empty() && group_by != "dataset" && group_by.rfind("meta:", 0) != 0)
      throw ValidationError("group-by must be 'dataset' or 'meta:<key>'");
  }
};

inline std::vector<std::string> golds_of(const ExampleRecord& q) {
  auto answer = q.field("answer");
  if (!answer) throw ValidationError("query '" + q.id + "' has no gold 'answer' field");
  std::vector<std::string> out{*answer};
  for (const auto& [k, v] : q.meta)
    if (k.rfind("alt_answer", 0) == 0) out.push_back(v);
  return out;
}

inline std::vector<std::string> options_of(const ExampleRecord& q, const std::string& field) {
  std::vector<std::string> out;
  auto text = q.field(field);
  if (!text) return out;
  std::string_view rest = *text;
  while (!rest.empty()) {
    const auto nl = rest.find('\n');
    auto opt = eval::trim(rest.substr(0, nl));
    if (!opt.empty()) out.push_back(std::move(opt));
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  return out;
}

inline std::string group_of(const ExampleRecord& q, const std::string& group_by) {
  if (group_by.empty()) return {};
  if (group_by == "dataset") {
    if (q.dataset.empty()) throw ValidationError("query '" + q.id + "' has no dataset tag");
    return q.dataset;
  }
  const auto key = group_by.substr(5);
  auto v = q.tag(key);
  if (!v || v->empty()) throw ValidationError("query '" + q.id + "' has no meta tag '" + key + "'");
  return *v;
}

struct RenderedPrompt {
  std::string query_id;
  std::vector<std::string> demo_ids; // in prompt order
  std::string prompt;
};

inline nlohmann::ordered_json to_json(const RenderedPrompt& p) {
  nlohmann::ordered_json j;
  j["query_id"] = p.query_id;
  j["demo_ids"] = p.demo_ids;
  j["prompt"] = p.prompt;
  return j;
}

inline RenderedPrompt parse_rendered_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    return {j.at("query_id").get<std::string>(), j.at("demo_ids").get<std::vector<std::string>>(),
            j.at("prompt").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed prompt line: ") + e.what());
  }
}

/// One prompt per selection line, demos reordered by `permutation_seed`.
inline std::vector<RenderedPrompt> render_all(const eval::PromptTemplate& t, const Pool& demos, const Pool& queries,
                                              const std::vector<selection::SelectionLine>& selections,
                                              std::uint64_t permutation_seed) {
  std::vector<RenderedPrompt> out;
  out.reserve(selections.size());
  for (const auto& s : selections) {
    const auto qi = queries.index_of(s.query_id);
    if (!qi) throw ValidationError("selection refers to unknown query '" + s.query_id + "'");
    std::vector<const ExampleRecord*> chosen;
    for (const auto& id : s.demo_ids) {
      const auto di = demos.index_of(id);
      if (!di) throw ValidationError("selection for '" + s.query_id + "' refers to unknown demo '" + id + "'");
      chosen.push_back(&demos[*di]);
    }
    chosen = eval::permute_demos(std::move(chosen), permutation_seed);
    RenderedPrompt r;
    r.query_id = s.query_id;
    for (const auto* d : chosen) r.demo_ids.push_back(d->id);
    r.prompt = eval::render_prompt(t, chosen, queries[*qi]);
    out.push_back(std::move(r));
  }
  return out;
}

/// Raw model output for one query: generated text or per-option scores.
struct Prediction {
  std::string query_id;
  std::optional<std::string> generated;
  std::vector<std::pair<std::string, double>> scores; // presentation order
};

inline Prediction parse_prediction_line(const std::string& line) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("malformed prediction line: ") + e.what());
  }
  Prediction p;
  if (!j.contains("query_id") || !j["query_id"].is_string()) throw ValidationError("prediction lacks 'query_id'");
  p.query_id = j["query_id"].get<std::string>();
  if (j.contains("generated")) {
    if (!j["generated"].is_string()) throw ValidationError("'generated' must be a string");
    p.generated = j["generated"].get<std::string>();
  } else if (j.contains("scores") && j["scores"].is_object()) {
    for (auto it = j["scores"].begin(); it != j["scores"].end(); ++it) {
      if (!it.value().is_number()) throw ValidationError("score for '" + it.key() + "' must be a number");
      p.scores.emplace_back(it.key(), it.value().get<double>());
    }
  } else {
    throw ValidationError("prediction for '" + p.query_id + "' has neither 'generated' nor 'scores'");
  }
  return p;
}

inline std::vector<Prediction> read_predictions(std::istream& in) {
  std::vector<Prediction> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_prediction_line(line));
    } catch (const ValidationError& e) {
      throw ValidationError(std::string(e.what()) + " at line " + std::to_string(n));
    }
  }
  return out;
}

namespace detail {

inline double score_for(const Prediction& p, const std::string& option) {
  for (const auto& [o, s] : p.scores)
    if (o == option) return s;
  throw ValidationError("prediction for '" + p.query_id + "' has no score for '" + option + "'");
}

} // namespace detail

/// Applies the task's decoding and scoring rules to one prediction.
inline eval::ExampleOutcome judge(const TaskSpec& task, const ExampleRecord& query, const Prediction& pred) {
  eval::ExampleOutcome o;
  o.id = query.id;
  o.group = group_of(query, task.group_by);
  const auto golds = golds_of(query);
  switch (task.kind) {
  case TaskKind::generation: {
    if (!pred.generated) throw ValidationError("generation task needs generated text for '" + query.id + "'");
    o.prediction = eval::trim(eval::truncate_at_stop(*pred.generated, task.prompt.stops));
    o.correct = eval::exact_match(o.prediction, golds);
    break;
  }
  case TaskKind::math: {
    if (!pred.generated) throw ValidationError("math task needs generated text for '" + query.id + "'");
    const auto extracted =
        eval::extract_math_answer(eval::truncate_at_stop(*pred.generated, task.prompt.stops), task.math);
    o.prediction = extracted.value_or("");
    if (extracted) {
      std::vector<std::string> normalized;
      for (const auto& g : golds)
        normalized.push_back(eval::extract_math_answer(g, task.math).value_or(eval::normalize_math(g, task.math)));
      o.correct = eval::exact_match(*extracted, normalized);
    }
    break;
  }
  case TaskKind::classification: {
    const auto label = eval::score_classification(detail::score_for(pred, task.positive),
                                                  detail::score_for(pred, task.negative));
    o.prediction = label == eval::Label::positive ? task.positive : task.negative;
    o.correct = eval::exact_match(o.prediction, golds);
    break;
  }
  case TaskKind::multichoice: {
    auto options = options_of(query, task.options_field);
    std::vector<std::pair<std::string, double>> scored;
    if (options.empty()) {
      scored = pred.scores;
    } else {
      for (const auto& opt : options) scored.emplace_back(opt, detail::score_for(pred, opt));
    }
    o.prediction = scored.at(eval::score_multichoice(scored)).first;
    o.correct = eval::exact_match(o.prediction, golds);
    break;
  }
  }
  return o;
}

/// Queries the model for one prompt: a greedy completion for generation tasks,
/// " " + option scores for the scored ones.
inline Prediction predict(const TaskSpec& task, const ExampleRecord& query, const std::string& prompt,
                          client::ModelClient& model) {
  Prediction p;
  p.query_id = query.id;
  if (task.kind == TaskKind::generation || task.kind == TaskKind::math) {
    client::CompletionRequest req;
    req.prompt = prompt;
    req.max_tokens = task.max_tokens;
    req.stop = task.prompt.stops;
    req.temperature = 0.0;
    p.generated = model.complete(req);
    return p;
  }
  std::vector<std::string> options;
  if (task.kind == TaskKind::classification) {
    options = {task.positive, task.negative};
  } else {
    options = options_of(query, task.options_field);
    if (options.size() < 2)
      throw ValidationError("query '" + query.id + "' needs at least two options in field '" + task.options_field +
                            "'");
  }
  for (const auto& opt : options) p.scores.emplace_back(opt, model.score({prompt, " " + opt}));
  return p;
}

/// Full pipeline over rendered prompts. Results land in per-query slots, so the
/// report does not depend on `threads` or on provider timing.
inline eval::EvalReport evaluate_with_model(const TaskSpec& task, const Pool& queries,
                                            const std::vector<RenderedPrompt>& prompts, client::ModelClient& model,
                                            unsigned threads = 1) {
  task.validate();
  std::vector<eval::ExampleOutcome> outcomes(prompts.size());
  parallel_for(prompts.size(), threads, [&](std::size_t i) {
    const auto qi = queries.index_of(prompts[i].query_id);
    if (!qi) throw ValidationError("prompt refers to unknown query '" + prompts[i].query_id + "'");
    const auto& q = queries[*qi];
    outcomes[i] = judge(task, q, predict(task, q, prompts[i].prompt, model));
  });
  return eval::aggregate(std::move(outcomes));
}

/// Scores precomputed predictions.
inline eval::EvalReport evaluate_predictions(const TaskSpec& task, const Pool& queries,
                                             const std::vector<Prediction>& predictions) {
  task.validate();
  std::vector<eval::ExampleOutcome> outcomes;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    if (!seen.emplace(p.query_id, i).second) throw ValidationError("duplicate prediction for '" + p.query_id + "'");
    const auto qi = queries.index_of(p.query_id);
    if (!qi) throw ValidationError("prediction refers to unknown query '" + p.query_id + "'");
    outcomes.push_back(judge(task, queries[*qi], p));
  }
  return eval::aggregate(std::move(outcomes));
}

} // namespace demosel::harness
