#include <gtest/gtest.h>

#include <sstream>

#include "demosel/harness.hpp"

using namespace demosel;
using namespace demosel::harness;

namespace {

ExampleRecord query(const std::string& id, const std::string& answer, std::map<std::string, std::string> meta = {}) {
  ExampleRecord r;
  r.id = id;
  r.role = store::Role::query;
  r.dataset = "geo";
  r.fields["question"] = "question " + id;
  r.fields["answer"] = answer;
  r.meta = std::move(meta);
  r.embedding = {1.0f, 0.0f};
  return r;
}

Prediction generated(const std::string& id, const std::string& text) { return {id, text, {}}; }

Prediction scored(const std::string& id, std::vector<std::pair<std::string, double>> s) {
  return {id, std::nullopt, std::move(s)};
}

TaskSpec task(TaskKind kind) {
  TaskSpec t;
  t.kind = kind;
  if (kind == TaskKind::math) t.prompt = eval::PromptTemplate::for_family(eval::Family::math);
  return t;
}

} // namespace

TEST(Judge, GenerationTruncatesTrimsAndMatches) {
  const auto q = query("q1", "Denver", {{"alt_answer_1", "the city of Denver"}});
  auto o = judge(task(TaskKind::generation), q, generated("q1", " Denver\n\nQuestion: what else"));
  EXPECT_TRUE(o.correct);
  EXPECT_EQ(o.prediction, "Denver");
  EXPECT_TRUE(judge(task(TaskKind::generation), q, generated("q1", "the city of Denver")).correct);
  EXPECT_FALSE(judge(task(TaskKind::generation), q, generated("q1", "denver")).correct);
  EXPECT_THROW(judge(task(TaskKind::generation), q, scored("q1", {{"a", 1}})), ValidationError);
}

TEST(Judge, MathExtractsFromOutputAndGold) {
  const auto q = query("m1", "She pays 3 * 400 = 1,200 dollars.\n#### 1,200");
  auto o = judge(task(TaskKind::math), q, generated("m1", "3 * 400 = 1200\n#### 1200"));
  EXPECT_TRUE(o.correct);
  EXPECT_EQ(o.prediction, "1200");
  EXPECT_TRUE(judge(task(TaskKind::math), q, generated("m1", "so \\boxed{1200}")).correct);
  EXPECT_FALSE(judge(task(TaskKind::math), q, generated("m1", "#### 1100")).correct);
  const auto none = judge(task(TaskKind::math), q, generated("m1", "no idea"));
  EXPECT_FALSE(none.correct);
  EXPECT_EQ(none.prediction, "");
  auto keep = task(TaskKind::math);
  keep.math.strip_commas = false;
  EXPECT_FALSE(judge(keep, q, generated("m1", "#### 1200")).correct);
}

TEST(Judge, ClassificationUsesVerbalizerScores) {
  const auto q = query("c1", "great");
  const auto o = judge(task(TaskKind::classification), q, scored("c1", {{"great", -0.2}, {"terrible", -1.5}}));
  EXPECT_TRUE(o.correct);
  EXPECT_EQ(o.prediction, "great");
  EXPECT_FALSE(judge(task(TaskKind::classification), q, scored("c1", {{"great", -1.0}, {"terrible", -1.0}})).correct);
  EXPECT_THROW(judge(task(TaskKind::classification), q, scored("c1", {{"great", -1.0}})), ValidationError);
}

TEST(Judge, MultichoiceFollowsOptionField) {
  auto q = query("mc", "blue");
  q.fields["options"] = "red\nblue\n green \n";
  EXPECT_EQ(options_of(q, "options"), (std::vector<std::string>{"red", "blue", "green"}));
  const auto o = judge(task(TaskKind::multichoice), q, scored("mc", {{"green", -2.0}, {"blue", -0.7}, {"red", -1.2}}));
  EXPECT_TRUE(o.correct);
  EXPECT_EQ(o.prediction, "blue");
  // without an options field the score order is the presentation order
  const auto plain = query("mc2", "x");
  EXPECT_EQ(judge(task(TaskKind::multichoice), plain, scored("mc2", {{"x", -1.0}, {"y", -1.0}})).prediction, "x");
}

TEST(Groups, DatasetAndMetaTags) {
  const auto q = query("g", "a", {{"difficulty", "hard"}});
  EXPECT_EQ(group_of(q, ""), "");
  EXPECT_EQ(group_of(q, "dataset"), "geo");
  EXPECT_EQ(group_of(q, "meta:difficulty"), "hard");
  EXPECT_THROW(group_of(q, "meta:split"), ValidationError);
  TaskSpec t;
  t.group_by = "colour";
  EXPECT_THROW(t.validate(), ValidationError);
}

TEST(Predictions, ParseAndEvaluate) {
  std::istringstream in(R"({"query_id":"a","generated":"Denver"})" "\n\n"
                        R"({"query_id":"b","generated":"Boise\n\nQuestion: x"})" "\n"
                        R"({"query_id":"c","generated":"Reno"})" "\n");
  const auto preds = read_predictions(in);
  ASSERT_EQ(preds.size(), 3u);
  std::vector<ExampleRecord> qs{query("a", "Denver", {{"difficulty", "easy"}}),
                                query("b", "Boise", {{"difficulty", "hard"}}),
                                query("c", "Carson City", {{"difficulty", "hard"}})};
  const Pool pool(std::move(qs));
  auto t = task(TaskKind::generation);
  t.group_by = "meta:difficulty";
  const auto r = evaluate_predictions(t, pool, preds);
  EXPECT_NEAR(r.accuracy, 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(r.subgroups.at("easy").accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.subgroups.at("hard").accuracy, 0.5);

  auto dup = preds;
  dup.push_back(preds[0]);
  EXPECT_THROW(evaluate_predictions(t, pool, dup), ValidationError);
  EXPECT_THROW(evaluate_predictions(t, pool, {generated("zz", "x")}), ValidationError);
}

TEST(Predictions, ScoresKeepPresentationOrder) {
  const auto p = parse_prediction_line(R"({"query_id":"q","scores":{"zeta":-1,"alpha":-2}})");
  ASSERT_EQ(p.scores.size(), 2u);
  EXPECT_EQ(p.scores[0].first, "zeta");
  EXPECT_THROW(parse_prediction_line(R"({"query_id":"q"})"), ValidationError);
  EXPECT_THROW(parse_prediction_line(R"({"generated":"x"})"), ValidationError);
  std::istringstream bad("{\"query_id\":\"q\",\"generated\":1}\n");
  try {
    read_predictions(bad);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
  }
}

TEST(Pipeline, MockEvaluationIndependentOfThreads) {
  std::vector<ExampleRecord> demo_recs, query_recs;
  for (int i = 0; i < 3; ++i) {
    auto d = query("d" + std::to_string(i), "A" + std::to_string(i));
    d.role = store::Role::demo;
    demo_recs.push_back(d);
  }
  for (int i = 0; i < 6; ++i) query_recs.push_back(query("q" + std::to_string(i), "ans" + std::to_string(i)));
  const Pool demos(std::move(demo_recs)), queries(std::move(query_recs));
  std::vector<selection::SelectionLine> sel;
  for (int i = 0; i < 6; ++i) sel.push_back({"q" + std::to_string(i), {"d2", "d0"}});
  const auto tmpl = eval::PromptTemplate::for_family(eval::Family::qa);
  const auto prompts = render_all(tmpl, demos, queries, sel, 0);
  ASSERT_EQ(prompts.size(), 6u);
  EXPECT_EQ(prompts[0].demo_ids, (std::vector<std::string>{"d2", "d0"}));
  EXPECT_EQ(prompts[0].prompt,
            "Question: question d2\nAnswer: A2\n\nQuestion: question d0\nAnswer: A0\n\nQuestion: question q0\nAnswer:");

  std::ostringstream fixture;
  for (int i = 0; i < 6; ++i) {
    nlohmann::json j{{"kind", "complete"},
                     {"prompt", prompts[static_cast<std::size_t>(i)].prompt},
                     {"text", (i % 3 ? " ans" : " wrong") + std::to_string(i) + "\n\nQuestion: more"}};
    fixture << j.dump() << '\n';
  }
  std::istringstream in(fixture.str());
  auto mock = client::MockProvider::parse(in);
  client::ModelClient model(mock, 2);
  const auto t1 = eval::to_json(evaluate_with_model(task(TaskKind::generation), queries, prompts, model, 1)).dump();
  const auto t4 = eval::to_json(evaluate_with_model(task(TaskKind::generation), queries, prompts, model, 4)).dump();
  EXPECT_EQ(t1, t4);
  EXPECT_NEAR(nlohmann::json::parse(t1)["accuracy"].get<double>(), 4.0 / 6.0, 1e-15);

  EXPECT_THROW(render_all(tmpl, demos, queries, {{"q0", {"nope"}}}, 0), ValidationError);
  EXPECT_THROW(render_all(tmpl, demos, queries, {{"nope", {"d0"}}}, 0), ValidationError);
}

TEST(Pipeline, PermutationSeedReordersDemos) {
  std::vector<ExampleRecord> demo_recs;
  for (int i = 0; i < 5; ++i) {
    auto d = query("d" + std::to_string(i), "A");
    d.role = store::Role::demo;
    demo_recs.push_back(d);
  }
  const Pool demos(std::move(demo_recs)), queries(std::vector<ExampleRecord>{query("q", "a")});
  const std::vector<selection::SelectionLine> sel{{"q", {"d0", "d1", "d2", "d3", "d4"}}};
  const auto tmpl = eval::PromptTemplate::for_family(eval::Family::qa);
  EXPECT_EQ(render_all(tmpl, demos, queries, sel, 0)[0].demo_ids, sel[0].demo_ids);
  auto permuted = render_all(tmpl, demos, queries, sel, 4)[0].demo_ids;
  EXPECT_EQ(permuted, render_all(tmpl, demos, queries, sel, 4)[0].demo_ids);
  std::sort(permuted.begin(), permuted.end());
  EXPECT_EQ(permuted, sel[0].demo_ids);
}

TEST(Prompts, JsonRoundtrip) {
  const RenderedPrompt p{"q", {"a", "b"}, "Question: x\nAnswer:"};
  const auto back = parse_rendered_line(to_json(p).dump());
  EXPECT_EQ(back.query_id, "q");
  EXPECT_EQ(back.demo_ids, p.demo_ids);
  EXPECT_EQ(back.prompt, p.prompt);
  EXPECT_THROW(parse_rendered_line("{}"), ValidationError);
}
