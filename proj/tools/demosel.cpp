// demosel: command-line front end for demonstration selection, simulation and
// evaluation. Exit status: 0 success, 1 invalid input or usage, 2 internal or
// provider failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "demosel/common.hpp"
#include "demosel/embedding_store.hpp"
#include "demosel/harness.hpp"
#include "demosel/model_client.hpp"
#include "demosel/prompt_eval.hpp"
#include "demosel/selection.hpp"
#include "demosel/theory/closed_form.hpp"
#include "demosel/theory/simulation.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace demosel;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

// --threads never changes results, so it is left out of the recorded config.
json run_config(const std::string& command, const Globals& g, json options) {
  json j;
  j["command"] = command;
  j["seed"] = g.seed;
  j["options"] = std::move(options);
  return j;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path.string() + ": cannot open for writing");
  out << content;
  if (!out) throw ValidationError(path.string() + ": write failed");
}

void write_run_sidecar(const fs::path& out, const json& config) {
  write_file(out.string() + ".run.json", config.dump(2) + "\n");
}

std::string read_text(const fs::path& path) { return store::read_file(path); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(line);
  return out;
}

bool is_jsonl_path(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".jsonl" || ext == ".json";
}

// --- ingest ---------------------------------------------------------------

struct IngestOpts {
  std::string in, out, format = "auto";
};

int cmd_ingest(const IngestOpts& o, const Globals& g) {
  const auto pool = store::load_pool(o.in);
  const bool jsonl = o.format == "jsonl" || (o.format == "auto" && is_jsonl_path(o.out));
  if (jsonl)
    store::save_pool_jsonl(pool, o.out);
  else
    store::save_pool_binary(pool, o.out);
  write_run_sidecar(o.out,
                    run_config("ingest", g, {{"in", o.in}, {"out", o.out}, {"format", jsonl ? "jsonl" : "binary"}}));
  std::cerr << "ingested " << pool.size() << " records of dimension " << pool.dim() << " into " << o.out << '\n';
  return 0;
}

// --- select ---------------------------------------------------------------

struct SelectOpts {
  std::string demos, queries, out, method = "topk", coreset_in, coreset_out;
  std::size_t k = 4;
  double alpha = selection::kDefaultAlpha;
  std::size_t coreset = selection::kDefaultCoresetSize;
  std::size_t kmeans_iters = selection::kDefaultKMeansIterations;
};

int cmd_select(const SelectOpts& o, const Globals& g) {
  const auto demos = store::load_pool(o.demos);
  const auto queries = store::load_pool(o.queries);
  if (demos.dim() != queries.dim())
    throw ValidationError("demo dimension " + std::to_string(demos.dim()) + " differs from query dimension " +
                          std::to_string(queries.dim()));
  selection::SelectionConfig cfg;
  cfg.method = selection::parse_method(o.method);
  cfg.k = o.k;
  cfg.alpha = o.alpha;
  cfg.coreset_size = o.coreset;
  cfg.seed = g.seed;
  cfg.kmeans_max_iterations = o.kmeans_iters;
  cfg.validate(demos.size());

  std::vector<std::size_t> fixed;
  fs::path coreset_path;
  if (cfg.method == selection::Method::div) {
    if (!o.coreset_in.empty()) {
      const auto j = read_json(o.coreset_in);
      if (!j.contains("demo_ids") || !j["demo_ids"].is_array())
        throw ValidationError(o.coreset_in + ": missing 'demo_ids'");
      for (const auto& id : j["demo_ids"]) {
        if (!id.is_string()) throw ValidationError(o.coreset_in + ": demo ids must be strings");
        const auto idx = demos.index_of(id.get<std::string>());
        if (!idx) throw ValidationError(o.coreset_in + ": unknown demo '" + id.get<std::string>() + "'");
        fixed.push_back(*idx);
      }
      if (fixed.size() < cfg.k) throw ValidationError("coreset size " + std::to_string(fixed.size()) + " < k");
    } else {
      fixed = selection::build_div_coreset(demos, cfg.coreset_size, cfg.seed);
    }
    coreset_path = o.coreset_out.empty() ? fs::path(o.out + ".coreset.json") : fs::path(o.coreset_out);
  } else if (cfg.method == selection::Method::kmeans) {
    fixed = selection::kmeans_representatives(demos, cfg.k, cfg.seed, cfg.kmeans_max_iterations);
  }

  std::vector<std::string> lines(queries.size());
  parallel_for(queries.size(), g.threads, [&](std::size_t i) {
    const auto& q = queries[i];
    selection::SelectionResult r;
    switch (cfg.method) {
    case selection::Method::rand: {
      auto c = cfg;
      c.seed = derive_seed(cfg.seed, i);
      r = selection::select_rand(demos, q, c);
      r.config.seed = cfg.seed;
      break;
    }
    case selection::Method::div: r = selection::select_div(demos, q, cfg, fixed); break;
    case selection::Method::kmeans: r = selection::describe_fixed(demos, q, cfg, fixed); break;
    default: r = selection::select(demos, q, cfg); break;
    }
    lines[i] = selection::to_json(r).dump();
  });
  std::string body;
  for (const auto& l : lines) body += l + "\n";
  write_file(o.out, body);

  json opts = {{"demos", o.demos}, {"queries", o.queries}, {"out", o.out}, {"method", selection::to_string(cfg.method)},
               {"k", cfg.k}};
  if (cfg.method == selection::Method::topk_div) opts["alpha"] = cfg.alpha;
  if (cfg.method == selection::Method::div) {
    opts["coreset_size"] = fixed.size();
    if (!o.coreset_in.empty()) opts["coreset_in"] = o.coreset_in;
  }
  if (cfg.method == selection::Method::kmeans) opts["kmeans_max_iterations"] = cfg.kmeans_max_iterations;
  const auto config = run_config("select", g, opts);
  write_run_sidecar(o.out, config);
  if (!coreset_path.empty()) {
    json c;
    c["run_config"] = config;
    c["coreset_size"] = fixed.size();
    c["seed"] = cfg.seed;
    c["demo_ids"] = json::array();
    for (auto i : fixed) c["demo_ids"].push_back(demos[i].id);
    write_file(coreset_path, c.dump(2) + "\n");
  }
  return 0;
}

// --- simulate -------------------------------------------------------------

struct SimulateOpts {
  std::string dist, methods = "topk,topk_div", out, table;
  std::size_t l = 0, d = 200, k = 2, train_scale = 1, trials = 100, seeds = 1;
  double alpha = 0.5;
  std::string fixed; // example1 | example2
  std::int64_t a = 0, b = 0;
  std::string case_name = "L1";
};

std::vector<theory::SimMethod> parse_methods(const std::string& list) {
  std::vector<theory::SimMethod> out;
  std::stringstream ss(list);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(theory::parse_sim_method(item));
  return out;
}

std::string fmt(double x, int precision = 6) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << x;
  return os.str();
}

// Loss comparison for the example2 setting: the diversity-aware pick should
// land on the disjoint-coordinate case once alpha >= 1 - 1/l.
std::string example2_check(const theory::SimReport& r) {
  const auto l = static_cast<std::int64_t>(r.config.dist.l);
  const double l1 = theory::closed_form_example2(l, theory::Example2Case::L1);
  const double l23 = theory::closed_form_example2(l, theory::Example2Case::L2);
  const double threshold = 1.0 - 1.0 / static_cast<double>(l);
  std::ostringstream os;
  os << "\nDiversity check (example2, l=" << l << ", K=" << r.config.k << ", alpha=" << r.config.alpha
     << ", threshold 1-1/l=" << fmt(threshold, 4) << ")\n";
  os << "  closed form: L1=" << fmt(l1) << "  L2=L3=" << fmt(l23) << '\n';
  const auto td = r.methods.find(theory::SimMethod::topk_div);
  const auto tk = r.methods.find(theory::SimMethod::topk);
  if (td != r.methods.end()) {
    const double z = td->second.se_loss > 0 ? std::abs(td->second.mean_loss - l1) / td->second.se_loss : 0.0;
    os << "  topk_div mean loss " << fmt(td->second.mean_loss) << " (se " << fmt(td->second.se_loss) << "), "
       << fmt(z, 2) << " se from L1\n";
  }
  if (tk != r.methods.end())
    os << "  topk     mean loss " << fmt(tk->second.mean_loss) << " (se " << fmt(tk->second.se_loss) << ")\n";
  if (td != r.methods.end() && tk != r.methods.end())
    os << "  topk > topk_div: " << (tk->second.mean_loss > td->second.mean_loss ? "yes" : "no")
       << (r.config.alpha >= threshold ? "" : "  (alpha below threshold)") << '\n';
  return os.str();
}

int cmd_simulate_fixed(const SimulateOpts& o, const Globals& g) {
  theory::FixedConfig cfg;
  json result;
  double closed = 0.0, exact = 0.0;
  if (o.fixed == "example1") {
    cfg = theory::example1_config(static_cast<std::int64_t>(o.l), o.a, o.b);
    closed = theory::closed_form_L_ab(static_cast<std::int64_t>(o.l), o.a, o.b);
    exact = theory::example1_conditional_loss(static_cast<std::int64_t>(o.l), o.a, o.b).to_double();
    result["a"] = o.a;
    result["b"] = o.b;
  } else if (o.fixed == "example2") {
    theory::Example2Case c;
    if (o.case_name == "L1") c = theory::Example2Case::L1;
    else if (o.case_name == "L2") c = theory::Example2Case::L2;
    else if (o.case_name == "L3") c = theory::Example2Case::L3;
    else throw ValidationError("--case must be L1, L2 or L3");
    cfg = theory::example2_config(static_cast<std::int64_t>(o.l), c);
    closed = theory::closed_form_example2(static_cast<std::int64_t>(o.l), c);
    exact = theory::exact_expected_loss(cfg).to_double();
    result["case"] = o.case_name;
    if (c == theory::Example2Case::L2)
      result["alternative_L2"] = theory::example2_L2_alternative(static_cast<std::int64_t>(o.l));
  } else {
    throw ValidationError("--fixed must be example1 or example2");
  }
  const auto mc = theory::run_fixed_config_mc(cfg, o.trials, g.seed, g.threads);
  result["l"] = o.l;
  result["trials"] = o.trials;
  result["mc_mean"] = mc.mean;
  result["mc_se"] = mc.std_error;
  result["closed_form"] = closed;
  result["exact"] = exact;
  result["closed_form_z"] = mc.std_error > 0 ? (mc.mean - closed) / mc.std_error : 0.0;
  result["exact_z"] = mc.std_error > 0 ? (mc.mean - exact) / mc.std_error : 0.0;

  json doc;
  doc["run_config"] = run_config("simulate", g,
                                 {{"fixed", o.fixed}, {"l", o.l}, {"a", o.a}, {"b", o.b}, {"case", o.case_name},
                                  {"trials", o.trials}});
  doc["result"] = result;
  std::ostringstream text;
  text << "Fixed configuration " << o.fixed << " l=" << o.l << " trials=" << o.trials << '\n'
       << "  monte carlo  " << fmt(mc.mean) << " (se " << fmt(mc.std_error) << ")\n"
       << "  closed form  " << fmt(closed) << "  z=" << fmt(result["closed_form_z"].get<double>(), 2) << '\n'
       << "  exact        " << fmt(exact) << "  z=" << fmt(result["exact_z"].get<double>(), 2) << '\n';
  if (result.contains("alternative_L2")) {
    const double alt = result["alternative_L2"].get<double>();
    text << "  alt. L2      " << fmt(alt) << "  z=" << fmt(mc.std_error > 0 ? (mc.mean - alt) / mc.std_error : 0.0, 2)
         << '\n';
  }
  if (!o.out.empty()) write_file(o.out, doc.dump(2) + "\n");
  else std::cout << doc.dump(2) << '\n';
  std::cerr << text.str();
  return 0;
}

int cmd_simulate(const SimulateOpts& o, const Globals& g) {
  if (!o.fixed.empty()) return cmd_simulate_fixed(o, g);
  if (o.dist.empty()) throw ValidationError("--dist is required unless --fixed is given");
  theory::SimConfig cfg;
  cfg.dist.kind = theory::parse_distribution(o.dist);
  cfg.dist.l = o.l;
  cfg.dist.d = o.d;
  cfg.k = o.k;
  cfg.alpha = o.alpha;
  cfg.train_scale = o.train_scale;
  cfg.trials = o.trials;
  cfg.seeds = o.seeds;
  cfg.master_seed = g.seed;
  cfg.methods = parse_methods(o.methods);
  const auto report = theory::run_simulation(cfg, g.threads);

  auto doc = theory::to_json(report);
  const auto config = run_config("simulate", g, theory::to_json(cfg));
  json out;
  out["run_config"] = config;
  for (auto it = doc.begin(); it != doc.end(); ++it) out[it.key()] = it.value();
  std::string table = theory::render_table(report);
  if (cfg.dist.kind == theory::Distribution::example2) table += example2_check(report);

  if (!o.out.empty()) write_file(o.out, out.dump(2) + "\n");
  if (!o.table.empty()) {
    write_file(o.table, table);
    write_run_sidecar(o.table, config);
  }
  if (o.out.empty()) std::cout << out.dump(2) << '\n';
  if (o.table.empty()) (o.out.empty() ? std::cerr : std::cout) << table;
  return 0;
}

// --- render ---------------------------------------------------------------

struct RenderOpts {
  std::string demos, queries, selections, family = "qa", out, raw_dir;
  std::uint64_t perm_seed = 0;
};

std::vector<selection::SelectionLine> read_selections(const fs::path& path) {
  std::vector<selection::SelectionLine> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      out.push_back(selection::parse_selection_line(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": " + e.what() + " (record " + std::to_string(n) + ")");
    }
  }
  return out;
}

int cmd_render(const RenderOpts& o, const Globals& g) {
  const auto demos = store::load_pool(o.demos);
  const auto queries = store::load_pool(o.queries);
  const auto tmpl = eval::PromptTemplate::for_family(eval::parse_family(o.family));
  const auto prompts = harness::render_all(tmpl, demos, queries, read_selections(o.selections), o.perm_seed);
  std::string body;
  for (const auto& p : prompts) body += harness::to_json(p).dump() + "\n";
  write_file(o.out, body);
  if (!o.raw_dir.empty())
    for (const auto& p : prompts) write_file(fs::path(o.raw_dir) / (p.query_id + ".txt"), p.prompt);
  write_run_sidecar(o.out, run_config("render", g,
                                      {{"demos", o.demos}, {"queries", o.queries}, {"selections", o.selections},
                                       {"family", o.family}, {"perm_seed", o.perm_seed}, {"out", o.out}}));
  return 0;
}

// --- eval -----------------------------------------------------------------

struct EvalOpts {
  std::string queries, task = "generation", family = "qa", prompts, predictions, mock, out, group_by, alpha_grid;
  std::string positive = "great", negative = "terrible", options_field = "options";
  int max_tokens = 256;
  std::size_t inflight = client::kDefaultMaxInFlight;
  bool keep_commas = false;
};

int cmd_eval(const EvalOpts& o, const Globals& g) {
  const auto queries = store::load_pool(o.queries);
  harness::TaskSpec task;
  task.kind = harness::parse_task(o.task);
  task.prompt = eval::PromptTemplate::for_family(eval::parse_family(o.family));
  task.positive = o.positive;
  task.negative = o.negative;
  task.options_field = o.options_field;
  task.max_tokens = o.max_tokens;
  task.math.strip_commas = !o.keep_commas;
  task.group_by = o.group_by;
  task.validate();

  json opts = {{"queries", o.queries}, {"task", o.task}, {"family", o.family}, {"max_tokens", o.max_tokens},
               {"strip_commas", !o.keep_commas}};
  eval::EvalReport report;
  if (!o.predictions.empty()) {
    if (!o.prompts.empty() || !o.mock.empty()) throw ValidationError("--predictions excludes --prompts and --mock");
    std::istringstream in(read_text(o.predictions));
    report = harness::evaluate_predictions(task, queries, harness::read_predictions(in));
    opts["predictions"] = o.predictions;
  } else {
    if (o.prompts.empty()) throw ValidationError("either --predictions or --prompts is required");
    std::vector<harness::RenderedPrompt> prompts;
    for (const auto& line : read_lines(o.prompts)) prompts.push_back(harness::parse_rendered_line(line));
    std::unique_ptr<client::Provider> provider;
    if (!o.mock.empty()) {
      provider = std::make_unique<client::MockProvider>(client::MockProvider::load(o.mock));
      opts["provider"] = "mock";
      opts["mock"] = o.mock;
    } else {
      provider = client::HttpProvider::from_env();
      if (!provider) throw ValidationError("no provider: pass --mock or set MODEL_BASE_URL");
      opts["provider"] = "http";
    }
    opts["prompts"] = o.prompts;
    client::ModelClient model(*provider, o.inflight);
    report = harness::evaluate_with_model(task, queries, prompts, model, g.threads);
  }
  if (!o.group_by.empty()) opts["group_by"] = o.group_by;
  if (!o.alpha_grid.empty()) {
    report.delta = eval::compute_delta(eval::parse_alpha_grid(read_json(o.alpha_grid)));
    opts["alpha_grid"] = o.alpha_grid;
  }
  if (!o.out.empty()) opts["out"] = o.out;
  json doc;
  doc["run_config"] = run_config("eval", g, opts);
  const auto body = eval::to_json(report);
  for (auto it = body.begin(); it != body.end(); ++it) doc[it.key()] = it.value();
  if (!o.out.empty()) {
    write_file(o.out, doc.dump(2) + "\n");
  } else {
    std::cout << doc.dump(2) << '\n';
  }
  std::cerr << "accuracy " << fmt(report.accuracy, 4) << " (" << report.correct << "/" << report.n << ")\n";
  return 0;
}

// --- report ---------------------------------------------------------------

int cmd_report_delta(const std::string& grid, const Globals& g) {
  const auto acc = eval::parse_alpha_grid(read_json(grid));
  const double delta = eval::compute_delta(acc);
  json doc;
  doc["run_config"] = run_config("report delta", g, {{"grid", grid}});
  doc["delta"] = delta;
  std::cout << doc.dump(2) << '\n';
  std::cerr << "delta " << std::showpos << fmt(delta, 4) << '\n';
  return 0;
}

theory::MethodStats stats_from_json(const json& j) {
  theory::MethodStats s;
  s.mean_loss = j.at("mean_loss").get<double>();
  s.se_loss = j.at("se_loss").get<double>();
  s.mean_coverage = j.at("mean_coverage").get<double>();
  s.n = j.value("n", std::size_t{0});
  return s;
}

int cmd_report_sim(const std::string& in) {
  const auto j = read_json(in);
  theory::SimReport r;
  try {
    const auto& c = j.at("config");
    r.config.dist.kind = theory::parse_distribution(c.at("distribution").get<std::string>());
    r.config.dist.l = c.at("l").get<std::size_t>();
    r.config.dist.d = c.at("d").get<std::size_t>();
    r.config.k = c.at("k").get<std::size_t>();
    r.config.alpha = c.at("alpha").get<double>();
    r.config.train_scale = c.value("train_scale", std::size_t{1});
    r.config.trials = c.at("trials").get<std::size_t>();
    r.config.seeds = c.at("seeds").get<std::size_t>();
    for (auto it = j.at("methods").begin(); it != j.at("methods").end(); ++it)
      r.methods[theory::parse_sim_method(it.key())] = stats_from_json(it.value());
  } catch (const json::exception& e) {
    throw ValidationError(in + ": not a simulation report (" + e.what() + ")");
  }
  std::cout << theory::render_table(r);
  if (r.config.dist.kind == theory::Distribution::example2) std::cout << example2_check(r);
  return 0;
}

int cmd_report_eval(const std::string& in) {
  const auto j = read_json(in);
  try {
    std::cout << "accuracy " << fmt(j.at("accuracy").get<double>(), 4) << "  n=" << j.at("n").get<std::size_t>()
              << '\n';
    if (j.contains("subgroups"))
      for (auto it = j["subgroups"].begin(); it != j["subgroups"].end(); ++it)
        std::cout << "  " << std::left << std::setw(16) << it.key() << std::right
                  << fmt(it.value().at("accuracy").get<double>(), 4) << "  n=" << it.value().at("n").get<std::size_t>()
                  << '\n';
    if (j.contains("delta")) std::cout << "delta " << std::showpos << fmt(j["delta"].get<double>(), 4) << '\n';
  } catch (const json::exception &e) {
    throw ValidationError(in + ": not an evaluation report (" + e.what() + ")");
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Demonstration selection, simulation and evaluation toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Globals g;
  app.add_option("--seed", g.seed, "Master seed");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")->check(CLI::Range(1u, 1024u));

  IngestOpts ingest;
  auto* s_ingest = app.add_subcommand("ingest", "Validate a pool and write it as binary or JSONL");
  s_ingest->add_option("--in", ingest.in, "Input pool (JSONL or binary)")->required();
  s_ingest->add_option("--out", ingest.out, "Output path")->required();
  s_ingest->add_option("--format", ingest.format, "binary, jsonl or auto (by extension)")
      ->check(CLI::IsMember({"auto", "binary", "jsonl"}));

  SelectOpts sel;
  auto* s_select = app.add_subcommand("select", "Select K demonstrations per query");
  s_select->add_option("--demos", sel.demos, "Demonstration pool")->required();
  s_select->add_option("--queries", sel.queries, "Query pool")->required();
  s_select->add_option("--out", sel.out, "Selections JSONL")->required();
  s_select->add_option("--method", sel.method, "rand, topk, div, topk-div or kmeans");
  s_select->add_option("--k", sel.k, "Shots per query");
  s_select->add_option("--alpha", sel.alpha, "Similarity weight for topk-div");
  s_select->add_option("--coreset", sel.coreset, "Coreset size for div");
  s_select->add_option("--coreset-in", sel.coreset_in, "Reuse a coreset file written by an earlier div run");
  s_select->add_option("--coreset-out", sel.coreset_out, "Coreset output (default <out>.coreset.json)");
  s_select->add_option("--kmeans-iters", sel.kmeans_iters, "Maximum Lloyd iterations");

  SimulateOpts sim;
  auto* s_sim = app.add_subcommand("simulate", "Min-norm simulation over binary embeddings");
  s_sim->add_option("--dist", sim.dist, "example1, example2 or general");
  s_sim->add_option("--l", sim.l, "Support size parameter l")->required();
  s_sim->add_option("--d", sim.d, "Dimension (general only)");
  s_sim->add_option("--k", sim.k, "Shots K");
  s_sim->add_option("--alpha", sim.alpha, "Similarity weight for topk_div");
  s_sim->add_option("--train-scale", sim.train_scale, "|D| = d * train_scale (general only)");
  s_sim->add_option("--trials", sim.trials, "Test queries per seed, or Monte Carlo trials with --fixed");
  s_sim->add_option("--seeds", sim.seeds, "Independent repetitions");
  s_sim->add_option("--methods", sim.methods, "Comma-separated subset of topk,topk_div");
  s_sim->add_option("--out", sim.out, "Report JSON (default stdout)");
  s_sim->add_option("--table", sim.table, "Text table output");
  s_sim->add_option("--fixed", sim.fixed, "Monte Carlo on a fixed configuration: example1 or example2");
  s_sim->add_option("--a", sim.a, "Shared query coordinates (example1 fixed)");
  s_sim->add_option("--b", sim.b, "Shared outside coordinates (example1 fixed)");
  s_sim->add_option("--case", sim.case_name, "L1, L2 or L3 (example2 fixed)");

  RenderOpts ren;
  auto* s_render = app.add_subcommand("render", "Render few-shot prompts from selections");
  s_render->add_option("--demos", ren.demos, "Demonstration pool")->required();
  s_render->add_option("--queries", ren.queries, "Query pool")->required();
  s_render->add_option("--selections", ren.selections, "Selections JSONL")->required();
  s_render->add_option("--family", ren.family, "qa, reading or math")->check(CLI::IsMember({"qa", "reading", "math"}));
  s_render->add_option("--perm-seed", ren.perm_seed, "Demo permutation (0 keeps selection order)");
  s_render->add_option("--out", ren.out, "Prompts JSONL")->required();
  s_render->add_option("--raw-dir", ren.raw_dir, "Also write each prompt to <dir>/<query_id>.txt");

  EvalOpts ev;
  auto* s_eval = app.add_subcommand("eval", "Score predictions or run prompts through a provider");
  s_eval->add_option("--queries", ev.queries, "Query pool with gold answers")->required();
  s_eval->add_option("--task", ev.task, "generation, math, classification or multichoice")
      ->check(CLI::IsMember({"generation", "math", "classification", "multichoice"}));
  s_eval->add_option("--family", ev.family, "Prompt family (sets the stop strings)")
      ->check(CLI::IsMember({"qa", "reading", "math"}));
  s_eval->add_option("--prompts", ev.prompts, "Rendered prompts JSONL");
  s_eval->add_option("--predictions", ev.predictions, "Precomputed predictions JSONL");
  s_eval->add_option("--mock", ev.mock, "Mock provider fixture (otherwise MODEL_BASE_URL)");
  s_eval->add_option("--out", ev.out, "Report JSON (default stdout)");
  s_eval->add_option("--group-by", ev.group_by, "dataset or meta:<key>");
  s_eval->add_option("--alpha-grid", ev.alpha_grid, "Accuracy per alpha; adds delta to the report");
  s_eval->add_option("--positive", ev.positive, "Positive verbalizer");
  s_eval->add_option("--negative", ev.negative, "Negative verbalizer");
  s_eval->add_option("--options-field", ev.options_field, "Query field listing multichoice options");
  s_eval->add_option("--max-tokens", ev.max_tokens, "Generation budget");
  s_eval->add_option("--inflight", ev.inflight, "Maximum concurrent provider requests");
  s_eval->add_flag("--keep-commas", ev.keep_commas, "Do not strip commas from math answers");

  auto* s_report = app.add_subcommand("report", "Summaries of earlier outputs");
  s_report->require_subcommand(1);
  std::string grid, sim_in, eval_in;
  auto* r_delta = s_report->add_subcommand("delta", "High-alpha minus low-alpha mean accuracy");
  r_delta->add_option("--grid", grid, "JSON object {\"0.1\": acc, ..., \"1.0\": acc}")->required();
  auto* r_sim = s_report->add_subcommand("sim", "Table from a simulation report");
  r_sim->add_option("--in", sim_in, "Simulation report JSON")->required();
  auto* r_eval = s_report->add_subcommand("eval", "Summary of an evaluation report");
  r_eval->add_option("--in", eval_in, "Evaluation report JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*s_ingest) return cmd_ingest(ingest, g);
    if (*s_select) return cmd_select(sel, g);
    if (*s_sim) return cmd_simulate(sim, g);
    if (*s_render) return cmd_render(ren, g);
    if (*s_eval) return cmd_eval(ev, g);
    if (*r_delta) return cmd_report_delta(grid, g);
    if (*r_sim) return cmd_report_sim(sim_in);
    if (*r_eval) return cmd_report_eval(eval_in);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const client::ProviderError& e) {
    std::cerr << "provider error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
