// Acceptance checks. Prints one PASS/FAIL line per criterion; with an argument
// N only criterion N runs. Exit status is nonzero when any check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "demosel/embedding_store.hpp"
#include "demosel/prompt_eval.hpp"
#include "demosel/selection.hpp"
#include "demosel/theory/closed_form.hpp"
#include "demosel/theory/simulation.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;
using namespace demosel;
using namespace demosel::theory;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

unsigned worker_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

const fs::path kData = DEMOSEL_TEST_DATA;

// --- closed form ----------------------------------------------------------

void c1(Outcome& o) {
  int checked = 0;
  for (std::int64_t l = 4; l <= 400; l += 2) {
    if (!(closed_form_L_ab_exact(l, 0, 0) == Rational(__int128{l}, __int128{24}))) {
      o.check(false, "L00 != l/24 at l=" + std::to_string(l));
      return;
    }
    ++checked;
  }
  o.detail << checked << " even l in [4, 400] exact";
}

void c2(Outcome& o) {
  const std::int64_t l = 200;
  for (auto [a, b] : {std::pair<std::int64_t, std::int64_t>{0, 0}, {50, 50}}) {
    const auto mc = run_fixed_config_mc(example1_config(l, a, b), 50000, 2024, worker_threads());
    const double closed = closed_form_L_ab(l, a, b);
    const double exact = example1_conditional_loss(l, a, b).to_double();
    const double z = (mc.mean - closed) / mc.std_error;
    o.detail << " (" << a << "," << b << "): mc " << fmt(mc.mean) << " se " << fmt(mc.std_error) << " closed "
             << fmt(closed) << " z " << fmt(z, 2) << " exact " << fmt(exact) << " z "
             << fmt((mc.mean - exact) / mc.std_error, 2) << ";";
    o.check(std::abs(z) <= 3.0, "closed form outside 3 SE at (" + std::to_string(a) + "," + std::to_string(b) + ")");
  }
}

void c3(Outcome& o) {
  const std::int64_t l = 200;
  const auto bound = closed_form_L_ab_exact(l, 0, 0) * Rational(4);
  int checked = 0, violations = 0;
  std::string first;
  for (std::int64_t a = 0; a <= l / 4; ++a)
    for (std::int64_t b = l / 4; b <= l / 2; ++b) {
      if (a + b > l - 1) continue;
      ++checked;
      if (!(closed_form_L_ab_exact(l, a, b) > bound)) {
        if (violations++ == 0) first = "(" + std::to_string(a) + "," + std::to_string(b) + ")";
      }
    }
  o.detail << checked << " pairs, " << violations << " violations";
  o.check(violations == 0, "bound fails first at " + first);
}

// --- simulation -----------------------------------------------------------

void c4(Outcome& o) {
  SimConfig cfg;
  cfg.dist = {Distribution::example2, 3, 0};
  cfg.k = 2;
  cfg.alpha = 0.9;
  cfg.trials = 100000;
  cfg.master_seed = 7;
  const auto r = run_simulation(cfg, worker_threads());
  const auto& div = r.methods.at(SimMethod::topk_div);
  const auto& top = r.methods.at(SimMethod::topk);
  const double z = (div.mean_loss - 1.0 / 12.0) / div.se_loss;
  o.detail << "topk_div " << fmt(div.mean_loss, 5) << " (se " << fmt(div.se_loss, 5) << ", z " << fmt(z, 2)
           << ") topk " << fmt(top.mean_loss, 5) << " (se " << fmt(top.se_loss, 5) << ")";
  o.check(std::abs(z) <= 3.0, "topk_div not within 3 SE of 1/12");
  o.check(div.mean_loss < top.mean_loss, "topk_div not below topk");
}

void c5(Outcome& o) {
  bool matches_small = true, rules_out_large = true;
  for (std::int64_t l : {3, 5}) {
    const auto mc = run_fixed_config_mc(example2_config(l, Example2Case::L2), 100000, 99, worker_threads());
    const double small = closed_form_example2(l, Example2Case::L2);
    const double large = example2_L2_alternative(l);
    const double z_small = (mc.mean - small) / mc.std_error, z_large = (mc.mean - large) / mc.std_error;
    o.detail << " l=" << l << ": mc " << fmt(mc.mean, 5) << " se " << fmt(mc.std_error, 5) << " | (2l-1)^2 "
             << fmt(small, 5) << " z " << fmt(z_small, 2) << " | (12l-1)^2 " << fmt(large, 5) << " z "
             << fmt(z_large, 1) << ";";
    matches_small &= std::abs(z_small) <= 3.0;
    rules_out_large &= std::abs(z_large) > 10.0 && std::abs(z_large - z_small) > 10.0;
  }
  o.detail << " matching denominator: " << (matches_small && rules_out_large ? "(2l-1)^2" : "undetermined");
  o.check(matches_small, "(2l-1)^2 formula outside 3 SE");
  o.check(rules_out_large, "separation below 10 SE");
}

void c6(Outcome& o) {
  auto run = [](std::size_t l) {
    SimConfig cfg;
    cfg.dist = {Distribution::general, l, 200};
    cfg.k = 4;
    cfg.alpha = 0.5;
    cfg.train_scale = 5;
    cfg.trials = 100;
    cfg.seeds = 3;
    cfg.master_seed = 0;
    return run_simulation(cfg, worker_threads());
  };
  for (std::size_t l : {3u, 4u}) {
    const auto r = run(l);
    const double ct = r.methods.at(SimMethod::topk).mean_coverage;
    const double cd = r.methods.at(SimMethod::topk_div).mean_coverage;
    o.detail << " l=" << l << ": coverage topk " << fmt(ct, 3) << " topk_div " << fmt(cd, 3) << ";";
    o.check(fmt(ct, 2) == "1.00" && fmt(cd, 2) == "1.00", "coverage not 1.00 at l=" + std::to_string(l));
  }
  const auto r = run(8);
  const auto& t = r.methods.at(SimMethod::topk);
  const auto& d = r.methods.at(SimMethod::topk_div);
  o.detail << " l=8: coverage topk " << fmt(t.mean_coverage, 3) << " topk_div " << fmt(d.mean_coverage, 3)
           << ", loss topk " << fmt(t.mean_loss, 3) << " topk_div " << fmt(d.mean_loss, 3)
           << " (reference coverage 0.61/0.75, loss 9.55/5.47)";
  o.check(d.mean_coverage - t.mean_coverage >= 0.05, "coverage gap below 0.05");
  o.check(t.mean_loss > d.mean_loss, "loss ordering");
  o.check(std::abs(t.mean_coverage - 0.61) <= 0.15 * 0.61, "topk coverage outside 15% of 0.61");
  o.check(std::abs(d.mean_coverage - 0.75) <= 0.15 * 0.75, "topk_div coverage outside 15% of 0.75");
}

// --- selection ------------------------------------------------------------

void c7(Outcome& o) {
  std::mt19937_64 rng(77);
  int failures = 0;
  auto expect = [&](bool ok, const std::string& what, int pool) {
    if (!ok && failures++ < 3) o.detail << " pool " << pool << ": " << what << ";";
  };
  for (int p = 0; p < 200; ++p) {
    const std::size_t n = 2 + rng() % 11, d = 1 + rng() % 6;
    const bool integer = p % 2 == 0;
    std::vector<std::vector<float>> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back(oracle::random_vector(rng, d, integer));
    const auto pool = oracle::make_pool(rows);
    auto query = oracle::make_record("q", oracle::random_vector(rng, d, integer), store::Role::query);
    const std::size_t k = 1 + rng() % n;
    const double alpha = static_cast<double>(rng() % 11) / 10.0;

    selection::SelectionConfig cfg;
    cfg.k = k;
    cfg.alpha = 1.0;
    const auto topk = selection::select_topk(pool, query, cfg).indices;
    expect(selection::select_topk_div(pool, query, cfg).indices == topk, "topk_div(alpha=1) != topk", p);
    expect(selection::select_div(pool, query, cfg, selection::build_div_coreset_from(pool, n, rng() % n)).indices ==
               topk,
           "div(m=n) != topk", p);

    cfg.alpha = alpha;
    const auto greedy = selection::select_topk_div(pool, query, cfg).indices;
    expect(topk == oracle::topk(pool, query.embedding, k), "topk step != brute-force argmax", p);
    expect(greedy == oracle::topk_div(pool, query.embedding, k, alpha), "topk_div step != brute-force argmax", p);
    const std::size_t m = 1 + rng() % n, first = rng() % n;
    expect(selection::build_div_coreset_from(pool, m, first) == oracle::div_coreset(pool, m, first),
           "coreset step != brute-force argmax", p);

    // exact float scaling: integer factors on integer pools, powers of two otherwise
    auto scaled_rows = rows;
    for (auto& r : scaled_rows) {
      const float c = integer ? static_cast<float>(1 + rng() % 8) : std::ldexp(1.0f, static_cast<int>(rng() % 7) - 3);
      for (auto& x : r) x *= c;
    }
    const auto scaled = oracle::make_pool(scaled_rows);
    auto scaled_query = query;
    for (auto& x : scaled_query.embedding) x *= 2.0f;
    expect(selection::select_topk(scaled, scaled_query, cfg).demo_ids ==
               selection::select_topk(pool, query, cfg).demo_ids,
           "topk changed under scaling", p);
    expect(selection::select_topk_div(scaled, scaled_query, cfg).demo_ids ==
               selection::select_topk_div(pool, query, cfg).demo_ids,
           "topk_div changed under scaling", p);
    expect(selection::build_div_coreset_from(scaled, m, first) == selection::build_div_coreset_from(pool, m, first),
           "coreset changed under scaling", p);
  }
  o.detail << " 200 pools, " << failures << " failures";
  o.check(failures == 0, "property violations");
}

// --- prompts --------------------------------------------------------------

void c8(Outcome& o) {
  const auto demos = store::load_pool(kData / "fixtures/golden_demos.jsonl");
  const auto queries = store::load_pool(kData / "fixtures/golden_queries.jsonl");
  int matched = 0;
  for (auto family : {eval::Family::qa, eval::Family::reading, eval::Family::math})
    for (std::size_t k : {1u, 2u}) {
      std::vector<const store::ExampleRecord*> chosen;
      for (std::size_t i = 0; i < k; ++i) chosen.push_back(&demos[i]);
      const auto text = eval::render_prompt(eval::PromptTemplate::for_family(family), chosen, queries[0]);
      const auto name = std::string(eval::to_string(family)) + "_k" + std::to_string(k) + ".txt";
      const bool same = text == slurp(kData / "golden" / name);
      matched += same;
      o.check(same, name + " differs");
    }
  o.detail << matched << "/6 golden prompts byte-identical";
}

void c9(Outcome& o) {
  auto grid = [](const std::vector<double>& lo, const std::vector<double>& hi) {
    eval::AlphaGrid g;
    for (int i = 0; i < 5; ++i) {
      g[i + 1] = lo[static_cast<std::size_t>(i)];
      g[i + 6] = hi[static_cast<std::size_t>(i)];
    }
    return g;
  };
  std::mt19937_64 rng(9);
  int bad_zero = 0, bad_anti = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const double v = unit_uniform(rng);
    if (eval::compute_delta(grid({v, v, v, v, v}, {v, v, v, v, v})) != 0.0) ++bad_zero;
    std::vector<double> lo(5), hi(5);
    for (auto& x : lo) x = unit_uniform(rng);
    for (auto& x : hi) x = unit_uniform(rng);
    if (std::abs(eval::compute_delta(grid(lo, hi)) + eval::compute_delta(grid(hi, lo))) > 1e-15) ++bad_anti;
  }
  const double worked = eval::compute_delta(grid({.60, .61, .62, .63, .64}, {.70, .71, .72, .73, .74}));
  o.detail << "zero " << 1000 - bad_zero << "/1000, antisymmetric " << 1000 - bad_anti << "/1000, worked example "
           << fmt(worked, 6);
  o.check(bad_zero == 0, "nonzero delta under equal accuracies");
  o.check(bad_anti == 0, "antisymmetry");
  o.check(std::abs(worked - 0.10) <= 1e-12, "worked example != 0.10");
}

// --- CLI roundtrip ----------------------------------------------------------

int run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + std::string(DEMOSEL_CLI) + "' " + args + " 2>>cli.log";
  return std::system(cmd.c_str());
}

std::vector<std::string> pipeline(const fs::path& dir, unsigned threads) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  for (const char* f : {"demos.jsonl", "queries.jsonl", "mock.jsonl"})
    fs::copy_file(kData / "fixtures/e2e" / f, dir / f);
  const std::string t = "--threads " + std::to_string(threads) + " ";
  std::vector<std::string> failed;
  const std::vector<std::string> steps{
      t + "ingest --in demos.jsonl --out demos.bin",
      t + "select --demos demos.bin --queries queries.jsonl --method topk-div --alpha 0.5 --k 4 --out sel.jsonl",
      t + "render --demos demos.bin --queries queries.jsonl --selections sel.jsonl --family qa --out prompts.jsonl",
      t + "eval --queries queries.jsonl --task generation --family qa --prompts prompts.jsonl --mock mock.jsonl "
          "--out report.json"};
  for (const auto& s : steps)
    if (run(dir, s) != 0) failed.push_back(s.substr(t.size(), s.find(' ', t.size()) - t.size()));
  return failed;
}

void c10(Outcome& o) {
  const auto root = fs::temp_directory_path() / ("demosel_acceptance_" + std::to_string(::getpid()));
  const auto one = root / "threads1", four = root / "threads4";
  for (const auto& f : pipeline(one, 1)) o.check(false, f + " failed (threads 1)");
  for (const auto& f : pipeline(four, 4)) o.check(false, f + " failed (threads 4)");
  if (!o.pass) {
    o.detail << slurp(one / "cli.log");
    return;
  }
  const auto expected = nlohmann::json::parse(slurp(kData / "fixtures/e2e/expected.json"));
  const auto report = nlohmann::json::parse(slurp(one / "report.json"));
  o.detail << "accuracy " << report["accuracy"] << " (" << report["correct"] << "/" << report["n"] << ")";
  o.check(report["accuracy"] == expected["accuracy"] && report["n"] == expected["n"], "accuracy");
  for (const auto& e : report["per_example"])
    o.check(expected["per_example"][e["query_id"].get<std::string>()] == e["correct"],
            "correctness of " + e["query_id"].get<std::string>());
  std::istringstream sel(slurp(one / "sel.jsonl"));
  for (std::string line; std::getline(sel, line);) {
    const auto j = nlohmann::json::parse(line);
    o.check(expected["selections"][j["query_id"].get<std::string>()] == j["demo_ids"],
            "selection for " + j["query_id"].get<std::string>());
  }
  int files = 0;
  for (const auto& entry : fs::directory_iterator(one)) {
    const auto name = entry.path().filename();
    if (name == "cli.log") continue;
    ++files;
    o.check(slurp(entry.path()) == slurp(four / name), name.string() + " differs between --threads 1 and 4");
  }
  o.detail << ", " << files << " files byte-identical across --threads 1/4";
  fs::remove_all(root);
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<void(Outcome&)> body;
};

} // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "closed form L00 = l/24", 1, c1},
      {2, "Monte Carlo vs closed form (l=200)", 60, c2},
      {3, "quarter-split bound L_ab > 4 L00", 1, c3},
      {4, "diverse selection reaches 1/12 (l=3)", 120, c4},
      {5, "L2 denominator resolution", 120, c5},
      {6, "coverage and loss trend (d=200, K=4)", 600, c6},
      {7, "selection invariant suite", 30, c7},
      {8, "prompt goldens", 1, c8},
      {9, "delta properties", 1, c9},
      {10, "CLI roundtrip", 10, c10},
  };
  const int only = argc > 1 ? std::atoi(argv[1]) : 0;
  bool all_pass = true;
  for (const auto& c : all) {
    if (only && c.id != only) continue;
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.body(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    o.check(secs <= c.budget_seconds, "over time budget of " + fmt(c.budget_seconds, 0) + " s");
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << "  " << c.name << ": "
              << o.detail.str() << " (" << fmt(secs, 2) << " s)" << std::endl;
    all_pass &= o.pass;
  }
  return all_pass ? 0 : 1;
}
