#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
// resolv.h (pulled in by httplib) defines _res, which clashes with Eigen parameter names.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include "demosel/common.hpp"
#include "demosel/prompt_eval.hpp"

namespace demosel::client {

struct CompletionRequest {
  std::string prompt;
  int max_tokens = 256;
  std::vector<std::string> stop;
  double temperature = 0.0; // 0 = greedy

  void validate() const {
    if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw ValidationError("temperature must be >= 0");
  }
};

struct ScoreRequest {
  std::string prompt;
  std::string completion;

  void validate() const {
    if (completion.empty()) throw ValidationError("score request needs a non-empty completion");
  }
};

/// Provider-side failure: unreachable endpoint, non-200 status or a response
/// that does not follow the wire protocol.
class ProviderError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Completion and scoring backend. Implementations must accept concurrent calls.
class Provider {
public:
  virtual ~Provider() = default;
  virtual std::string complete(const CompletionRequest& req) = 0;
  /// Mean log-probability of req.completion given req.prompt.
  virtual double score(const ScoreRequest& req) = 0;
};

/// Answers from a fixture file and nothing else. Lines are
///   {"kind": "complete", "prompt": s, "text": s}
///   {"kind": "score", "prompt": s, "completion": s, "avg_logprob": n}
class MockProvider final : public Provider {
public:
  static MockProvider parse(std::istream& in, const std::string& source = "<fixture>") {
    MockProvider p;
    std::string line;
    for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      auto fail = [&](const std::string& what) {
        return ValidationError(source + ": " + what + " at line " + std::to_string(line_no));
      };
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        throw fail("malformed JSON");
      }
      auto str = [&](const char* key) {
        if (!j.contains(key) || !j[key].is_string()) throw fail(std::string("missing string '") + key + "'");
        return j[key].get<std::string>();
      };
      const auto kind = str("kind");
      if (kind == "complete") {
        if (!p.completions_.emplace(str("prompt"), str("text")).second) throw fail("duplicate completion prompt");
      } else if (kind == "score") {
        if (!j.contains("avg_logprob") || !j["avg_logprob"].is_number()) throw fail("missing number 'avg_logprob'");
        const double v = j["avg_logprob"].get<double>();
        if (!std::isfinite(v)) throw fail("non-finite avg_logprob");
        if (!p.scores_.emplace(std::make_pair(str("prompt"), str("completion")), v).second)
          throw fail("duplicate score key");
      } else {
        throw fail("unknown kind '" + kind + "'");
      }
    }
    return p;
  }

  static MockProvider load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(path.string() + ": not found");
    return parse(in, path.string());
  }

  std::string complete(const CompletionRequest& req) override {
    req.validate();
    auto it = completions_.find(req.prompt);
    if (it == completions_.end()) throw ProviderError("no fixture for prompt");
    return it->second;
  }

  double score(const ScoreRequest& req) override {
    req.validate();
    auto it = scores_.find({req.prompt, req.completion});
    if (it == scores_.end()) throw ProviderError("no fixture for prompt/completion pair");
    return it->second;
  }

  std::size_t completion_count() const { return completions_.size(); }
  std::size_t score_count() const { return scores_.size(); }

private:
  std::map<std::string, std::string> completions_;
  std::map<std::pair<std::string, std::string>, double> scores_;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200}; // doubled after every failed attempt
};

using Logger = std::function<void(const std::string&)>;

inline Logger stderr_logger() {
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

/// Client for the HTTP wire protocol:
///   POST {base}/v1/complete {"prompt", "max_tokens", "stop", "temperature"} -> {"text"}
///   POST {base}/v1/score    {"prompt", "completion"}                         -> {"avg_logprob"}
/// Transport errors and 5xx responses are retried with exponential backoff;
/// other failures are reported immediately. Plain http only.
class HttpProvider final : public Provider {
public:
  HttpProvider(std::string base_url, std::string token = {}, RetryPolicy retry = {}, Logger log = stderr_logger())
      : token_(std::move(token)), retry_(retry), log_(std::move(log)) {
    if (retry_.max_attempts < 1) throw ValidationError("max_attempts must be at least 1");
    const auto scheme = base_url.find("://");
    if (scheme == std::string::npos || base_url.substr(0, scheme) != "http")
      throw ValidationError("model base URL must start with http:// (got '" + base_url + "')");
    const auto path = base_url.find('/', scheme + 3);
    host_ = base_url.substr(0, path);
    prefix_ = path == std::string::npos ? std::string{} : base_url.substr(path);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }

  /// Reads MODEL_BASE_URL and MODEL_TOKEN; nullptr when no base URL is set.
  static std::unique_ptr<HttpProvider> from_env(RetryPolicy retry = {}, Logger log = stderr_logger()) {
    const char* base = std::getenv("MODEL_BASE_URL");
    if (!base || !*base) return nullptr;
    const char* token = std::getenv("MODEL_TOKEN");
    return std::make_unique<HttpProvider>(base, token ? token : "", retry, std::move(log));
  }

  std::string complete(const CompletionRequest& req) override {
    req.validate();
    const nlohmann::json body = {
        {"prompt", req.prompt}, {"max_tokens", req.max_tokens}, {"stop", req.stop}, {"temperature", req.temperature}};
    const auto res = post("/v1/complete", body);
    if (!res.contains("text") || !res["text"].is_string())
      throw ProviderError("complete: response has no string 'text'");
    return res["text"].get<std::string>();
  }

  double score(const ScoreRequest& req) override {
    req.validate();
    const nlohmann::json body = {{"prompt", req.prompt}, {"completion", req.completion}};
    const auto res = post("/v1/score", body);
    if (!res.contains("avg_logprob") || !res["avg_logprob"].is_number())
      throw ProviderError("score: response has no number 'avg_logprob'");
    const double v = res["avg_logprob"].get<double>();
    if (!std::isfinite(v)) throw ProviderError("score: non-finite avg_logprob");
    return v;
  }

  /// Retries performed so far across all calls.
  std::size_t retries() const { return retries_.load(); }

private:
  nlohmann::json post(const std::string& endpoint, const nlohmann::json& body) {
    const std::string path = prefix_ + endpoint;
    const std::string payload = body.dump();
    auto backoff = retry_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
      if (attempt > 1) {
        ++retries_;
        log_("retry " + std::to_string(attempt - 1) + "/" + std::to_string(retry_.max_attempts - 1) + " for " +
             path + " after: " + last_error);
        std::this_thread::sleep_for(backoff);
        backoff *= 2;
      }
      httplib::Client cli(host_);
      cli.set_connection_timeout(std::chrono::seconds(10));
      cli.set_read_timeout(std::chrono::seconds(300));
      httplib::Headers headers;
      if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);
      const auto res = cli.Post(path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status == 200) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error&) {
          throw ProviderError(path + ": response is not JSON");
        }
      }
      last_error = "HTTP " + std::to_string(res->status) + error_detail(res->body);
      if (res->status < 500) break;
    }
    throw ProviderError(path + ": " + last_error);
  }

  static std::string error_detail(const std::string& body) {
    try {
      const auto j = nlohmann::json::parse(body);
      if (j.contains("error") && j["error"].is_string()) return ": " + j["error"].get<std::string>();
    } catch (const nlohmann::json::parse_error&) {
    }
    return {};
  }

  std::string host_;
  std::string prefix_;
  std::string token_;
  RetryPolicy retry_;
  Logger log_;
  std::atomic<std::size_t> retries_{0};
};

inline constexpr std::size_t kDefaultMaxInFlight = 8;

/// Front end used by the harness: caps concurrent provider calls and applies
/// the stop strings to every completion regardless of what the provider did.
class ModelClient {
public:
  explicit ModelClient(Provider& provider, std::size_t max_in_flight = kDefaultMaxInFlight)
      : provider_(provider), slots_(static_cast<std::ptrdiff_t>(check_limit(max_in_flight))) {}

  std::string complete(const CompletionRequest& req) {
    Slot s(slots_);
    return eval::truncate_at_stop(provider_.complete(req), req.stop);
  }

  double score(const ScoreRequest& req) {
    Slot s(slots_);
    return provider_.score(req);
  }

private:
  using Semaphore = std::counting_semaphore<1 << 20>;

  struct Slot {
    explicit Slot(Semaphore& s) : sem(s) { sem.acquire(); }
    ~Slot() { sem.release(); }
    Semaphore& sem;
  };

  static std::size_t check_limit(std::size_t n) {
    if (n == 0 || n > (1u << 20)) throw ValidationError("in-flight limit must lie in [1, 1048576]");
    return n;
  }

  Provider& provider_;
  Semaphore slots_;
};

} // namespace demosel::client
