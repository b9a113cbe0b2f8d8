#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "demosel/common.hpp"

namespace demosel::store {

enum class Role { demo, query };

inline std::string_view to_string(Role r) { return r == Role::demo ? "demo" : "query"; }

inline Role parse_role(std::string_view s) {
  if (s == "demo") return Role::demo;
  if (s == "query") return Role::query;
  throw ValidationError("unknown role '" + std::string(s) + "'");
}

/// One embedded demonstration or query. Embeddings are kept exactly as
/// ingested; similarity code normalizes on the fly.
struct ExampleRecord {
  std::string id;
  Role role = Role::demo;
  std::string dataset;
  std::map<std::string, std::string> fields;
  std::vector<float> embedding;
  std::map<std::string, std::string> meta;

  const std::string& question() const { return fields.at("question"); }

  std::optional<std::string> field(const std::string& name) const {
    if (auto it = fields.find(name); it != fields.end()) return it->second;
    return std::nullopt;
  }

  std::optional<std::string> tag(const std::string& key) const {
    if (auto it = meta.find(key); it != meta.end()) return it->second;
    return std::nullopt;
  }

  bool operator==(const ExampleRecord&) const = default;
};

inline double euclidean_norm(const std::vector<float>& v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}

/// Returns an empty string when the record is valid for a pool of dimension
/// `dim`, otherwise a description of the first violated invariant.
inline std::string record_problem(const ExampleRecord& r, std::size_t dim) {
  if (r.id.empty()) return "empty id";
  if (!r.fields.contains("question")) return "missing field 'question' in record '" + r.id + "'";
  if (r.role == Role::demo && !r.fields.contains("answer"))
    return "demo record '" + r.id + "' has no 'answer' field";
  if (r.embedding.size() != dim) return "dimension mismatch";
  for (float x : r.embedding)
    if (!std::isfinite(x)) return "non-finite embedding value in record '" + r.id + "'";
  if (!(euclidean_norm(r.embedding) > 0.0)) return "zero-norm embedding in record '" + r.id + "'";
  return {};
}

/// A validated, immutable collection of records sharing one embedding dimension.
class Pool {
public:
  Pool() = default;

  explicit Pool(std::vector<ExampleRecord> records) : records_(std::move(records)) {
    if (records_.empty()) throw ValidationError("pool is empty");
    dim_ = records_.front().embedding.size();
    if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
    for (std::size_t i = 0; i < records_.size(); ++i) {
      if (auto problem = record_problem(records_[i], dim_); !problem.empty())
        throw ValidationError(problem + " (record " + std::to_string(i + 1) + ")");
      if (!index_.emplace(records_[i].id, i).second)
        throw ValidationError("duplicate id '" + records_[i].id + "' (record " +
                              std::to_string(i + 1) + ")");
    }
  }

  std::size_t size() const noexcept { return records_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return records_.empty(); }
  const std::vector<ExampleRecord>& records() const noexcept { return records_; }
  const ExampleRecord& operator[](std::size_t i) const { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  std::optional<std::size_t> index_of(const std::string& id) const {
    if (auto it = index_.find(id); it != index_.end()) return it->second;
    return std::nullopt;
  }

  const ExampleRecord& at(const std::string& id) const {
    auto i = index_of(id);
    if (!i) throw ValidationError("unknown id '" + id + "'");
    return records_[*i];
  }

  bool operator==(const Pool& o) const { return dim_ == o.dim_ && records_ == o.records_; }

private:
  std::vector<ExampleRecord> records_;
  std::size_t dim_ = 0;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline std::map<std::string, std::string> string_map(const nlohmann::json& j, const char* what) {
  if (!j.is_object()) throw ValidationError(std::string("'") + what + "' must be an object");
  std::map<std::string, std::string> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_string())
      throw ValidationError(std::string("'") + what + "." + it.key() + "' must be a string");
    out.emplace(it.key(), it.value().get<std::string>());
  }
  return out;
}

/// Parses the non-embedding part of a record (shared by JSONL and the binary sidecar).
inline ExampleRecord record_header_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("record must be a JSON object");
  ExampleRecord r;
  if (!j.contains("id") || !j["id"].is_string()) throw ValidationError("missing string 'id'");
  r.id = j["id"].get<std::string>();
  if (!j.contains("role") || !j["role"].is_string()) throw ValidationError("missing string 'role'");
  r.role = parse_role(j["role"].get<std::string>());
  if (j.contains("dataset")) {
    if (!j["dataset"].is_string()) throw ValidationError("'dataset' must be a string");
    r.dataset = j["dataset"].get<std::string>();
  }
  if (!j.contains("fields")) throw ValidationError("missing 'fields'");
  r.fields = string_map(j["fields"], "fields");
  if (j.contains("meta") && !j["meta"].is_null()) r.meta = string_map(j["meta"], "meta");
  return r;
}

inline nlohmann::ordered_json record_header_to_json(const ExampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["role"] = std::string(to_string(r.role));
  j["dataset"] = r.dataset;
  j["fields"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.fields) j["fields"][k] = v;
  if (!r.meta.empty()) {
    j["meta"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.meta) j["meta"][k] = v;
  }
  return j;
}

inline std::vector<ExampleRecord> parse_records(std::istream& in, const std::string& source,
                                                std::vector<std::size_t>* line_numbers) {
  std::vector<ExampleRecord> records;
  std::string line;
  std::size_t line_no = 0;
  for (; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fail = [&](const std::string& what) -> ValidationError {
      return ValidationError(source + ": " + what + " at line " + std::to_string(line_no));
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw fail(std::string("malformed JSON (") + e.what() + ")");
    }
    ExampleRecord r;
    try {
      r = record_header_from_json(j);
      if (!j.contains("embedding") || !j["embedding"].is_array())
        throw ValidationError("missing 'embedding' array");
      for (const auto& x : j["embedding"]) {
        if (!x.is_number()) throw ValidationError("non-numeric embedding entry");
        r.embedding.push_back(static_cast<float>(x.get<double>()));
      }
    } catch (const ValidationError& e) {
      throw fail(e.what());
    }
    records.push_back(std::move(r));
    if (line_numbers) line_numbers->push_back(line_no);
  }
  return records;
}

} // namespace detail

/// Parses and validates a JSONL pool. The whole input is rejected on the first
/// invalid record; messages name the offending line.
inline Pool parse_pool_jsonl(std::istream& in, const std::string& source = "<input>") {
  std::vector<std::size_t> lines;
  auto records = detail::parse_records(in, source, &lines);
  if (records.empty()) throw ValidationError(source + ": pool is empty");
  const std::size_t dim = records.front().embedding.size();
  if (dim == 0) throw ValidationError(source + ": empty embedding at line " + std::to_string(lines[0]));
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto at_line = " at line " + std::to_string(lines[i]);
    if (auto problem = record_problem(records[i], dim); !problem.empty())
      throw ValidationError(source + ": " + problem + at_line);
    if (auto [it, fresh] = seen.emplace(records[i].id, lines[i]); !fresh)
      throw ValidationError(source + ": duplicate id '" + records[i].id + "'" + at_line +
                            " (first seen at line " + std::to_string(it->second) + ")");
  }
  return Pool(std::move(records));
}

inline Pool load_pool_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path.string() + ": not found");
  return parse_pool_jsonl(in, path.string());
}

inline nlohmann::ordered_json record_to_json(const ExampleRecord& r) {
  auto j = detail::record_header_to_json(r);
  auto emb = nlohmann::ordered_json::array();
  for (float x : r.embedding) emb.push_back(static_cast<double>(x));
  j["embedding"] = std::move(emb);
  return j;
}

inline void write_pool_jsonl(const Pool& pool, std::ostream& out) {
  for (const auto& r : pool) out << record_to_json(r).dump() << '\n';
}

inline void save_pool_jsonl(const Pool& pool, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path.string() + ": cannot open for writing");
  write_pool_jsonl(pool, out);
}

// Binary layout, all integers little-endian:
//   "ESEL" | u32 version | u32 n | u32 d | n*d binary32 row-major
//   | u64 sidecar length | sidecar (JSONL of the non-embedding fields)
inline constexpr std::array<char, 4> kBinaryMagic{'E', 'S', 'E', 'L'};
inline constexpr std::uint32_t kBinaryVersion = 1;

namespace detail {

template <typename UInt>
void put_le(std::string& buf, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename UInt>
UInt get_le(std::string_view buf, std::size_t& pos) {
  if (buf.size() - pos < sizeof(UInt)) throw ValidationError("truncated payload");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    v |= static_cast<UInt>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += sizeof(UInt);
  return v;
}

} // namespace detail

inline std::string encode_pool_binary(const Pool& pool) {
  std::string buf(kBinaryMagic.begin(), kBinaryMagic.end());
  detail::put_le<std::uint32_t>(buf, kBinaryVersion);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(pool.size()));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(pool.dim()));
  buf.reserve(buf.size() + pool.size() * pool.dim() * 4);
  for (const auto& r : pool)
    for (float x : r.embedding) detail::put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(x));
  std::string sidecar;
  for (const auto& r : pool) sidecar += detail::record_header_to_json(r).dump() + "\n";
  detail::put_le<std::uint64_t>(buf, sidecar.size());
  buf += sidecar;
  return buf;
}

inline Pool decode_pool_binary(std::string_view buf) {
  if (buf.size() < 4 || !std::equal(kBinaryMagic.begin(), kBinaryMagic.end(), buf.begin()))
    throw ValidationError("not an ESEL file");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(buf, pos);
  if (version != kBinaryVersion)
    throw ValidationError("unsupported ESEL version " + std::to_string(version));
  const auto n = detail::get_le<std::uint32_t>(buf, pos);
  const auto d = detail::get_le<std::uint32_t>(buf, pos);
  const std::uint64_t matrix_bytes = std::uint64_t{n} * d * 4;
  if (buf.size() - pos < matrix_bytes) throw ValidationError("truncated payload");
  std::vector<std::vector<float>> rows(n, std::vector<float>(d));
  for (auto& row : rows)
    for (auto& x : row) x = std::bit_cast<float>(detail::get_le<std::uint32_t>(buf, pos));
  const auto sidecar_len = detail::get_le<std::uint64_t>(buf, pos);
  if (buf.size() - pos < sidecar_len) throw ValidationError("truncated payload");
  std::string sidecar(buf.substr(pos, sidecar_len));
  std::istringstream in(sidecar);
  std::vector<ExampleRecord> records;
  records.reserve(n);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (records.size() == n) throw ValidationError("sidecar holds more records than the header declares");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw ValidationError("corrupt sidecar record " + std::to_string(records.size() + 1));
    }
    auto r = detail::record_header_from_json(j);
    r.embedding = std::move(rows[records.size()]);
    records.push_back(std::move(r));
  }
  if (records.size() != n) throw ValidationError("truncated payload");
  return Pool(std::move(records));
}

inline void save_pool_binary(const Pool& pool, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(path.string() + ": cannot open for writing");
  const auto buf = encode_pool_binary(pool);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": not found");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Pool load_pool_binary(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  try {
    return decode_pool_binary(buf);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

/// Loads either format, sniffing the magic bytes.
inline Pool load_pool(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": not found");
  std::array<char, 4> head{};
  in.read(head.data(), 4);
  if (in.gcount() == 4 && head == kBinaryMagic) return load_pool_binary(path);
  return load_pool_jsonl(path);
}

// Keyword-occurrence embeddings. Tokenization is whitespace splitting,
// case-sensitive, with no punctuation stripping.

inline std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string tok; in >> tok;) out.push_back(std::move(tok));
  return out;
}

/// Sorted, deduplicated whitespace tokens over all answers.
inline std::vector<std::string> build_vocabulary(const std::vector<std::string>& answers) {
  if (answers.empty()) throw ValidationError("build_vocabulary needs at least one answer");
  std::set<std::string> vocab;
  for (const auto& a : answers)
    for (auto& t : whitespace_tokens(a)) vocab.insert(std::move(t));
  return {vocab.begin(), vocab.end()};
}

/// Entry v is 1 iff vocabulary[v] occurs as a whitespace token of the answer.
/// An answer with no vocabulary tokens yields the all-zero vector, which is not
/// usable as a cosine embedding.
inline std::vector<std::uint8_t> keyword_occurrence_embedding(std::string_view answer,
                                                              const std::vector<std::string>& vocabulary) {
  if (vocabulary.empty()) throw ValidationError("vocabulary is empty");
  std::unordered_map<std::string_view, std::size_t> pos;
  for (std::size_t i = 0; i < vocabulary.size(); ++i)
    if (!pos.emplace(vocabulary[i], i).second)
      throw ValidationError("vocabulary token '" + vocabulary[i] + "' is not unique");
  std::vector<std::uint8_t> out(vocabulary.size(), 0);
  for (const auto& tok : whitespace_tokens(answer))
    if (auto it = pos.find(tok); it != pos.end()) out[it->second] = 1;
  return out;
}

} // namespace demosel::store
