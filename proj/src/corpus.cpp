#include "latentdemo/corpus.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "latentdemo/common.hpp"

namespace latentdemo {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(SourceFormat format) {
  switch (format) {
    case SourceFormat::mbpp: return "mbpp";
    case SourceFormat::humaneval: return "humaneval";
    case SourceFormat::native: return "native";
    case SourceFormat::synthetic: return "synthetic";
  }
  return "native";
}

SourceFormat parse_source_format(std::string_view name) {
  if (name == "mbpp") return SourceFormat::mbpp;
  if (name == "humaneval") return SourceFormat::humaneval;
  if (name == "native") return SourceFormat::native;
  if (name == "synthetic") return SourceFormat::synthetic;
  throw ConfigError("unknown dataset format '" + std::string(name) + "'");
}

const DemonstrationPair* DatasetManifest::find(std::string_view task_id) const {
  for (const auto& r : records) {
    if (r.task_id == task_id) return &r;
  }
  return nullptr;
}

namespace {

void hash_record(Hasher& h, const DemonstrationPair& p) {
  h.field(p.task_id).field(p.prompt_text).field(p.golden_code).field(p.language_tag);
  h.field(static_cast<std::uint64_t>(p.tests.size()));
  for (const auto& t : p.tests) h.field(t);
}

// Upstream ids are strings in some releases and integers in others.
std::string id_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  return {};
}

std::string string_field(const json& obj, const char* key, std::string& missing) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    missing = key;
    return {};
  }
  return it->get<std::string>();
}

std::vector<std::string> string_list_field(const json& obj, const char* key, std::string& missing) {
  auto it = obj.find(key);
  std::vector<std::string> out;
  if (it == obj.end() || !it->is_array()) {
    missing = key;
    return out;
  }
  for (const auto& v : *it) {
    if (!v.is_string()) {
      missing = key;
      return {};
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

// Returns an error message, or empty on success.
std::string map_record(const json& obj, SourceFormat format, DemonstrationPair& out) {
  std::string missing;
  switch (format) {
    case SourceFormat::mbpp: {
      out.task_id = obj.contains("task_id") ? id_to_string(obj["task_id"]) : std::string{};
      if (out.task_id.empty()) missing = "task_id";
      out.prompt_text = string_field(obj, "text", missing);
      out.golden_code = string_field(obj, "code", missing);
      out.tests = string_list_field(obj, "test_list", missing);
      if (missing.empty()) {
        auto setup = obj.find("test_setup_code");
        if (setup != obj.end() && setup->is_string() && !setup->get<std::string>().empty()) {
          out.tests.insert(out.tests.begin(), setup->get<std::string>());
        }
      }
      out.language_tag = obj.value("language", std::string("python"));
      break;
    }
    case SourceFormat::humaneval: {
      out.task_id = obj.contains("task_id") ? id_to_string(obj["task_id"]) : std::string{};
      if (out.task_id.empty()) missing = "task_id";
      out.prompt_text = string_field(obj, "prompt", missing);
      const std::string body = string_field(obj, "canonical_solution", missing);
      const std::string test = string_field(obj, "test", missing);
      const std::string entry = string_field(obj, "entry_point", missing);
      // The canonical solution is a function body; the signature lives in the prompt.
      out.golden_code = out.prompt_text + body;
      if (missing.empty()) out.tests = {test + "\ncheck(" + entry + ")\n"};
      out.language_tag = obj.value("language", std::string("python"));
      break;
    }
    case SourceFormat::native:
    case SourceFormat::synthetic: {
      out.task_id = string_field(obj, "task_id", missing);
      out.prompt_text = string_field(obj, "prompt", missing);
      out.golden_code = string_field(obj, "solution", missing);
      out.tests = string_list_field(obj, "tests", missing);
      out.language_tag = string_field(obj, "language", missing);
      break;
    }
  }
  if (!missing.empty()) return "missing or invalid field '" + missing + "'";
  if (out.prompt_text.empty()) return "empty prompt";
  if (out.golden_code.empty()) return "empty solution";
  if (out.tests.empty()) return "empty test list";
  return {};
}

}  // namespace

std::string content_hash(const DemonstrationPair& pair) {
  Hasher h;
  hash_record(h, pair);
  return h.hex();
}

std::string manifest_hash(const std::vector<DemonstrationPair>& records) {
  Hasher h;
  h.field(static_cast<std::uint64_t>(records.size()));
  for (const auto& r : records) hash_record(h, r);
  return h.hex();
}

DatasetManifest parse_dataset(std::string_view text, SourceFormat format, std::string name) {
  DatasetManifest m;
  m.name = std::move(name);
  m.source_format = format;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(m.name + ": line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    }
    if (!obj.is_object()) {
      throw ParseError(m.name + ": line " + std::to_string(line_no) + ": expected a JSON object");
    }

    DemonstrationPair rec;
    std::string err = map_record(obj, format, rec);
    if (err.empty() && !seen.insert(rec.task_id).second) err = "duplicate task_id";
    if (!err.empty()) {
      spdlog::warn("{}: line {}: skipping record '{}': {}", m.name, line_no, rec.task_id, err);
      m.issues.push_back({line_no, rec.task_id, err});
      continue;
    }
    m.records.push_back(std::move(rec));
  }
  m.content_hash = manifest_hash(m.records);
  return m;
}

DatasetManifest load_dataset(const std::filesystem::path& path, SourceFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("dataset file not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  DatasetManifest m = parse_dataset(buf.str(), format, path.stem().string());
  if (m.records.empty()) {
    std::string msg = path.string() + ": zero valid records";
    for (const auto& issue : m.issues) {
      msg += "; line " + std::to_string(issue.line) + " (" + issue.task_id + "): " + issue.message;
    }
    throw RuntimeError(msg);
  }
  return m;
}

std::string render_native_jsonl(const std::vector<DemonstrationPair>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json obj;
    obj["task_id"] = r.task_id;
    obj["prompt"] = r.prompt_text;
    obj["solution"] = r.golden_code;
    obj["tests"] = r.tests;
    obj["language"] = r.language_tag;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeError("cannot write dataset: " + path.string());
  out << render_native_jsonl(manifest.records);
}

PoolQuerySplit split_pool_query(const DatasetManifest& manifest, const std::set<std::string>& query_ids) {
  std::set<std::string> unknown = query_ids;
  PoolQuerySplit split;
  for (const auto& r : manifest.records) {
    if (query_ids.count(r.task_id) != 0) {
      split.queries.push_back(r);
      unknown.erase(r.task_id);
    } else {
      split.pool.push_back(r);
    }
  }
  if (!unknown.empty()) {
    std::string msg = "unknown query task_id(s):";
    for (const auto& id : unknown) msg += " " + id;
    throw ConfigError(msg);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Synthetic families

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

int rand_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

template <class T, std::size_t N>
const T& choose(Rng& rng, const T (&items)[N]) {
  return items[pick(rng, N)];
}

std::string py_str(std::string_view s) { return "'" + std::string(s) + "'"; }

std::string py_list(const std::vector<int>& xs) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(xs[i]);
  }
  return out + "]";
}

std::string random_word(Rng& rng) {
  static const char* kWords[] = {"python", "lambda", "sunrise", "keyboard", "planet", "orange", "zebra",
                                 "window", "garden", "rocket", "pencil", "silver", "forest", "marble"};
  return choose(rng, kWords);
}

std::vector<int> random_list(Rng& rng) {
  std::vector<int> xs(static_cast<std::size_t>(rand_int(rng, 3, 6)));
  for (auto& x : xs) x = rand_int(rng, -9, 30);
  return xs;
}

struct Sample {
  std::string prompt;
  std::string code;
  std::vector<std::string> tests;
};

Sample gen_reverse(Rng& rng) {
  static const char* kNames[] = {"reverse_string", "flip_text", "mirror_word", "backwards", "rev_str", "invert_chars"};
  static const char* kPrompts[] = {
      "Write a python function {f} that reverses the given string s.",
      "Write a function {f} to return the characters of a string in reverse order.",
      "Create a function {f} which takes a string and returns it reversed.",
  };
  std::string f = choose(rng, kNames);
  std::string prompt = choose(rng, kPrompts);
  prompt.replace(prompt.find("{f}"), 3, f);
  std::string code;
  switch (pick(rng, 3)) {
    case 0: code = "def " + f + "(s):\n    return s[::-1]\n"; break;
    case 1: code = "def " + f + "(text):\n    return ''.join(reversed(text))\n"; break;
    default: code = "def " + f + "(s):\n    out = ''\n    for ch in s:\n        out = ch + out\n    return out\n"; break;
  }
  std::vector<std::string> tests;
  for (int i = 0; i < 3; ++i) {
    std::string w = random_word(rng);
    std::string r(w.rbegin(), w.rend());
    tests.push_back("assert " + f + "(" + py_str(w) + ") == " + py_str(r));
  }
  return {prompt, code, tests};
}

Sample gen_arith(Rng& rng) {
  static const char* kNames[] = {"compute", "scaled_sum", "affine", "calc_value", "combine", "linear"};
  std::string f = choose(rng, kNames);
  const int k = rand_int(rng, 2, 9);
  const int m = rand_int(rng, 1, 50);
  std::string prompt;
  std::string code;
  std::function<long(long, long)> eval;
  switch (pick(rng, 3)) {
    case 0:
      prompt = "Write a function " + f + " that returns the sum of two integers a and b multiplied by " +
               std::to_string(k) + ".";
      code = "def " + f + "(a, b):\n    return (a + b) * " + std::to_string(k) + "\n";
      eval = [k](long a, long b) { return (a + b) * k; };
      break;
    case 1:
      prompt = "Write a function " + f + " to compute " + std::to_string(k) + " times a plus b plus " +
               std::to_string(m) + ".";
      code = "def " + f + "(a, b):\n    return " + std::to_string(k) + " * a + b + " + std::to_string(m) + "\n";
      eval = [k, m](long a, long b) { return k * a + b + m; };
      break;
    default:
      prompt = "Write a python function " + f + " that returns a minus b plus " + std::to_string(m) + ".";
      code = "def " + f + "(a, b):\n    result = a - b\n    return result + " + std::to_string(m) + "\n";
      eval = [m](long a, long b) { return a - b + m; };
      break;
  }
  std::vector<std::string> tests;
  for (int i = 0; i < 3; ++i) {
    const long a = rand_int(rng, -20, 99);
    const long b = rand_int(rng, -20, 99);
    tests.push_back("assert " + f + "(" + std::to_string(a) + ", " + std::to_string(b) +
                    ") == " + std::to_string(eval(a, b)));
  }
  return {prompt, code, tests};
}

Sample gen_upper(Rng& rng) {
  static const char* kNames[] = {"shout", "to_upper", "capitalize_all", "upper_case", "loud"};
  std::string f = choose(rng, kNames);
  std::string prompt = pick(rng, 2) == 0 ? "Write a function " + f + " that converts a string to upper case."
                                         : "Write a python function " + f + " to make every letter of a word uppercase.";
  std::string code = pick(rng, 2) == 0 ? "def " + f + "(s):\n    return s.upper()\n"
                                       : "def " + f + "(word):\n    return ''.join(c.upper() for c in word)\n";
  std::vector<std::string> tests;
  for (int i = 0; i < 3; ++i) {
    std::string w = random_word(rng);
    std::string u = w;
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    tests.push_back("assert " + f + "(" + py_str(w) + ") == " + py_str(u));
  }
  return {prompt, code, tests};
}

Sample gen_evens(Rng& rng) {
  static const char* kNames[] = {"keep_even", "even_only", "filter_evens", "evens"};
  std::string f = choose(rng, kNames);
  std::string prompt = pick(rng, 2) == 0 ? "Write a function " + f + " that returns the even numbers of a list."
                                         : "Write a python function " + f + " to filter a list keeping only even integers.";
  std::string code = pick(rng, 2) == 0 ? "def " + f + "(xs):\n    return [x for x in xs if x % 2 == 0]\n"
                                       : "def " + f + "(nums):\n    return list(filter(lambda n: n % 2 == 0, nums))\n";
  std::vector<std::string> tests;
  for (int i = 0; i < 3; ++i) {
    auto xs = random_list(rng);
    std::vector<int> ev;
    for (int x : xs) {
      if (x % 2 == 0) ev.push_back(x);
    }
    tests.push_back("assert " + f + "(" + py_list(xs) + ") == " + py_list(ev));
  }
  return {prompt, code, tests};
}

Sample gen_maxval(Rng& rng) {
  static const char* kNames[] = {"largest", "max_of", "find_max", "biggest"};
  std::string f = choose(rng, kNames);
  std::string prompt = pick(rng, 2) == 0 ? "Write a function " + f + " that returns the largest element of a list."
                                         : "Write a python function " + f + " to find the maximum value in a list of integers.";
  std::string code = pick(rng, 2) == 0
                         ? "def " + f + "(xs):\n    return max(xs)\n"
                         : "def " + f + "(nums):\n    best = nums[0]\n    for n in nums:\n        if n > best:\n            best = n\n    return best\n";
  std::vector<std::string> tests;
  for (int i = 0; i < 3; ++i) {
    auto xs = random_list(rng);
    tests.push_back("assert " + f + "(" + py_list(xs) + ") == " + std::to_string(*std::max_element(xs.begin(), xs.end())));
  }
  return {prompt, code, tests};
}

using Generator = Sample (*)(Rng&);

const std::map<std::string, Generator>& family_registry() {
  static const std::map<std::string, Generator> kFamilies = {
      {"arith", gen_arith}, {"evens", gen_evens}, {"maxval", gen_maxval}, {"reverse", gen_reverse}, {"upper", gen_upper},
  };
  return kFamilies;
}

}  // namespace

std::vector<std::string> synthetic_family_names() {
  std::vector<std::string> names;
  for (const auto& [name, gen] : family_registry()) names.push_back(name);
  return names;
}

std::string task_family(std::string_view task_id) {
  const auto slash = task_id.find('/');
  return std::string(slash == std::string_view::npos ? task_id : task_id.substr(0, slash));
}

DatasetManifest build_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed) {
  std::set<std::string> distinct(spec.families.begin(), spec.families.end());
  if (distinct.size() < 2 || distinct.size() != spec.families.size()) {
    throw ConfigError("synthetic corpus needs at least 2 distinct task families");
  }
  if (spec.per_family == 0) throw ConfigError("synthetic corpus needs per_family >= 1");
  const auto& registry = family_registry();
  for (const auto& f : spec.families) {
    if (registry.count(f) == 0) throw ConfigError("unknown synthetic family '" + f + "'");
  }

  DatasetManifest m;
  m.name = "synthetic";
  m.source_format = SourceFormat::synthetic;
  for (const auto& family : spec.families) {
    Rng rng(derive_seed(seed, "synthetic", family));
    for (std::size_t i = 0; i < spec.per_family; ++i) {
      Sample s = registry.at(family)(rng);
      char idx[16];
      std::snprintf(idx, sizeof idx, "%03zu", i);
      m.records.push_back({family + "/" + idx, s.prompt, s.code, s.tests, "python"});
    }
  }
  m.content_hash = manifest_hash(m.records);
  return m;
}

}  // namespace latentdemo
