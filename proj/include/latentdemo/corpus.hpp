#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace latentdemo {

enum class SourceFormat { mbpp, humaneval, native, synthetic };

std::string_view to_string(SourceFormat format);
SourceFormat parse_source_format(std::string_view name);

/// One (prompt, golden code, tests) record. The atom of a demonstration pool.
struct DemonstrationPair {
  std::string task_id;
  std::string prompt_text;
  std::string golden_code;
  std::vector<std::string> tests;
  std::string language_tag;

  bool operator==(const DemonstrationPair&) const = default;
};

/// Digest over the canonical fields of one record.
std::string content_hash(const DemonstrationPair& pair);

/// A record that was skipped during loading.
struct RecordIssue {
  std::size_t line = 0;
  std::string task_id;  // empty when the record carried no usable id
  std::string message;
};

struct DatasetManifest {
  std::string name;
  std::vector<DemonstrationPair> records;
  SourceFormat source_format = SourceFormat::native;
  std::string content_hash;
  std::vector<RecordIssue> issues;

  const DemonstrationPair* find(std::string_view task_id) const;
};

/// Digest over the ordered record list; independent of name and source format
/// so that a native re-export hashes identically.
std::string manifest_hash(const std::vector<DemonstrationPair>& records);

/// Parses a dataset without the zero-record check. Malformed JSON lines throw
/// ParseError with the line number; invalid records become issues.
DatasetManifest parse_dataset(std::string_view text, SourceFormat format, std::string name = "dataset");

/// Loads a JSONL dataset from disk. Throws ConfigError when the file is
/// missing and RuntimeError when no valid record survives validation.
DatasetManifest load_dataset(const std::filesystem::path& path, SourceFormat format);

/// Writes the native JSONL interchange format.
void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& path);
std::string render_native_jsonl(const std::vector<DemonstrationPair>& records);

struct PoolQuerySplit {
  std::vector<DemonstrationPair> pool;
  std::vector<DemonstrationPair> queries;
};

/// Partitions records by query id, keeping manifest order in both halves.
PoolQuerySplit split_pool_query(const DatasetManifest& manifest, const std::set<std::string>& query_ids);

/// Parameters for the built-in synthetic task families.
struct SyntheticSpec {
  std::vector<std::string> families;  // names from synthetic_family_names()
  std::size_t per_family = 10;
};

std::vector<std::string> synthetic_family_names();

/// Family label carried as the task_id prefix ("reverse/004" -> "reverse").
std::string task_family(std::string_view task_id);

/// Deterministic desk-scale corpus; every golden solution passes its tests.
DatasetManifest build_synthetic_corpus(const SyntheticSpec& spec, std::uint64_t seed);

}  // namespace latentdemo
