#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "geoforge/digest.hpp"
#include "geoforge/error.hpp"

namespace geoforge::dataset {

enum class ErrorKind {
  MissingFile,
  MalformedLine,
  DuplicateId,
  IoFailure,
  InvariantViolation,
  CountMismatch,
  MissingParent,
};

class DatasetError : public KindedError<ErrorKind> {
 public:
  DatasetError(ErrorKind kind, const std::string& message, std::size_t line = 0)
      : KindedError(kind, message), line_(line) {}
  // 1-based line number for MalformedLine, 0 otherwise.
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

enum class Split { Train, Test };

// Relative path to an image file next to the dataset. Bytes are only ever
// populated in memory, never serialized.
struct ImageRef {
  std::string path;
  std::optional<Bytes> bytes;

  bool operator==(const ImageRef& other) const { return path == other.path; }
};

struct ProblemRecord {
  std::string id;
  std::string source_dataset;
  std::string question;
  std::string answer;
  ImageRef image;
  Split split = Split::Train;
  std::map<std::string, std::string> metadata;

  bool operator==(const ProblemRecord&) const = default;
};

struct VariantKey {
  std::string parent_id;
  int variant_index = 0;

  auto operator<=>(const VariantKey&) const = default;
};

// One simplified variant produced from a seed problem.
struct GeneratedProblem {
  std::string parent_id;
  int variant_index = 0;
  std::string question;
  std::string answer;
  std::string image_description;

  VariantKey key() const { return {parent_id, variant_index}; }
  bool operator==(const GeneratedProblem&) const = default;
};

struct Rendered {
  Bytes bytes;
  std::string format;  // "png", "svg", ...
  bool operator==(const Rendered&) const = default;
};

struct Failed {
  std::string diagnostic;
  bool operator==(const Failed&) const = default;
};

struct ImageCandidate {
  VariantKey parent;
  int candidate_index = 0;
  std::string program_text;
  std::variant<Rendered, Failed> outcome;

  bool rendered() const { return std::holds_alternative<Rendered>(outcome); }
  bool operator==(const ImageCandidate&) const = default;
};

struct ScoredCandidate {
  ImageCandidate candidate;
  double score = 0.0;
  std::string reason;

  bool operator==(const ScoredCandidate&) const = default;
};

struct Provenance {
  std::string source_dataset;
  std::string parent_id;
  int variant_index = 0;
  int candidate_index = 0;

  bool operator==(const Provenance&) const = default;
};

struct EnhancedRecord {
  std::string id;
  std::string source_dataset;  // name of the generated corpus
  std::string question;
  std::string answer;
  ImageRef image;
  double score = 0.0;
  Provenance provenance;

  bool operator==(const EnhancedRecord&) const = default;
};

// On-disk form of a scored candidate, kept so ablation assembly can pick a
// non-best image later.
struct CandidateRecord {
  VariantKey parent;
  int candidate_index = 0;
  bool rendered = false;
  ImageRef image;  // empty path when the render failed
  double score = 0.0;
  std::string reason;
  std::string diagnostic;

  bool operator==(const CandidateRecord&) const = default;
};

enum class RecordSchema { Problem, Generated, Enhanced, Candidate };
using AnyRecord = std::variant<ProblemRecord, GeneratedProblem, EnhancedRecord, CandidateRecord>;

// JSON-Lines I/O. Blank lines are skipped; line numbers in errors are 1-based
// physical line numbers.
std::vector<AnyRecord> read_records(const std::filesystem::path& path, RecordSchema schema);
std::size_t write_records(const std::vector<AnyRecord>& records, const std::filesystem::path& path);

std::vector<ProblemRecord> read_problems(const std::filesystem::path& path);
std::vector<GeneratedProblem> read_generated(const std::filesystem::path& path);
std::vector<EnhancedRecord> read_enhanced(const std::filesystem::path& path);
std::vector<CandidateRecord> read_candidates(const std::filesystem::path& path);

template <typename Record>
std::size_t write_records(const std::vector<Record>& records, const std::filesystem::path& path) {
  std::vector<AnyRecord> any(records.begin(), records.end());
  return write_records(any, path);
}

// Canonical single-line JSON for one record (sorted keys, no trailing newline).
std::string to_json_line(const AnyRecord& record);

// Throws InvariantViolation naming the record when the type invariants fail.
void validate(const AnyRecord& record);

std::string to_string(Split split);
Split split_from_string(const std::string& text);

template <typename T>
std::vector<T> take_first_n(const std::vector<T>& records, std::size_t n) {
  const std::size_t count = std::min(n, records.size());
  return std::vector<T>(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(count));
}

// ---------------------------------------------------------------------------
// Mixing recipe and assembly.

enum class DatasetRole { OpenSource, Generated };
enum class AssemblyMode { BestScored, OriginalImage, RandomCandidate };

std::string to_string(DatasetRole role);
std::string to_string(AssemblyMode mode);
AssemblyMode assembly_mode_from_string(const std::string& text);

struct ManifestEntry {
  std::string name;
  std::string path;
  std::int64_t expected_count = 0;  // 0 accepts any count
  DatasetRole role = DatasetRole::OpenSource;
  // Generated entries only: seed records (OriginalImage) and the candidate
  // table written by the pipeline (RandomCandidate).
  std::string parents_path;
  std::string candidates_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(const std::string& text);
std::string manifest_to_json(const DatasetManifest& manifest);

struct EntryInputs {
  std::vector<ProblemRecord> open_source;
  std::vector<EnhancedRecord> enhanced;
  std::vector<ProblemRecord> parents;
  std::vector<CandidateRecord> candidates;
};

using AssemblyInputs = std::map<std::string, EntryInputs>;

struct AssembledRecord {
  std::string entry;
  DatasetRole role = DatasetRole::OpenSource;
  std::variant<ProblemRecord, EnhancedRecord> record;

  const ImageRef& image() const;
};

struct EntryCount {
  std::string name;
  DatasetRole role = DatasetRole::OpenSource;
  std::int64_t count = 0;
};

struct AssemblyStats {
  std::vector<EntryCount> per_entry;
  std::int64_t generated_total = 0;
  std::int64_t open_source_total = 0;
  std::int64_t total = 0;
  // Open-source and generated items are never deduplicated against each
  // other; this flag is carried into reports so readers know.
  bool deduplicated = false;
};

struct AssemblyResult {
  std::vector<AssembledRecord> records;
  AssemblyStats stats;
};

AssemblyResult assemble_mix(const DatasetManifest& manifest, AssemblyMode mode,
                            const AssemblyInputs& inputs);

// Reads every file the manifest names. Relative manifest paths resolve
// against `manifest_dir`; image paths are rebased to be relative to
// `output_dir`.
AssemblyInputs load_assembly_inputs(const DatasetManifest& manifest, AssemblyMode mode,
                                    const std::filesystem::path& manifest_dir,
                                    const std::filesystem::path& output_dir);

std::size_t write_assembled(const std::vector<AssembledRecord>& records,
                            const std::filesystem::path& path);
std::string stats_to_json_lines(const AssemblyStats& stats);

}  // namespace geoforge::dataset
