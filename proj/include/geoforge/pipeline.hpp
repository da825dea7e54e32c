#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "geoforge/dataset.hpp"
#include "geoforge/error.hpp"
#include "geoforge/executor.hpp"
#include "geoforge/gateway.hpp"
#include "geoforge/geoscript.hpp"
#include "geoforge/prompts.hpp"

namespace geoforge::pipeline {

enum class ErrorKind { InvalidConfig, ConfigMismatchOnResume, CheckpointIo, MissingImage };

class PipelineError : public KindedError<ErrorKind> {
 public:
  using KindedError::KindedError;
};

enum class Backend { BuiltinDsl, External };
std::string to_string(Backend backend);
Backend backend_from_string(const std::string& text);

enum class Stage { Qa, Code, Render, Score };
std::string to_string(Stage stage);
Stage stage_from_string(const std::string& text);

struct PipelineConfig {
  int n_variants = 3;
  int k_candidates = 3;
  double accept_threshold = 0.9;
  Backend backend = Backend::BuiltinDsl;
  int concurrency = 4;
  gateway::Mode mode = gateway::Mode::Replay;
  std::filesystem::path checkpoint_path;
  std::uint64_t seed = 0;

  // Written into EnhancedRecord::source_dataset.
  std::string dataset_name = "generated";
  int image_width = 600;
  geoscript::RenderOptions render;
  std::optional<geoscript::ExternalExecutorConfig> external;
  prompts::ModelRoles models;
  // Live mode only: ask the judge once more after a malformed score reply.
  bool reask_malformed_scores = false;
};

// Throws InvalidConfig.
void validate(const PipelineConfig& config);

// TOML-like `key = value` lines; '#' comments; an `[executor]` table holds
// the external executor keys. Unknown keys are InvalidConfig.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::filesystem::path& path);

// Digest over every field that affects results. Concurrency, mode and the
// checkpoint path are excluded so a resumed run may change them.
std::string config_digest(const PipelineConfig& config);

// Stage 2-4 work item key.
struct CandidateKey {
  std::string parent_id;
  int variant_index = 0;
  int candidate_index = 0;

  dataset::VariantKey variant() const { return {parent_id, variant_index}; }
  auto operator<=>(const CandidateKey&) const = default;
};

struct QaOutcome {
  std::vector<prompts::QaTriple> blocks;  // empty when the reply did not parse
  std::string error;
  bool operator==(const QaOutcome&) const = default;
};

struct CodeOutcome {
  std::optional<std::string> program;
  std::string error;
  bool operator==(const CodeOutcome&) const = default;
};

struct ScoreOutcome {
  double score = 0.0;
  std::string reason;
  bool parse_failed = false;
  bool judged = false;  // false for failed renders, which are never sent
  bool operator==(const ScoreOutcome&) const = default;
};

// Everything the stages have produced so far, keyed by work item. This is
// what the checkpoint persists; counters are derived from it.
struct RunState {
  std::map<std::string, QaOutcome> qa;
  std::map<CandidateKey, CodeOutcome> code;
  std::map<CandidateKey, dataset::ImageCandidate> render;
  std::map<CandidateKey, ScoreOutcome> score;
  std::set<Stage> completed;

  bool operator==(const RunState&) const = default;
};

// Shared by the stage functions. `executor` is required for the external
// backend. Items already present in `state` are not recomputed; new results
// are added under `state_mutex`.
struct StageContext {
  const PipelineConfig& config;
  gateway::Gateway& gateway;
  geoscript::ExternalExecutor* executor = nullptr;
  RunState& state;
  std::mutex& state_mutex;
};

// Seeds need image bytes loaded (MissingImage otherwise). Variants come back
// in seed order, then variant index.
std::vector<dataset::GeneratedProblem> stage_generate_qa(const std::vector<dataset::ProblemRecord>& seeds,
                                                         StageContext& ctx);

struct ProgramSet {
  dataset::GeneratedProblem variant;
  std::vector<std::pair<int, std::string>> programs;  // (candidate_index, text)
};

std::vector<ProgramSet> stage_generate_code(const std::vector<dataset::GeneratedProblem>& variants,
                                            StageContext& ctx);

// Failures become Failed candidates, never dropped.
std::vector<dataset::ImageCandidate> stage_render(const std::vector<ProgramSet>& programs, StageContext& ctx);

// `variants` supplies the description and question bound into each request.
std::vector<dataset::ScoredCandidate> stage_score(const std::vector<dataset::ImageCandidate>& candidates,
                                                  const std::vector<dataset::GeneratedProblem>& variants,
                                                  StageContext& ctx);

// Highest score wins, ties to the lowest candidate index. Returns nullopt for
// an empty group.
std::optional<std::size_t> best_candidate(const std::vector<dataset::ScoredCandidate>& group);

struct Selection {
  std::vector<dataset::EnhancedRecord> accepted;  // sorted by (parent_id, variant_index)
  std::vector<dataset::VariantKey> discarded;
};

// `images_dir` prefixes image paths in the emitted records; `parent_sources`
// maps parent id to the seed's source_dataset for provenance.
Selection select_and_filter(const std::vector<dataset::ScoredCandidate>& scored,
                            const std::vector<dataset::GeneratedProblem>& variants,
                            const std::map<std::string, std::string>& parent_sources, const PipelineConfig& config,
                            const std::string& images_dir);

// File name used for a candidate image, e.g. "q7_v2_c1.png".
std::string candidate_image_name(const CandidateKey& key, const std::string& format = "png");

struct StageCount {
  std::string stage;
  std::int64_t input = 0;
  std::int64_t output = 0;
  std::int64_t failures = 0;
  bool operator==(const StageCount&) const = default;
};

struct PipelineReport {
  std::vector<StageCount> stages;
  std::int64_t qa_parse_failures = 0;
  std::int64_t qa_partial_warnings = 0;
  std::int64_t code_parse_failures = 0;
  std::int64_t render_failures = 0;
  std::int64_t score_parse_failures = 0;
  std::int64_t reached_selection = 0;
  std::int64_t discarded_by_threshold = 0;
  std::int64_t accepted = 0;
  // Reported on stdout only; report files stay byte-identical across runs.
  std::chrono::duration<double> wall_time{0};
};

std::string report_to_json_lines(const PipelineReport& report);
std::string report_summary_text(const PipelineReport& report);

struct RunOptions {
  // Simulates a crash: the run stops (checkpoint written) after this stage.
  std::optional<Stage> stop_after;
  // Directory name, relative to the output file, holding candidate images.
  std::string images_dir = "images";
};

struct RunResult {
  bool complete = false;
  std::vector<dataset::EnhancedRecord> records;
  std::vector<dataset::CandidateRecord> candidates;
  std::map<CandidateKey, dataset::Rendered> images;
  PipelineReport report;
};

// Seeds must have image bytes loaded. Resumes from config.checkpoint_path
// when that file exists.
RunResult run_pipeline(const std::vector<dataset::ProblemRecord>& seeds, const PipelineConfig& config,
                       gateway::Gateway& gateway, const RunOptions& options = {},
                       std::shared_ptr<geoscript::ExternalExecutor> executor = nullptr);

// Loads image bytes for every seed, resolving paths against `base_dir`.
void load_seed_images(std::vector<dataset::ProblemRecord>& seeds, const std::filesystem::path& base_dir);

struct OutputPaths {
  std::filesystem::path records;     // enhanced dataset (JSON Lines)
  std::filesystem::path candidates;  // <stem>.candidates.jsonl
  std::filesystem::path images_dir;  // <stem>_images/
  std::filesystem::path report;      // report.jsonl
};

// Default layout beside `out`; `report` overrides the report location.
OutputPaths output_paths_for(const std::filesystem::path& out, const std::filesystem::path& report = {});

void write_outputs(const RunResult& result, const OutputPaths& paths);

// Checkpoint persistence, exposed for tests.
void save_checkpoint(const std::filesystem::path& path, const std::string& digest, const RunState& state);
std::optional<RunState> load_checkpoint(const std::filesystem::path& path, const std::string& digest);

}  // namespace geoforge::pipeline
