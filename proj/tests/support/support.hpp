#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "geoforge/analytics.hpp"
#include "geoforge/dataset.hpp"
#include "geoforge/gateway.hpp"
#include "geoforge/pipeline.hpp"
#include "geoforge/prompts.hpp"

namespace geoforge::testing {

namespace fs = std::filesystem;

fs::path source_dir();
fs::path fixtures_dir();

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

gateway::ProviderResult ok(std::string text);

// Provider backed by a function. Counts calls and tracks how many were in
// flight at once; `delay` holds each call open to make overlap observable.
class ScriptedProvider : public gateway::Provider {
 public:
  using Script = std::function<gateway::ProviderResult(const gateway::ChatRequest&)>;
  explicit ScriptedProvider(Script script, std::chrono::milliseconds delay = std::chrono::milliseconds(0));
  gateway::ProviderResult send(const gateway::ChatRequest& request) override;

  int calls() const { return calls_.load(); }
  int peak() const { return peak_.load(); }

 private:
  Script script_;
  std::chrono::milliseconds delay_;
  std::mutex mutex_;
  std::atomic<int> calls_{0};
  std::atomic<int> current_{0};
  std::atomic<int> peak_{0};
};

// Fails the test loudly if anything reaches the network layer.
class RefusingProvider : public gateway::Provider {
 public:
  gateway::ProviderResult send(const gateway::ChatRequest& request) override;
  int calls() const { return calls_.load(); }

 private:
  std::atomic<int> calls_{0};
};

// Which template a request was rendered from, by its system message.
std::optional<prompts::PromptKind> kind_of(const gateway::ChatRequest& request);

// Gateway over a cassette file in replay mode with a provider that refuses
// every call.
std::unique_ptr<gateway::Gateway> replay_gateway(const fs::path& cassette, int jobs = 4);

// ---------------------------------------------------------------------------
// The 10-seed pipeline fixture. Seeds q01..q10; every seed yields three
// variants, every variant three programs. Four programs are broken and two
// score replies do not parse. Scores are fixed per (seed, variant, candidate).

inline constexpr int k_fixture_seeds = 10;

std::string seed_id(int seed);
// Sources the fixture writes seeds under, cycled through in seed order.
std::string seed_source(int seed);

struct FixtureKey {
  int seed = 0;
  int variant = 0;
  int candidate = 0;
  auto operator<=>(const FixtureKey&) const = default;
};

bool fixture_program_is_bad(const FixtureKey& key);
std::string fixture_program(const FixtureKey& key);
// Raw judge reply for a candidate, including the two malformed ones.
std::string fixture_score_reply(const FixtureKey& key);

// Config used to record the fixture (defaults, seed 0).
pipeline::PipelineConfig fixture_config();

// The scripted model behind the fixture cassette.
class FixtureModel {
 public:
  explicit FixtureModel(pipeline::PipelineConfig config);
  gateway::ProviderResult operator()(const gateway::ChatRequest& request);

 private:
  pipeline::PipelineConfig config_;
  std::mutex mutex_;
  std::map<std::string, FixtureKey> by_image_;  // variant tag + image sha256 -> candidate
};

// Writes seeds.jsonl, images/, run.cassette.jsonl and expected/ (the
// enhanced dataset, candidate table and report a replay run must match).
void generate_pipeline_fixture(const fs::path& dir);

// Independent reading of a recorded cassette: best judge score per variant
// tag ("q03/v1"), taken straight from the recorded reply text. Replies with
// no usable score line count as 0.
std::map<std::string, double> best_scores_from_cassette(const fs::path& cassette);

// Loads the committed fixture seeds with their images.
std::vector<dataset::ProblemRecord> fixture_seeds();

// ---------------------------------------------------------------------------
// Survey fixtures, recorded on the fly into a directory.

// `n` judge scores in ten-thousandths, each in [0, 10000], summing to exactly
// round(mean * n * 10000). Spread out by random transfers.
std::vector<int> alignment_fixture_scores(std::size_t n, double mean, std::uint64_t seed);

// Writes <name>.jsonl (problem records), images/ and <name>.cassette.jsonl
// holding one judge reply per record with the scores above, in record order.
// Returns the corpus path.
fs::path write_alignment_fixture(const fs::path& dir, const std::string& name, std::size_t n, double mean,
                                 std::uint64_t seed);

struct DifficultyFixture {
  fs::path originals;
  fs::path generated;
  fs::path cassette;
  // Intended verdict per generated id.
  std::map<std::string, analytics::DifficultyVerdict> truth;
};

// One original/generated pair per verdict requested; the judge answers both
// orders consistently for Easier and Harder and contradicts itself for
// Equal. Pair order is shuffled by `seed`.
DifficultyFixture write_difficulty_fixture(const fs::path& dir, std::size_t easier, std::size_t equal,
                                           std::size_t harder, std::uint64_t seed);

}  // namespace geoforge::testing
