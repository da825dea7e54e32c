#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geoforge/dataset.hpp"
#include "geoforge/error.hpp"
#include "geoforge/gateway.hpp"
#include "geoforge/prompts.hpp"

namespace geoforge::analytics {

enum class ErrorKind { SampleTooLarge, EmptyPopulation, MissingParent, MissingImage };

class AnalyticsError : public KindedError<ErrorKind> {
 public:
  using KindedError::KindedError;
};

// Difficulty of the second item of a pair relative to the first.
enum class DifficultyVerdict { Easier, Harder, Equal };
std::string to_string(DifficultyVerdict verdict);

enum class SwapRule {
  // Each slot answer is mapped to the item it names; the verdict stands only
  // if both orders name the same item.
  IdentityLevel,
  // Literal reading: differing digits across the two orders mean Equal,
  // identical digits follow the first ordering.
  SlotLevel,
};

struct SurveyConfig {
  std::size_t sample_size = 500;
  std::uint64_t seed = 0;
  int concurrency = 4;
  SwapRule rule = SwapRule::IdentityLevel;
  prompts::ModelRoles models;
};

// p1 is the verdict for (first, second), p2 for (second, first).
DifficultyVerdict combine_verdicts(prompts::SlotVerdict p1, prompts::SlotVerdict p2, SwapRule rule);

struct PairJudgement {
  DifficultyVerdict verdict = DifficultyVerdict::Equal;
  std::optional<prompts::SlotVerdict> p1;
  std::optional<prompts::SlotVerdict> p2;
  bool judge_failed = false;  // a reply did not parse; verdict forced to Equal
};

// Two judge calls, one per order. Verdict describes `second` relative to
// `first`, so swapping the arguments mirrors it.
PairJudgement judge_pair(const prompts::JudgeItem& first, const prompts::JudgeItem& second,
                         gateway::Gateway& judge, const SurveyConfig& config);

// Both records need image bytes loaded. Verdict is the generated item's
// difficulty relative to the original.
PairJudgement judge_pair_difficulty(const dataset::ProblemRecord& original, const dataset::EnhancedRecord& generated,
                                    gateway::Gateway& judge, const SurveyConfig& config);

struct DifficultyPair {
  dataset::ProblemRecord original;
  dataset::EnhancedRecord generated;
};

// Pairs each generated record with its provenance parent. Throws
// MissingParent.
std::vector<DifficultyPair> pair_by_provenance(const std::vector<dataset::ProblemRecord>& originals,
                                               const std::vector<dataset::EnhancedRecord>& generated);

// First `n` indices of a seeded shuffle of [0, population).
std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, std::uint64_t seed);

struct DifficultyDistribution {
  std::size_t sample_size = 0;
  std::size_t easier = 0;
  std::size_t harder = 0;
  std::size_t equal = 0;
  std::size_t judge_failures = 0;
  std::vector<std::size_t> sampled;  // population indices in judging order

  double percent(std::size_t count) const;
  double easier_or_equal_percent() const { return percent(easier + equal); }
};

DifficultyDistribution difficulty_survey(const std::vector<DifficultyPair>& population, gateway::Gateway& judge,
                                         const SurveyConfig& config);

std::string difficulty_to_json_lines(const DifficultyDistribution& d);
std::string difficulty_table(const DifficultyDistribution& d);

struct AlignmentItem {
  std::string id;
  // Bound as the scoring prompt's description.
  std::string text;
  gateway::Image image;
};

// Question text becomes the description; images are resolved against
// `base_dir`.
std::vector<AlignmentItem> alignment_items_from(const std::vector<dataset::ProblemRecord>& records,
                                                const std::filesystem::path& base_dir);

struct AlignmentReport {
  std::string corpus;
  std::size_t count = 0;
  double mean = 0.0;  // full precision; rendered with 4 decimals
  std::array<std::size_t, 10> histogram{};
  std::size_t judge_failures = 0;
  std::vector<double> scores;  // in sampled order
};

// Histogram bin for a score in [0,1]; 1.0 lands in the last bin.
std::size_t histogram_bin(double score);

AlignmentReport alignment_survey(const std::vector<AlignmentItem>& corpus, gateway::Gateway& judge,
                                 const SurveyConfig& config, const std::string& corpus_name = "corpus");

std::string alignment_to_json_lines(const AlignmentReport& r);
std::string alignment_table(const AlignmentReport& r);

}  // namespace geoforge::analytics
