#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geoforge/error.hpp"
#include "geoforge/gateway.hpp"
#include "geoforge/prompts.hpp"

namespace geoforge::eval {

enum class ErrorKind { MissingOutput, MalformedInput };

class EvalError : public KindedError<ErrorKind> {
 public:
  using KindedError::KindedError;
};

struct Choice {
  std::string letter;
  std::string text;
  bool operator==(const Choice&) const = default;
};

struct BenchmarkItem {
  std::string id;
  std::string question;
  std::vector<Choice> choices;  // empty for open-ended items
  std::string gold_answer;      // a choice letter when choices are present
  std::string task_tag;
};

enum class Method { Pattern, ModelAssisted };
std::string to_string(Method method);
Method method_from_string(const std::string& text);

struct ExtractionOutcome {
  std::optional<std::string> extracted;
  Method method = Method::Pattern;
  std::string matched_rule;  // empty when nothing matched
};

// Pattern rules are tried in this order; the first match wins. Rules are only
// ever appended, and the set carries a version so fixtures can pin it.
inline constexpr std::string_view k_rule_set_version = "pattern-rules/1";
const std::vector<std::string>& pattern_rule_ids();

ExtractionOutcome extract_answer(std::string_view output, const BenchmarkItem& item);

// Sends a single-line extraction request through the gateway (text model).
// A reply of NONE, or an empty reply, is no extraction.
ExtractionOutcome extract_answer_model(std::string_view output, const BenchmarkItem& item, gateway::Gateway& gateway,
                                       const prompts::ModelRoles& models = {});
gateway::ChatRequest extraction_request(std::string_view output, const BenchmarkItem& item,
                                        const prompts::ModelRoles& models = {});

// Trim, collapse internal whitespace, drop one trailing period.
std::string normalize_answer(std::string_view text);

// Decimal, integer, or simple fraction "a/b"; surrounding whitespace, a
// trailing period and a trailing degree sign are ignored.
std::optional<double> parse_numeric(std::string_view text);

bool grade_item(const std::optional<std::string>& extracted, const BenchmarkItem& item);

struct TaskAccuracy {
  std::string task;
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double accuracy = 0.0;  // percent, full precision
};

struct GradedItem {
  std::string id;
  ExtractionOutcome extraction;
  bool correct = false;
};

struct GradeReport {
  std::vector<TaskAccuracy> tasks;  // sorted by task tag
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double overall = 0.0;  // item-weighted percent
  double avg = 0.0;      // unweighted mean of task accuracies
  std::vector<GradedItem> items;
};

// `outputs` maps item id to model output. Throws MissingOutput naming the
// first item without one. `gateway` is required for ModelAssisted.
GradeReport accuracy_report(const std::vector<BenchmarkItem>& items, const std::map<std::string, std::string>& outputs,
                            Method method = Method::Pattern, gateway::Gateway* gateway = nullptr,
                            const prompts::ModelRoles& models = {}, int concurrency = 4);

// Two-decimal rendering with round-half-up on the exact value of
// correct/total*100.
std::string percent_2dp(std::int64_t correct, std::int64_t total);

// Mean of already-rounded two-decimal accuracies, computed in integer
// hundredths with round-half-up so 20.67 and 20.92 give 20.80.
std::string average_of_rounded(const std::vector<std::string>& two_decimal_values);

std::string report_to_json_lines(const GradeReport& report);
std::string report_table(const GradeReport& report);

// JSON Lines readers. Items: {id, question, choices?, answer, task}; choices
// is a list of {letter, text}. Outputs: {id, output}.
std::vector<BenchmarkItem> read_items(const std::filesystem::path& path);
std::map<std::string, std::string> read_outputs(const std::filesystem::path& path);

}  // namespace geoforge::eval
