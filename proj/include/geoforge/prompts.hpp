#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "geoforge/error.hpp"
#include "geoforge/gateway.hpp"

namespace geoforge::prompts {

enum class ErrorKind { MissingBinding, WrongContextKind, MalformedResponse, OutOfRange };

class PromptError : public KindedError<ErrorKind> {
 public:
  PromptError(ErrorKind kind, const std::string& message, double value = 0.0)
      : KindedError(kind, message), value_(value) {}
  // Offending value for OutOfRange.
  double value() const noexcept { return value_; }

 private:
  double value_;
};

enum class PromptKind { QaGeneration, CodeGeneration, ImageScoring, DifficultyJudge };

std::string to_string(PromptKind kind);
// Basename of the template file under prompts/, e.g. "qa.txt".
std::string template_file(PromptKind kind);
// Template bytes compiled into the binary from prompts/*.txt.
std::string_view template_text(PromptKind kind);
// GeoScript cheat sheet sent alongside code requests for the built-in backend.
std::string_view geoscript_reference();

using gateway::Image;

struct QaContext {
  std::string question;
  std::string answer;
  std::optional<Image> image;
};

struct CodeContext {
  std::string question;
  std::string answer;
  std::string image_description;
  int candidate_index = 1;
  int candidate_total = 1;
  // Extra instructions for a non-Mathematica target language; empty keeps the
  // request to the verbatim template.
  std::string language_reference;
};

struct ScoringContext {
  std::string description;
  // Appended under the description when non-empty.
  std::string question;
  std::optional<Image> image;
};

struct JudgeItem {
  std::string question;
  std::string answer;
  std::optional<Image> image;
};

struct DifficultyContext {
  JudgeItem first;
  JudgeItem second;
};

using PromptContext = std::variant<QaContext, CodeContext, ScoringContext, DifficultyContext>;

struct ModelRoles {
  std::string vision_model = "gpt-4-vision-preview";
  std::string text_model = "gpt-4-1106-preview";
  gateway::Sampling sampling;
};

// System message = template verbatim; user message = bound inputs in the
// template's input format, with images attached in input order.
gateway::ChatRequest render_prompt(PromptKind kind, const PromptContext& ctx, const ModelRoles& models = {});

// ---------------------------------------------------------------------------
// Output grammars. Markers match case-sensitively at line starts, leading
// whitespace allowed.

struct QaTriple {
  std::string question;
  std::string answer;
  std::string image_description;
  bool operator==(const QaTriple&) const = default;
};

// Complete New_Question/New_Answer/Image_Description blocks in order, at most
// `max_blocks`. Throws MalformedResponse when none is complete.
std::vector<QaTriple> parse_qa(std::string_view text, std::size_t max_blocks = 3);
std::string serialize_qa(const std::vector<QaTriple>& triples);

std::string parse_code(std::string_view text);
std::string serialize_code(std::string_view program, bool fenced = false);

struct ScoreReply {
  std::string reason;
  double score = 0.0;
  bool operator==(const ScoreReply&) const = default;
};

ScoreReply parse_score(std::string_view text);
std::string serialize_score(const ScoreReply& reply);

enum class SlotVerdict { First, Second };
SlotVerdict parse_difficulty(std::string_view text);
std::string serialize_difficulty(SlotVerdict verdict);

}  // namespace geoforge::prompts
