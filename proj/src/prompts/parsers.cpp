#include <algorithm>
#include <charconv>
#include <regex>

#include <fmt/format.h>

#include "geoforge/prompts.hpp"

namespace geoforge::prompts {
namespace {

struct Line {
  std::string_view text;
  std::size_t begin = 0;  // offset of text within the whole response
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    lines.push_back({text.substr(pos, nl - pos), pos});
    pos = nl + 1;
  }
  return lines;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// If `line` starts (after spaces/tabs) with `marker`, returns the offset of
// the first byte after the marker within the line.
std::optional<std::size_t> marker_at(std::string_view line, std::string_view marker) {
  const auto first = line.find_first_not_of(" \t");
  if (first == std::string_view::npos) return std::nullopt;
  if (line.substr(first, marker.size()) != marker) return std::nullopt;
  return first + marker.size();
}

[[noreturn]] void malformed(const std::string& why) {
  throw PromptError(ErrorKind::MalformedResponse, "malformed response: " + why);
}

}  // namespace

std::vector<QaTriple> parse_qa(std::string_view text, std::size_t max_blocks) {
  static constexpr std::string_view k_q = "New_Question:";
  static constexpr std::string_view k_a = "New_Answer:";
  static constexpr std::string_view k_d = "Image_Description:";

  struct Mark {
    int which;           // 0 question, 1 answer, 2 description
    std::size_t start;   // offset where the marker's value begins
    std::size_t line_begin;
  };
  std::vector<Mark> marks;
  for (const Line& line : split_lines(text)) {
    if (auto off = marker_at(line.text, k_q)) marks.push_back({0, line.begin + *off, line.begin});
    else if (auto off2 = marker_at(line.text, k_a)) marks.push_back({1, line.begin + *off2, line.begin});
    else if (auto off3 = marker_at(line.text, k_d)) marks.push_back({2, line.begin + *off3, line.begin});
  }

  auto value = [&](std::size_t i) {
    const std::size_t end = i + 1 < marks.size() ? marks[i + 1].line_begin : text.size();
    return std::string(trim(text.substr(marks[i].start, end - marks[i].start)));
  };

  std::vector<QaTriple> out;
  for (std::size_t i = 0; i + 2 < marks.size() && out.size() < max_blocks; ++i) {
    if (marks[i].which != 0 || marks[i + 1].which != 1 || marks[i + 2].which != 2) continue;
    QaTriple t{value(i), value(i + 1), value(i + 2)};
    if (t.question.empty() || t.answer.empty() || t.image_description.empty()) continue;
    out.push_back(std::move(t));
    i += 2;
  }
  if (out.empty()) malformed("no complete New_Question/New_Answer/Image_Description block");
  return out;
}

std::string serialize_qa(const std::vector<QaTriple>& triples) {
  std::string out;
  for (const auto& t : triples) {
    out += fmt::format("New_Question: {}\n\nNew_Answer: {}\n\nImage_Description: {}\n\n", t.question, t.answer,
                       t.image_description);
  }
  return out;
}

namespace {

// Contents of the first ``` fenced block, if any.
std::optional<std::string_view> fenced_block(std::string_view text) {
  const auto open = text.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  auto body_start = text.find('\n', open);
  if (body_start == std::string_view::npos) return std::nullopt;
  ++body_start;
  auto close = text.find("```", body_start);
  if (close == std::string_view::npos) close = text.size();
  return text.substr(body_start, close - body_start);
}

std::string strip_blank_lines(std::string_view s) {
  // Trim whole blank lines at both ends but keep indentation of the first
  // real line.
  std::size_t begin = 0;
  while (true) {
    const auto nl = s.find('\n', begin);
    if (nl == std::string_view::npos) break;
    if (!trim(s.substr(begin, nl - begin)).empty()) break;
    begin = nl + 1;
  }
  s = s.substr(begin);
  const auto last = s.find_last_not_of(" \t\r\n");
  if (last == std::string_view::npos) return {};
  return std::string(s.substr(0, last + 1));
}

}  // namespace

std::string parse_code(std::string_view text) {
  for (const Line& line : split_lines(text)) {
    if (auto off = marker_at(line.text, "Code:")) {
      std::string_view rest = text.substr(line.begin + *off);
      rest.remove_prefix(std::min(rest.find_first_not_of(" \t"), rest.size()));
      if (trim(rest).substr(0, 3) == "```") {
        if (auto block = fenced_block(trim(rest))) rest = *block;
      }
      std::string program = strip_blank_lines(rest);
      if (program.empty()) malformed("empty program after Code:");
      return program;
    }
  }
  if (auto block = fenced_block(text)) {
    std::string program = strip_blank_lines(*block);
    if (program.empty()) malformed("empty fenced code block");
    return program;
  }
  malformed("no Code: marker and no fenced code block");
}

std::string serialize_code(std::string_view program, bool fenced) {
  if (fenced) return fmt::format("Code:\n```\n{}\n```\n", program);
  return fmt::format("Code: {}\n", program);
}

ScoreReply parse_score(std::string_view text) {
  const auto lines = split_lines(text);
  std::optional<std::size_t> score_line;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (marker_at(lines[i].text, "Score:")) score_line = i;
  }
  if (!score_line) malformed("no Score: line");

  const Line& sl = lines[*score_line];
  const std::string_view raw = trim(sl.text.substr(*marker_at(sl.text, "Score:")));
  static const std::regex k_decimal(R"([+-]?(\d+(\.\d*)?|\.\d+))");
  if (!std::regex_match(raw.begin(), raw.end(), k_decimal)) malformed("score '" + std::string(raw) + "' is not a decimal");
  double value = 0.0;
  std::string_view digits = raw.front() == '+' ? raw.substr(1) : raw;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) malformed("score '" + std::string(raw) + "' unparseable");
  if (!(value >= 0.0 && value <= 1.0)) {
    throw PromptError(ErrorKind::OutOfRange, fmt::format("score {} outside [0,1]", value), value);
  }

  ScoreReply reply;
  reply.score = value;
  for (std::size_t i = 0; i < *score_line; ++i) {
    if (auto off = marker_at(lines[i].text, "Reason:")) {
      const std::size_t start = lines[i].begin + *off;
      reply.reason = std::string(trim(text.substr(start, sl.begin - start)));
      break;
    }
  }
  return reply;
}

std::string serialize_score(const ScoreReply& reply) {
  return fmt::format("Reason: {}\nScore: {:.2f}", reply.reason, reply.score);
}

SlotVerdict parse_difficulty(std::string_view text) {
  const std::string_view t = trim(text);
  if (t == "1") return SlotVerdict::First;
  if (t == "2") return SlotVerdict::Second;

  bool saw_one = false;
  bool saw_two = false;
  std::optional<SlotVerdict> first_seen;
  auto is_word = [](char c) {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '.' || c == '_';
  };
  std::size_t i = 0;
  while (i < t.size()) {
    if (!is_word(t[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < t.size() && is_word(t[j])) ++j;
    std::string_view token = t.substr(i, j - i);
    while (!token.empty() && token.back() == '.') token.remove_suffix(1);
    if (token == "1" || token == "2") {
      const SlotVerdict v = token == "1" ? SlotVerdict::First : SlotVerdict::Second;
      (token == "1" ? saw_one : saw_two) = true;
      if (!first_seen) first_seen = v;
    }
    i = j;
  }
  if (saw_one && saw_two) malformed("both 1 and 2 appear");
  if (!first_seen) malformed("neither 1 nor 2 appears");
  return *first_seen;
}

std::string serialize_difficulty(SlotVerdict verdict) { return verdict == SlotVerdict::First ? "1" : "2"; }

}  // namespace geoforge::prompts
