#include "geoforge/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geoforge/parallel.hpp"
#include "json.hpp"

namespace geoforge::eval {
using json = nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r\n") - first + 1);
}

std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

// "C", "(C)", "C.", "C)" or "(C) some text" -> "C" when C is one of the
// item's letters.
std::optional<std::string> as_choice_letter(std::string_view text, const BenchmarkItem& item) {
  std::string_view t = trim(text);
  if (!t.empty() && (t.front() == '(' || t.front() == '[')) t.remove_prefix(1);
  if (t.empty()) return std::nullopt;
  const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(t.front())));
  if (t.size() > 1) {
    const char next = t[1];
    if (std::isalnum(static_cast<unsigned char>(next))) return std::nullopt;
  }
  for (const auto& choice : item.choices) {
    if (upper(choice.letter) == std::string(1, c)) return std::string(1, c);
  }
  return std::nullopt;
}

using Rule = std::optional<std::string> (*)(std::string_view, const BenchmarkItem&);

template <typename Fn>
std::optional<std::string> last_match(std::string_view text, const std::regex& re, Fn&& accept) {
  std::optional<std::string> found;
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re); it != std::sregex_iterator(); ++it) {
    if (auto v = accept((*it)[1].str())) found = v;
  }
  return found;
}

std::optional<std::string> rule_answer_is_letter(std::string_view text, const BenchmarkItem& item) {
  if (item.choices.empty()) return std::nullopt;
  static const std::regex re(R"(answer\s+(?:is|should\s+be)\s*:?\s*(\(?[A-Za-z]\)?)(?![A-Za-z0-9]))", std::regex::icase);
  return last_match(text, re, [&](const std::string& m) { return as_choice_letter(m, item); });
}

std::optional<std::string> rule_answer_line(std::string_view text, const BenchmarkItem& item) {
  static const std::regex re(R"((?:^|\n)[ \t*]*(?:final\s+)?answer\s*[:：][ \t*]*([^\n]*))", std::regex::icase);
  return last_match(text, re, [&](const std::string& m) -> std::optional<std::string> {
    std::string v(trim(m));
    while (!v.empty() && v.back() == '*') v.pop_back();
    if (item.choices.empty()) {
      std::string n = normalize_answer(v);
      if (n.empty()) return std::nullopt;
      return n;
    }
    return as_choice_letter(v, item);
  });
}

std::optional<std::string> rule_boxed(std::string_view text, const BenchmarkItem& item) {
  static const std::regex re(R"(\\boxed\{([^{}]*)\})");
  return last_match(text, re, [&](const std::string& m) -> std::optional<std::string> {
    if (item.choices.empty()) {
      std::string n = normalize_answer(m);
      if (n.empty()) return std::nullopt;
      return n;
    }
    return as_choice_letter(m, item);
  });
}

std::optional<std::string> rule_lone_letter(std::string_view text, const BenchmarkItem& item) {
  if (item.choices.empty()) return std::nullopt;
  std::string_view t = trim(text);
  while (!t.empty() && t.back() == '.') t.remove_suffix(1);
  if (t.size() > 3) return std::nullopt;
  return as_choice_letter(t, item);
}

std::optional<std::string> rule_answer_is_value(std::string_view text, const BenchmarkItem& item) {
  if (!item.choices.empty()) return std::nullopt;
  static const std::regex re(R"(answer\s+is\s*:?\s*([^\n]+?)\s*(?:\.\s|\.$|$|\n))", std::regex::icase);
  return last_match(text, re, [](const std::string& m) -> std::optional<std::string> {
    std::string n = normalize_answer(m);
    if (n.empty()) return std::nullopt;
    return n;
  });
}

const std::regex& number_regex() {
  static const std::regex re(R"((?:^|[^\w.])(-?\d+(?:\.\d+)?(?:\s*/\s*\d+(?:\.\d+)?)?))");
  return re;
}

std::optional<std::string> rule_last_number(std::string_view text, const BenchmarkItem& item) {
  if (!item.choices.empty()) return std::nullopt;
  return last_match(text, number_regex(), [](const std::string& m) -> std::optional<std::string> {
    std::string out;
    for (char c : m) {
      if (c != ' ' && c != '\t') out.push_back(c);
    }
    return out;
  });
}

// Multiple choice: the last number in the output equals exactly one choice.
std::optional<std::string> rule_number_matches_choice(std::string_view text, const BenchmarkItem& item) {
  if (item.choices.empty()) return std::nullopt;
  const auto number = last_match(text, number_regex(), [](const std::string& m) { return std::optional<std::string>(m); });
  if (!number) return std::nullopt;
  const auto value = parse_numeric(*number);
  if (!value) return std::nullopt;
  std::optional<std::string> hit;
  for (const auto& c : item.choices) {
    const auto cv = parse_numeric(c.text);
    if (cv && std::abs(*cv - *value) <= 1e-6 * std::max(1.0, std::abs(*cv))) {
      if (hit) return std::nullopt;
      hit = upper(c.letter);
    }
  }
  return hit;
}

struct NamedRule {
  const char* id;
  Rule fn;
};

const std::vector<NamedRule>& rules() {
  static const std::vector<NamedRule> r = {
      {"answer-is-letter", rule_answer_is_letter},
      {"answer-line", rule_answer_line},
      {"boxed", rule_boxed},
      {"lone-letter", rule_lone_letter},
      {"answer-is-value", rule_answer_is_value},
      {"last-number", rule_last_number},
      {"number-matches-choice", rule_number_matches_choice},
  };
  return r;
}

// Round-half-up of num/den for non-negative integers.
std::int64_t div_round(std::int64_t num, std::int64_t den) { return (2 * num + den) / (2 * den); }

std::string hundredths_text(std::int64_t h) { return fmt::format("{}.{:02d}", h / 100, h % 100); }

}  // namespace

std::string to_string(Method m) { return m == Method::Pattern ? "pattern" : "model"; }

Method method_from_string(const std::string& text) {
  if (text == "pattern") return Method::Pattern;
  if (text == "model" || text == "model_assisted") return Method::ModelAssisted;
  throw EvalError(ErrorKind::MalformedInput, "unknown method '" + text + "' (expected pattern|model)");
}

const std::vector<std::string>& pattern_rule_ids() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> out;
    for (const auto& r : rules()) out.emplace_back(r.id);
    return out;
  }();
  return ids;
}

ExtractionOutcome extract_answer(std::string_view output, const BenchmarkItem& item) {
  for (const auto& r : rules()) {
    if (auto v = r.fn(output, item)) return {std::move(v), Method::Pattern, r.id};
  }
  return {std::nullopt, Method::Pattern, {}};
}

gateway::ChatRequest extraction_request(std::string_view output, const BenchmarkItem& item,
                                        const prompts::ModelRoles& models) {
  gateway::ChatRequest req;
  req.model_id = models.text_model;
  req.sampling = models.sampling;
  req.messages.push_back(
      {gateway::Role::System,
       "You extract the final answer from a model's response to a math question. Reply with the answer only, on a "
       "single line. For multiple-choice questions reply with the option letter. If the response gives no final "
       "answer, reply NONE.",
       {}});
  std::string user = "Question: " + item.question + "\n";
  if (!item.choices.empty()) {
    user += "Choices:\n";
    for (const auto& c : item.choices) user += fmt::format("({}) {}\n", c.letter, c.text);
  }
  user += "\nModel response:\n" + std::string(output);
  req.messages.push_back({gateway::Role::User, std::move(user), {}});
  return req;
}

ExtractionOutcome extract_answer_model(std::string_view output, const BenchmarkItem& item, gateway::Gateway& gateway,
                                       const prompts::ModelRoles& models) {
  const auto response = gateway.complete(extraction_request(output, item, models));
  std::string_view text = trim(response.text);
  text = text.substr(0, text.find('\n'));
  text = trim(text);
  ExtractionOutcome out{std::nullopt, Method::ModelAssisted, "model-assisted"};
  if (text.empty() || upper(std::string(text)) == "NONE") return out;
  if (!item.choices.empty()) {
    out.extracted = as_choice_letter(text, item);
  } else {
    out.extracted = normalize_answer(text);
  }
  return out;
}

std::string normalize_answer(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : trim(text)) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      space = true;
      continue;
    }
    if (space && !out.empty()) out.push_back(' ');
    space = false;
    out.push_back(c);
  }
  if (!out.empty() && out.back() == '.') out.pop_back();
  return out;
}

std::optional<double> parse_numeric(std::string_view text) {
  std::string t = normalize_answer(text);
  if (t.size() >= 2 && t.compare(t.size() - 2, 2, "\xC2\xB0") == 0) t.resize(t.size() - 2);
  std::string_view v = trim(t);
  if (v.empty()) return std::nullopt;
  auto number = [](std::string_view s) -> std::optional<double> {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double d = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), d, std::chars_format::fixed);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(d)) return std::nullopt;
    return d;
  };
  if (const auto slash = v.find('/'); slash != std::string_view::npos) {
    const auto num = number(v.substr(0, slash));
    const auto den = number(v.substr(slash + 1));
    if (!num || !den || *den == 0.0) return std::nullopt;
    return *num / *den;
  }
  return number(v);
}

bool grade_item(const std::optional<std::string>& extracted, const BenchmarkItem& item) {
  if (!extracted) return false;
  if (!item.choices.empty()) {
    const auto letter = as_choice_letter(normalize_answer(*extracted), item);
    return letter && *letter == upper(normalize_answer(item.gold_answer));
  }
  const auto a = parse_numeric(*extracted);
  const auto b = parse_numeric(item.gold_answer);
  if (a && b) {
    const double scale = std::max(std::abs(*a), std::abs(*b));
    return std::abs(*a - *b) <= 1e-6 * scale;
  }
  return normalize_answer(*extracted) == normalize_answer(item.gold_answer);
}

std::string percent_2dp(std::int64_t correct, std::int64_t total) {
  if (total <= 0) return "0.00";
  return hundredths_text(div_round(correct * 10000, total));
}

std::string average_of_rounded(const std::vector<std::string>& values) {
  if (values.empty()) return "0.00";
  std::int64_t sum = 0;
  for (const auto& v : values) {
    const auto parsed = parse_numeric(v);
    if (!parsed || *parsed < 0) throw EvalError(ErrorKind::MalformedInput, "not a non-negative accuracy: '" + v + "'");
    sum += std::llround(*parsed * 100.0);
  }
  return hundredths_text(div_round(sum, static_cast<std::int64_t>(values.size())));
}

GradeReport accuracy_report(const std::vector<BenchmarkItem>& items, const std::map<std::string, std::string>& outputs,
                            Method method, gateway::Gateway* gateway, const prompts::ModelRoles& models,
                            int concurrency) {
  for (const auto& item : items) {
    if (!outputs.count(item.id)) throw EvalError(ErrorKind::MissingOutput, "no output for item '" + item.id + "'");
  }
  if (method == Method::ModelAssisted && gateway == nullptr) {
    throw EvalError(ErrorKind::MalformedInput, "model-assisted extraction needs a gateway");
  }
  GradeReport report;
  report.items.resize(items.size());
  parallel_for(items.size(), static_cast<std::size_t>(std::max(1, concurrency)), [&](std::size_t i) {
    const auto& item = items[i];
    const std::string& output = outputs.at(item.id);
    GradedItem g{item.id, {}, false};
    g.extraction = method == Method::Pattern ? extract_answer(output, item)
                                             : extract_answer_model(output, item, *gateway, models);
    g.correct = grade_item(g.extraction.extracted, item);
    report.items[i] = std::move(g);
  });

  std::map<std::string, TaskAccuracy> tasks;
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& t = tasks[items[i].task_tag];
    t.task = items[i].task_tag;
    ++t.total;
    if (report.items[i].correct) ++t.correct;
  }
  double sum = 0.0;
  for (auto& [name, t] : tasks) {
    t.accuracy = 100.0 * static_cast<double>(t.correct) / static_cast<double>(t.total);
    sum += t.accuracy;
    report.correct += t.correct;
    report.total += t.total;
    report.tasks.push_back(t);
  }
  report.overall = report.total ? 100.0 * static_cast<double>(report.correct) / static_cast<double>(report.total) : 0.0;
  report.avg = report.tasks.empty() ? 0.0 : sum / static_cast<double>(report.tasks.size());
  return report;
}

namespace {
std::string avg_text(const GradeReport& r) {
  std::vector<std::string> shown;
  for (const auto& t : r.tasks) shown.push_back(percent_2dp(t.correct, t.total));
  return average_of_rounded(shown);
}
}  // namespace

std::string report_to_json_lines(const GradeReport& r) {
  std::string out;
  for (const auto& t : r.tasks) {
    json j = {{"task", t.task}, {"correct", t.correct}, {"total", t.total}, {"accuracy", percent_2dp(t.correct, t.total)}};
    out += j.dump() + "\n";
  }
  json summary = {{"summary",
                   {{"correct", r.correct},
                    {"total", r.total},
                    {"overall", percent_2dp(r.correct, r.total)},
                    {"avg", avg_text(r)},
                    {"rule_set", std::string(k_rule_set_version)}}}};
  out += summary.dump() + "\n";
  return out;
}

std::string report_table(const GradeReport& r) {
  std::string out = fmt::format("{:<12} {:>8} {:>8} {:>9}\n", "task", "correct", "total", "accuracy");
  for (const auto& t : r.tasks) {
    out += fmt::format("{:<12} {:>8} {:>8} {:>9}\n", t.task, t.correct, t.total, percent_2dp(t.correct, t.total));
  }
  out += fmt::format("{:<12} {:>8} {:>8} {:>9}\n", "ALL", r.correct, r.total, percent_2dp(r.correct, r.total));
  out += fmt::format("{:<12} {:>8} {:>8} {:>9}\n", "AVG", "", "", avg_text(r));
  return out;
}

namespace {

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvalError(ErrorKind::MalformedInput, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      fn(json::parse(line));
    } catch (const EvalError&) {
      throw;
    } catch (const std::exception& e) {
      throw EvalError(ErrorKind::MalformedInput, fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
}

}  // namespace

std::vector<BenchmarkItem> read_items(const std::filesystem::path& path) {
  std::vector<BenchmarkItem> items;
  std::set<std::string> seen;
  for_each_json_line(path, [&](const json& j) {
    BenchmarkItem item;
    item.id = j.at("id").get<std::string>();
    item.question = j.value("question", std::string{});
    if (j.contains("choices") && !j.at("choices").is_null()) {
      for (const auto& c : j.at("choices")) item.choices.push_back({c.at("letter").get<std::string>(), c.at("text").get<std::string>()});
    }
    item.gold_answer = j.at("answer").get<std::string>();
    item.task_tag = j.value("task", std::string{"all"});
    if (!item.choices.empty()) {
      const bool ok = std::any_of(item.choices.begin(), item.choices.end(),
                                  [&](const Choice& c) { return upper(c.letter) == upper(item.gold_answer); });
      if (!ok) throw EvalError(ErrorKind::MalformedInput, "item '" + item.id + "': gold answer is not a choice letter");
    }
    if (!seen.insert(item.id).second) throw EvalError(ErrorKind::MalformedInput, "duplicate item id '" + item.id + "'");
    items.push_back(std::move(item));
  });
  return items;
}

std::map<std::string, std::string> read_outputs(const std::filesystem::path& path) {
  std::map<std::string, std::string> out;
  for_each_json_line(path, [&](const json& j) {
    const auto id = j.at("id").get<std::string>();
    if (!out.emplace(id, j.at("output").get<std::string>()).second) {
      throw EvalError(ErrorKind::MalformedInput, "duplicate output for '" + id + "'");
    }
  });
  return out;
}

}  // namespace geoforge::eval
