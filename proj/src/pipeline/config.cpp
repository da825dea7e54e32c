#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "geoforge/digest.hpp"
#include "geoforge/fsutil.hpp"
#include "geoforge/pipeline.hpp"

namespace geoforge::pipeline {
namespace {

[[noreturn]] void bad(const std::string& why) { throw PipelineError(ErrorKind::InvalidConfig, why); }

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

// Value text with an unquoted trailing comment removed and quotes undone.
std::string parse_value(std::string_view raw, int line_no) {
  raw = trim(raw);
  if (!raw.empty() && raw.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < raw.size() && raw[i] != '"'; ++i) {
      if (raw[i] == '\\' && i + 1 < raw.size()) {
        const char next = raw[++i];
        out.push_back(next == 'n' ? '\n' : next == 't' ? '\t' : next);
      } else {
        out.push_back(raw[i]);
      }
    }
    if (i >= raw.size()) bad(fmt::format("line {}: unterminated string", line_no));
    const std::string_view rest = trim(raw.substr(i + 1));
    if (!rest.empty() && rest.front() != '#') bad(fmt::format("line {}: text after closing quote", line_no));
    return out;
  }
  if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = trim(raw.substr(0, hash));
  return std::string(raw);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad(fmt::format("{}: '{}' is not a number", key, value));
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad(fmt::format("{}: expected true or false, got '{}'", key, value));
}

}  // namespace

std::string to_string(Backend backend) { return backend == Backend::BuiltinDsl ? "builtin_dsl" : "external"; }

Backend backend_from_string(const std::string& text) {
  if (text == "builtin_dsl" || text == "builtin") return Backend::BuiltinDsl;
  if (text == "external") return Backend::External;
  bad("unknown backend '" + text + "' (expected builtin_dsl|external)");
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::Qa: return "qa";
    case Stage::Code: return "code";
    case Stage::Render: return "render";
    case Stage::Score: return "score";
  }
  return "qa";
}

Stage stage_from_string(const std::string& text) {
  if (text == "qa") return Stage::Qa;
  if (text == "code") return Stage::Code;
  if (text == "render") return Stage::Render;
  if (text == "score") return Stage::Score;
  bad("unknown stage '" + text + "' (expected qa|code|render|score)");
}

void validate(const PipelineConfig& c) {
  if (c.n_variants < 1) bad("n_variants must be >= 1");
  if (c.k_candidates < 1) bad("k_candidates must be >= 1");
  if (!(c.accept_threshold >= 0.0 && c.accept_threshold <= 1.0)) {
    bad(fmt::format("accept_threshold {} outside [0,1]", c.accept_threshold));
  }
  if (c.concurrency < 1) bad("concurrency must be >= 1");
  if (c.image_width < 1) bad("image_width must be >= 1");
  if (c.render.margin < 0) bad("margin must be >= 0");
  if (!(c.render.stroke_width > 0)) bad("stroke_width must be > 0");
  if (!(c.render.font_size > 0)) bad("font_size must be > 0");
  if (c.models.sampling.temperature < 0) bad("temperature must be >= 0");
  if (c.models.sampling.max_output_tokens < 1) bad("max_output_tokens must be >= 1");
  if (c.backend == Backend::External) {
    if (!c.external) bad("backend = external needs an [executor] table");
    try {
      geoscript::validate(*c.external);
    } catch (const geoscript::GeoScriptError& e) {
      bad(e.what());
    }
  }
}

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig c;
  std::map<std::string, std::string> executor_keys;
  std::string table;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view l = trim(line);
    if (l.empty() || l.front() == '#') continue;
    if (l.front() == '[') {
      if (l.back() != ']') bad(fmt::format("line {}: malformed table header", line_no));
      table = std::string(trim(l.substr(1, l.size() - 2)));
      if (table != "executor") bad(fmt::format("line {}: unknown table [{}]", line_no, table));
      continue;
    }
    const auto eq = l.find('=');
    if (eq == std::string_view::npos) bad(fmt::format("line {}: expected key = value", line_no));
    std::string key(trim(l.substr(0, eq)));
    const std::string value = parse_value(l.substr(eq + 1), line_no);
    if (key.empty()) bad(fmt::format("line {}: empty key", line_no));
    if (!table.empty()) key = table + "." + key;

    if (key.rfind("executor.", 0) == 0) {
      executor_keys[key.substr(9)] = value;
    } else if (key == "n_variants") {
      c.n_variants = parse_number<int>(key, value);
    } else if (key == "k_candidates") {
      c.k_candidates = parse_number<int>(key, value);
    } else if (key == "accept_threshold") {
      c.accept_threshold = parse_number<double>(key, value);
    } else if (key == "backend") {
      c.backend = backend_from_string(value);
    } else if (key == "concurrency") {
      c.concurrency = parse_number<int>(key, value);
    } else if (key == "mode") {
      try {
        c.mode = gateway::mode_from_string(value);
      } catch (const std::exception& e) {
        bad(e.what());
      }
    } else if (key == "checkpoint") {
      c.checkpoint_path = value;
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "dataset_name") {
      c.dataset_name = value;
    } else if (key == "image_width") {
      c.image_width = parse_number<int>(key, value);
    } else if (key == "margin") {
      c.render.margin = parse_number<double>(key, value);
    } else if (key == "stroke_width") {
      c.render.stroke_width = parse_number<double>(key, value);
    } else if (key == "font_size") {
      c.render.font_size = parse_number<double>(key, value);
    } else if (key == "model_vlm") {
      c.models.vision_model = value;
    } else if (key == "model_text") {
      c.models.text_model = value;
    } else if (key == "temperature") {
      c.models.sampling.temperature = parse_number<double>(key, value);
    } else if (key == "max_output_tokens") {
      c.models.sampling.max_output_tokens = parse_number<int>(key, value);
    } else if (key == "reask_malformed_scores") {
      c.reask_malformed_scores = parse_bool(key, value);
    } else {
      bad(fmt::format("line {}: unknown key '{}'", line_no, key));
    }
  }
  if (!executor_keys.empty()) {
    try {
      c.external = geoscript::executor_config_from(executor_keys);
    } catch (const geoscript::GeoScriptError& e) {
      bad(e.what());
    }
  }
  validate(c);
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const std::exception& e) {
    bad("cannot read config " + path.string() + ": " + e.what());
  }
  return parse_config(text);
}

std::string config_digest(const PipelineConfig& c) {
  std::string s = "geoforge.pipeline.v1\n";
  s += fmt::format("n_variants={}\nk_candidates={}\naccept_threshold={}\nbackend={}\nseed={}\n", c.n_variants,
                   c.k_candidates, c.accept_threshold, to_string(c.backend), c.seed);
  s += fmt::format("dataset_name={}\nimage_width={}\nmargin={}\nstroke_width={}\nfont_size={}\n", c.dataset_name,
                   c.image_width, c.render.margin, c.render.stroke_width, c.render.font_size);
  s += fmt::format("model_vlm={}\nmodel_text={}\ntemperature={}\nmax_output_tokens={}\nreask={}\n",
                   c.models.vision_model, c.models.text_model, c.models.sampling.temperature,
                   c.models.sampling.max_output_tokens, c.reask_malformed_scores);
  if (c.external) {
    const auto& e = *c.external;
    s += fmt::format("executor.command={}\nexecutor.expected_output={}\nexecutor.timeout_ms={}\n", e.command,
                     e.expected_output.string(), e.timeout.count());
    s += fmt::format("executor.code_file={}\nexecutor.rewrite_export_path={}\n", e.code_file_name,
                     e.rewrite_export_path);
  }
  return sha256_hex(s);
}

}  // namespace geoforge::pipeline
