// Runs every acceptance criterion once and prints one PASS/FAIL line each.
// Exit status is nonzero when any criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gen.hpp"
#include "json.hpp"
#include "geoforge/analytics.hpp"
#include "geoforge/dataset.hpp"
#include "geoforge/digest.hpp"
#include "geoforge/eval.hpp"
#include "geoforge/executor.hpp"
#include "geoforge/fsutil.hpp"
#include "geoforge/geoscript.hpp"
#include "geoforge/pipeline.hpp"
#include "geoforge/prompts.hpp"
#include "scene_gen.hpp"
#include "support.hpp"

using namespace geoforge;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Collects failed expectations for one criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++count_;
  }
  bool ok() const { return count_ == 0; }
  std::string summary() const {
    std::string s = fmt::format("{} failed:", count_);
    for (const auto& f : failures_) s += " [" + f + "]";
    return s;
  }

 private:
  std::vector<std::string> failures_;
  int count_ = 0;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += "'\\''";
    else out.push_back(c);
  }
  return out + "'";
}

int run_cli(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::string cmd = "env -u GEOFORGE_API_KEY GEOFORGE_API_BASE=http://127.0.0.1:9 " + quote(GEOFORGE_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (pipe == nullptr) throw std::runtime_error("popen failed");
  std::array<char, 4096> buf{};
  std::string text;
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) text.append(buf.data(), n);
  const int status = pclose(pipe);
  if (out != nullptr) *out = text;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Digest over the three pipeline outputs and every written image.
std::string output_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() != ".ckpt") files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.string() + "\n" + sha256_hex(read_file_text(dir / f)) + "\n";
  return sha256_hex(all);
}

fs::path pipeline_fixture() { return testing::fixtures_dir() / "pipeline"; }

std::vector<std::string> run_args(const fs::path& out) {
  return {"run",        "--seeds", (pipeline_fixture() / "seeds.jsonl").string(),
          "--out",      out.string(),
          "--cassette", (pipeline_fixture() / "run.cassette.jsonl").string(),
          "--mode",     "replay",
          "-q"};
}

// 1. Mix arithmetic on synthetic records.
void table_arithmetic(Check& c) {
  const std::pair<const char*, std::int64_t> open_source[] = {
      {"chartqa", 7398}, {"unigeo", 3499}, {"geometry3k", 2101}, {"geoqa_plus", 6026}};
  const std::pair<const char*, std::int64_t> generated[] = {
      {"unigeo_gen", 1810}, {"geometry3k_gen", 1909}, {"geoqa_plus_gen", 1212}};
  const auto start = Clock::now();
  dataset::DatasetManifest manifest;
  dataset::AssemblyInputs inputs;
  for (const auto& [name, count] : open_source) {
    manifest.entries.push_back({name, std::string(name) + ".jsonl", count, dataset::DatasetRole::OpenSource, {}, {}});
    for (std::int64_t i = 0; i < count; ++i) {
      dataset::ProblemRecord p;
      p.id = fmt::format("{}{}", name, i);
      p.question = "q";
      p.answer = "a";
      p.image.path = "images/" + p.id + ".png";
      inputs[name].open_source.push_back(std::move(p));
    }
  }
  for (const auto& [name, count] : generated) {
    manifest.entries.push_back({name, std::string(name) + ".jsonl", count, dataset::DatasetRole::Generated, {}, {}});
    for (std::int64_t i = 0; i < count; ++i) {
      dataset::EnhancedRecord r;
      r.id = fmt::format("{}{}", name, i);
      r.question = "q";
      r.answer = "a";
      r.image.path = "images/" + r.id + ".png";
      r.score = 0.95;
      r.provenance = {"seed", r.id + "_parent", 1, 1};
      inputs[name].enhanced.push_back(std::move(r));
    }
  }
  const auto result = dataset::assemble_mix(manifest, dataset::AssemblyMode::BestScored, inputs);
  c.expect(result.stats.open_source_total == 19024, fmt::format("open-source {}", result.stats.open_source_total));
  c.expect(result.stats.generated_total == 4931, fmt::format("generated {}", result.stats.generated_total));
  c.expect(result.stats.total == 23955, fmt::format("total {}", result.stats.total));
  c.expect(result.records.size() == 23955, "record count");
  c.expect(seconds_since(start) < 1.0, "took over 1 s");
}

// 2. Yield on the replay fixture against an independent count.
void pipeline_yield(Check& c) {
  const auto start = Clock::now();
  const auto cassette = pipeline_fixture() / "run.cassette.jsonl";
  const auto best = testing::best_scores_from_cassette(cassette);
  const auto accepted = std::count_if(best.begin(), best.end(), [](const auto& kv) { return kv.second >= 0.9; });
  auto gw = testing::replay_gateway(cassette);
  const auto result = pipeline::run_pipeline(testing::fixture_seeds(), testing::fixture_config(), *gw);
  const auto& stages = result.report.stages;
  c.expect(result.complete, "run incomplete");
  c.expect(stages.size() >= 3, "stage counts missing");
  if (stages.size() >= 3) {
    c.expect(stages[0].input == 10 && stages[0].output == 30, "qa 10 -> 30");
    c.expect(stages[1].input == 30 && stages[1].output == 90, "code 30 -> 90");
    c.expect(stages[2].input == 90 && stages[2].output == 90, "render 90 -> 90");
  }
  c.expect(result.report.accepted == accepted, fmt::format("accepted {} vs {}", result.report.accepted, accepted));
  const auto kept = [&](const std::string& id) {
    return std::any_of(result.records.begin(), result.records.end(), [&](const auto& r) { return r.id == id; });
  };
  c.expect(best.count("q03/v1") && best.at("q03/v1") == 0.90, "q03/v1 best is 0.90");
  c.expect(best.count("q03/v2") && best.at("q03/v2") == 0.8999, "q03/v2 best is 0.8999");
  c.expect(kept("q03_v1"), "q03_v1 kept");
  c.expect(!kept("q03_v2"), "q03_v2 discarded");
  c.expect(seconds_since(start) < 60.0, "took over 60 s");
}

// 3. Byte-identical CLI reruns, and resume after an early stop.
void determinism(Check& c) {
  testing::TempDir a, b, r;
  c.expect(run_cli(run_args(a / "enhanced.jsonl")) == 0, "first run");
  c.expect(run_cli(run_args(b / "enhanced.jsonl")) == 0, "second run");
  const auto da = output_digest(a.path());
  c.expect(da == output_digest(b.path()), "reruns differ");

  auto staged = run_args(r / "enhanced.jsonl");
  staged.insert(staged.end(), {"--checkpoint", (r / "run.ckpt").string()});
  auto first = staged;
  first.insert(first.end(), {"--stop-after", "code"});
  std::string out;
  c.expect(run_cli(first, &out) == 0, "stopped run");
  c.expect(out.find("stopped after stage code") != std::string::npos, "no stop message");
  c.expect(!fs::exists(r / "enhanced.jsonl"), "stopped run wrote outputs");
  c.expect(run_cli(staged) == 0, "resumed run");
  c.expect(output_digest(r.path()) == da, "resumed run differs from uninterrupted run");
}

std::unique_ptr<gateway::Gateway> live(std::shared_ptr<gateway::Provider> provider) {
  gateway::GatewayOptions options;
  options.mode = gateway::Mode::Live;
  options.retry.max_attempts = 1;
  return std::make_unique<gateway::Gateway>(std::move(provider), std::make_shared<gateway::Cassette>(), options);
}

prompts::JudgeItem judge_item(const std::string& tag) {
  return {"[" + tag + "] question", "answer",
          gateway::Image{{0x89, 'P', 'N', 'G', static_cast<std::uint8_t>(tag.size())}, "image/png"}};
}

// 4. Difficulty protocol.
void difficulty(Check& c) {
  using analytics::DifficultyVerdict;
  // The judge always picks the first slot: a contradiction.
  auto first_slot = live(std::make_shared<testing::ScriptedProvider>([](const gateway::ChatRequest&) { return testing::ok("1"); }));
  c.expect(analytics::judge_pair(judge_item("a"), judge_item("b"), *first_slot, {}).verdict == DifficultyVerdict::Equal,
           "contradiction is not Equal");

  auto judge = live(std::make_shared<testing::ScriptedProvider>([](const gateway::ChatRequest& r) {
    const auto h = std::hash<std::string>{}(r.messages.back().text);
    const char* replies[] = {"1", "2", "2", "1", "no idea"};
    return testing::ok(replies[h % 5]);
  }));
  const auto mirror = [](DifficultyVerdict v) {
    if (v == DifficultyVerdict::Easier) return DifficultyVerdict::Harder;
    if (v == DifficultyVerdict::Harder) return DifficultyVerdict::Easier;
    return v;
  };
  std::mt19937_64 rng(3);
  int asymmetric = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = judge_item(testing::rand_word(rng, 1, 8) + "a");
    const auto b = judge_item(testing::rand_word(rng, 1, 8) + "b");
    const auto ab = analytics::judge_pair(a, b, *judge, {});
    const auto ba = analytics::judge_pair(b, a, *judge, {});
    asymmetric += ba.verdict != mirror(ab.verdict);
  }
  c.expect(asymmetric == 0, fmt::format("{} asymmetric pairs", asymmetric));

  testing::TempDir dir;
  const auto fx = testing::write_difficulty_fixture(dir.path(), 300, 110, 90, 11);
  std::string out;
  c.expect(run_cli({"analyze", "difficulty", "--original", fx.originals.string(), "--generated", fx.generated.string(),
                    "--cassette", fx.cassette.string(), "--n", "500"},
                   &out) == 0,
           "analyze difficulty");
  c.expect(out.find("82.0%") != std::string::npos, "survey does not report 82.0%");
}

// 5. Alignment means.
void alignment(Check& c) {
  const std::pair<const char*, double> corpora[] = {{"enhanced", 0.9636}, {"no-filter", 0.7276}, {"g-llava", 0.6754}};
  testing::TempDir dir;
  for (const auto& [name, mean] : corpora) {
    const auto corpus = testing::write_alignment_fixture(dir.path(), name, 500, mean, 21);
    const auto items = analytics::alignment_items_from(dataset::read_problems(corpus), dir.path());
    auto gw = testing::replay_gateway(dir / (std::string(name) + ".cassette.jsonl"));
    const auto r = analytics::alignment_survey(items, *gw, {}, name);
    c.expect(std::abs(r.mean - mean) <= 0.0001, fmt::format("{} mean {:.6f}", name, r.mean));
  }
}

// 6. GeoScript properties.
void geoscript_suite(Check& c) {
  using namespace geoscript;
  const auto start = Clock::now();
  testing::SceneGen gen(2024);
  for (int i = 0; i < 10000; ++i) {
    const auto p = gen.program(12);
    const std::string text = print_scene(p);
    const auto back = parse_scene(text);
    c.expect(back == p && print_scene(back) == text, "round trip: " + text);
  }

  std::mt19937_64 rng(5);
  testing::SceneGen mutate(6);
  for (int i = 0; i < 10000; ++i) {
    std::string input;
    if (i % 2 == 0) {
      const int n = i % 97 == 0 ? 64 * 1024 : testing::rand_int(rng, 0, 256);
      for (int j = 0; j < n; ++j) input.push_back(static_cast<char>(rng() & 0xff));
    } else {
      input = print_scene(mutate.program(10));
      const auto at = uniform_index(rng, input.size());
      input[at] = static_cast<char>(rng() & 0xff);
    }
    try {
      parse_scene(input);
    } catch (const GeoScriptError& e) {
      c.expect(e.line() >= 1, "error without a line");
    } catch (const std::exception& e) {
      c.expect(false, std::string("unstructured error: ") + e.what());
    }
  }

  for (int i = 0; i < 1000; ++i) {
    std::string text;
    const int n = testing::rand_int(rng, 2, 12);
    for (int k = 0; k < n; ++k) {
      text += fmt::format("point P{} = ({}, {})\n", k, testing::rand_int(rng, -2000, 2000) / 100.0,
                          testing::rand_int(rng, -2000, 2000) / 100.0);
    }
    const auto p = parse_scene(text);
    RenderOptions o;
    o.margin = testing::rand_int(rng, 0, 200) / 100.0;
    o.force_unit_viewbox = true;
    const auto box = testing::svg_viewbox(render_svg(p, o));
    const double flip = 2 * box.min_y + box.height;
    for (const auto& [name, pt] : p.points) {
      const double sy = flip - pt.y;
      c.expect(pt.x >= box.min_x - 1e-6 && pt.x <= box.min_x + box.width + 1e-6 && sy >= box.min_y - 1e-6 &&
                   sy <= box.min_y + box.height + 1e-6,
               "point outside viewBox: " + name);
    }
  }

  for (int i = 0; i < 1000; ++i) {
    const int n = testing::rand_int(rng, 3, 8);
    std::vector<Point> declared;
    std::string text;
    do {
      declared.clear();
      text.clear();
      for (int k = 0; k < n; ++k) {
        const Point pt{testing::rand_int(rng, -1000, 1000) / 100.0, testing::rand_int(rng, -1000, 1000) / 100.0};
        declared.push_back(pt);
        text += fmt::format("point V{} = ({}, {})\n", k, pt.x, pt.y);
      }
    } while (testing::shoelace(declared) == 0.0);
    text += "polygon";
    for (int k = 0; k < n; ++k) text += " V" + std::to_string(k);
    const auto emitted = testing::svg_polygon_points(render_svg(parse_scene(text)));
    c.expect(emitted.size() == declared.size() && (testing::shoelace(emitted) > 0) == (testing::shoelace(declared) > 0),
             "orientation flipped");
  }

  const auto svg = render_svg(parse_scene("point A=(0,0)\npoint B=(4,0)\npoint C=(0,3)\npolygon A B C"));
  c.expect(svg == read_file_text(testing::fixtures_dir() / "geoscript" / "triangle.svg"), "golden SVG differs");
  c.expect(svg.find("viewBox=\"-1 -1 6 5\"") != std::string::npos, "golden viewBox");
  c.expect(seconds_since(start) < 30.0, "took over 30 s");
}

// 7. External executor behaviours, each leaving the working dir empty.
void executor(Check& c) {
  using namespace geoscript;
  const std::string ok_png = (testing::fixtures_dir() / "executor" / "ok.png").string();
  testing::TempDir dir;
  auto config = [&](std::string command) {
    ExternalExecutorConfig e;
    e.command = std::move(command);
    e.working_dir = dir.path();
    e.timeout = std::chrono::seconds(10);
    return e;
  };
  auto kind = [](const std::function<void()>& f) -> std::optional<ErrorKind> {
    try {
      f();
    } catch (const GeoScriptError& e) {
      return e.kind();
    }
    return std::nullopt;
  };

  c.expect(execute_external("", config("cp '" + ok_png + "' {out}")) == read_file_bytes(ok_png), "success bytes");
  c.expect(fs::is_empty(dir.path()), "success left files");

  auto hung = config("sleep 3600");
  hung.timeout = std::chrono::seconds(2);
  const auto start = Clock::now();
  c.expect(kind([&] { execute_external("", hung); }) == ErrorKind::Timeout, "no Timeout");
  const double secs = seconds_since(start);
  c.expect(std::abs(secs - 2.0) <= 0.5, fmt::format("timeout after {:.2f} s", secs));
  c.expect(fs::is_empty(dir.path()), "timeout left files");

  c.expect(kind([&] { execute_external("", config("echo boom >&2; exit 1")); }) == ErrorKind::NonZeroExit,
           "no NonZeroExit");
  c.expect(fs::is_empty(dir.path()), "failure left files");

  c.expect(kind([&] { execute_external("", config("true")); }) == ErrorKind::MissingOutput, "no MissingOutput");
  c.expect(fs::is_empty(dir.path()), "missing output left files");
}

// 8. Prompt templates and parser round trips.
void prompt_kit(Check& c) {
  using namespace prompts;
  std::map<std::string, std::string> pinned;
  std::istringstream in(read_file_text(testing::source_dir() / "prompts" / "checksums.txt"));
  std::string digest, name;
  while (in >> digest >> name) pinned[name] = digest;
  for (auto kind : {PromptKind::QaGeneration, PromptKind::CodeGeneration, PromptKind::ImageScoring,
                    PromptKind::DifficultyJudge}) {
    const std::string file(template_file(kind));
    c.expect(pinned.count(file) && sha256_hex(std::string(template_text(kind))) == pinned.at(file), "checksum " + file);
  }
  const std::pair<PromptKind, const char*> phrases[] = {
      {PromptKind::QaGeneration, "Come up with three diverse questions and answers."},
      {PromptKind::CodeGeneration, "Only use the ``Export'' command"},
      {PromptKind::ImageScoring, "The score is a decimal between 0 and 1."},
      {PromptKind::DifficultyJudge, "You can only output the number"}};
  for (const auto& [kind, phrase] : phrases) {
    c.expect(std::string(template_text(kind)).find(phrase) != std::string::npos, phrase);
  }

  std::mt19937_64 rng(99);
  for (int i = 0; i < 500; ++i) {
    std::vector<QaTriple> triples(static_cast<std::size_t>(testing::rand_int(rng, 1, 3)));
    for (auto& t : triples) t = {testing::rand_payload(rng, 60), testing::rand_payload(rng, 15), testing::rand_payload(rng, 60)};
    c.expect(parse_qa(serialize_qa(triples)) == triples, "qa round trip");

    const std::string program = testing::rand_payload(rng, 120);
    c.expect(parse_code(serialize_code(program, i % 2 == 0)) == program, "code round trip");

    const ScoreReply reply{testing::rand_payload(rng, 50), testing::rand_int(rng, 0, 100) / 100.0};
    const auto back = parse_score(serialize_score(reply));
    c.expect(back.reason == reply.reason && back.score == reply.score, "score round trip");

    const auto v = rng() % 2 ? SlotVerdict::First : SlotVerdict::Second;
    c.expect(parse_difficulty(serialize_difficulty(v)) == v, "difficulty round trip");
  }
}

// 9. Grading fixture against its hand labels.
void grading(Check& c) {
  const fs::path dir = testing::fixtures_dir() / "grading";
  const auto items = eval::read_items(dir / "items.jsonl");
  const auto outputs = eval::read_outputs(dir / "outputs.jsonl");
  std::ifstream labels(dir / "labels.jsonl");
  std::map<std::string, nlohmann::json> by_id;
  std::string line;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    by_id[j.at("id").get<std::string>()] = j;
  }
  c.expect(items.size() == 50 && by_id.size() == 50, "corpus size");
  std::size_t matched = 0;
  for (const auto& item : items) {
    const auto it = by_id.find(item.id);
    if (it == by_id.end()) continue;
    const auto e = eval::extract_answer(outputs.at(item.id), item);
    const auto& l = it->second;
    const std::optional<std::string> label =
        l.at("extracted").is_null() ? std::nullopt : std::optional<std::string>(l.at("extracted").get<std::string>());
    if (e.extracted == label && e.matched_rule == l.at("rule").get<std::string>() &&
        eval::grade_item(e.extracted, item) == l.at("correct").get<bool>()) {
      ++matched;
    }
  }
  c.expect(matched == 50, fmt::format("{} of 50 match", matched));
  c.expect(eval::average_of_rounded({"20.67", "20.92"}) == "20.80", "average of 20.67 and 20.92");
}

}  // namespace

int main() {
  const auto start = Clock::now();
  spdlog::set_level(spdlog::level::off);
  // Nothing below may reach a model endpoint.
  unsetenv("GEOFORGE_API_KEY");
  setenv("GEOFORGE_API_BASE", "http://127.0.0.1:9", 1);

  const std::pair<const char*, std::function<void(Check&)>> criteria[] = {
      {"mix arithmetic 19024 + 4931 = 23955", table_arithmetic},
      {"pipeline yield on the replay fixture", pipeline_yield},
      {"determinism and resume", determinism},
      {"difficulty protocol", difficulty},
      {"alignment means", alignment},
      {"geoscript properties", geoscript_suite},
      {"external executor", executor},
      {"prompt templates and parsers", prompt_kit},
      {"grading fixture", grading},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Check c;
    const auto t0 = Clock::now();
    try {
      fn(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("threw: ") + e.what());
    }
    const double secs = seconds_since(t0);
    failed += !c.ok();
    std::cout << fmt::format("criterion {}: {} ({:.1f}s) {}{}", n, c.ok() ? "PASS" : "FAIL", secs, name,
                             c.ok() ? "" : " -- " + c.summary())
              << std::endl;
  }
  const double total = seconds_since(start);
  const bool fast = total < 300.0;
  failed += !fast;
  std::cout << fmt::format("criterion 10: {} ({:.1f}s) whole suite under 5 min, offline", fast ? "PASS" : "FAIL", total)
            << std::endl;
  return failed == 0 ? 0 : 1;
}
