#include <filesystem>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geoforge/fsutil.hpp"
#include "geoforge/pipeline.hpp"
#include "json.hpp"

namespace geoforge::pipeline {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json key_json(const CandidateKey& k) {
  return {{"parent_id", k.parent_id}, {"variant_index", k.variant_index}, {"candidate_index", k.candidate_index}};
}

CandidateKey key_from(const json& j) {
  return {j.at("parent_id").get<std::string>(), j.at("variant_index").get<int>(), j.at("candidate_index").get<int>()};
}

json state_json(const RunState& s) {
  json qa = json::object();
  for (const auto& [id, o] : s.qa) {
    json blocks = json::array();
    for (const auto& b : o.blocks) {
      blocks.push_back({{"question", b.question}, {"answer", b.answer}, {"image_description", b.image_description}});
    }
    qa[id] = {{"blocks", blocks}, {"error", o.error}};
  }
  json code = json::array();
  for (const auto& [k, o] : s.code) {
    json j = key_json(k);
    j["program"] = o.program ? json(*o.program) : json(nullptr);
    j["error"] = o.error;
    code.push_back(j);
  }
  json render = json::array();
  for (const auto& [k, c] : s.render) {
    json j = key_json(k);
    j["program"] = c.program_text;
    if (const auto* r = std::get_if<dataset::Rendered>(&c.outcome)) {
      j["status"] = "rendered";
      j["format"] = r->format;
      j["bytes_base64"] = base64_encode(r->bytes);
    } else {
      j["status"] = "failed";
      j["diagnostic"] = std::get<dataset::Failed>(c.outcome).diagnostic;
    }
    render.push_back(j);
  }
  json score = json::array();
  for (const auto& [k, o] : s.score) {
    json j = key_json(k);
    j["score"] = o.score;
    j["reason"] = o.reason;
    j["parse_failed"] = o.parse_failed;
    j["judged"] = o.judged;
    score.push_back(j);
  }
  json completed = json::array();
  for (Stage st : s.completed) completed.push_back(to_string(st));
  return {{"qa", qa}, {"code", code}, {"render", render}, {"score", score}, {"completed", completed}};
}

RunState state_from(const json& j) {
  RunState s;
  for (const auto& [id, o] : j.at("qa").items()) {
    QaOutcome q;
    for (const auto& b : o.at("blocks")) {
      q.blocks.push_back({b.at("question").get<std::string>(), b.at("answer").get<std::string>(),
                          b.at("image_description").get<std::string>()});
    }
    q.error = o.at("error").get<std::string>();
    s.qa[id] = std::move(q);
  }
  for (const auto& c : j.at("code")) {
    CodeOutcome o;
    if (!c.at("program").is_null()) o.program = c.at("program").get<std::string>();
    o.error = c.at("error").get<std::string>();
    s.code[key_from(c)] = std::move(o);
  }
  for (const auto& r : j.at("render")) {
    const CandidateKey k = key_from(r);
    dataset::ImageCandidate c;
    c.parent = k.variant();
    c.candidate_index = k.candidate_index;
    c.program_text = r.at("program").get<std::string>();
    if (r.at("status").get<std::string>() == "rendered") {
      c.outcome = dataset::Rendered{base64_decode(r.at("bytes_base64").get<std::string>()), r.at("format").get<std::string>()};
    } else {
      c.outcome = dataset::Failed{r.at("diagnostic").get<std::string>()};
    }
    s.render[k] = std::move(c);
  }
  for (const auto& o : j.at("score")) {
    s.score[key_from(o)] = {o.at("score").get<double>(), o.at("reason").get<std::string>(),
                            o.at("parse_failed").get<bool>(), o.at("judged").get<bool>()};
  }
  for (const auto& st : j.at("completed")) s.completed.insert(stage_from_string(st.get<std::string>()));
  return s;
}

// Ties a checkpoint to both the config and the exact seed list.
std::string run_digest(const PipelineConfig& config, const std::vector<dataset::ProblemRecord>& seeds) {
  Sha256 h;
  h.update(as_bytes(config_digest(config)));
  for (const auto& s : seeds) {
    const std::string part = fmt::format("\n{}\n{}\n{}\n{}\n{}\n", s.id.size(), s.id, s.question, s.answer,
                                         s.image.bytes ? sha256_hex(*s.image.bytes) : std::string{});
    h.update(as_bytes(part));
  }
  return h.hex_digest();
}

}  // namespace

void save_checkpoint(const fs::path& path, const std::string& digest, const RunState& state) {
  json j = {{"version", 1}, {"digest", digest}, {"state", state_json(state)}};
  try {
    write_file_atomic(path, j.dump() + "\n");
  } catch (const std::exception& e) {
    throw PipelineError(ErrorKind::CheckpointIo, "cannot write checkpoint " + path.string() + ": " + e.what());
  }
}

std::optional<RunState> load_checkpoint(const fs::path& path, const std::string& digest) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  json j;
  try {
    j = json::parse(read_file_text(path));
  } catch (const std::exception& e) {
    throw PipelineError(ErrorKind::CheckpointIo, "cannot read checkpoint " + path.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("digest", std::string{}) != digest) {
    throw PipelineError(ErrorKind::ConfigMismatchOnResume,
                        "checkpoint " + path.string() + " was written for a different config or seed list");
  }
  try {
    return state_from(j.at("state"));
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(ErrorKind::CheckpointIo, "corrupt checkpoint " + path.string() + ": " + e.what());
  }
}

void load_seed_images(std::vector<dataset::ProblemRecord>& seeds, const fs::path& base_dir) {
  for (auto& s : seeds) {
    if (s.image.bytes && !s.image.bytes->empty()) continue;
    if (s.image.path.empty()) throw PipelineError(ErrorKind::MissingImage, "seed '" + s.id + "' has no image path");
    const fs::path p = fs::path(s.image.path).is_absolute() ? fs::path(s.image.path) : base_dir / s.image.path;
    try {
      s.image.bytes = read_file_bytes(p);
    } catch (const std::exception& e) {
      throw PipelineError(ErrorKind::MissingImage, "seed '" + s.id + "': cannot read image " + p.string());
    }
    if (s.image.bytes->empty()) throw PipelineError(ErrorKind::MissingImage, "seed '" + s.id + "': image is empty");
  }
}

RunResult run_pipeline(const std::vector<dataset::ProblemRecord>& seeds, const PipelineConfig& config,
                       gateway::Gateway& gateway, const RunOptions& options,
                       std::shared_ptr<geoscript::ExternalExecutor> executor) {
  validate(config);
  const auto started = std::chrono::steady_clock::now();
  const std::string digest = run_digest(config, seeds);

  RunState state;
  if (!config.checkpoint_path.empty()) {
    if (auto loaded = load_checkpoint(config.checkpoint_path, digest)) {
      state = std::move(*loaded);
      spdlog::info("resuming from {} ({} stage(s) complete)", config.checkpoint_path.string(), state.completed.size());
    }
  }
  if (config.backend == Backend::External && !executor) {
    executor = std::make_shared<geoscript::ExternalExecutor>(*config.external, config.concurrency);
  }

  std::mutex state_mutex;
  StageContext ctx{config, gateway, executor.get(), state, state_mutex};
  auto flush = [&] {
    if (config.checkpoint_path.empty()) return;
    std::lock_guard lock(state_mutex);
    save_checkpoint(config.checkpoint_path, digest, state);
  };
  auto finish_stage = [&](Stage stage) {
    {
      std::lock_guard lock(state_mutex);
      state.completed.insert(stage);
    }
    flush();
    return options.stop_after == stage;
  };

  RunResult result;
  PipelineReport& report = result.report;
  std::vector<dataset::GeneratedProblem> variants;
  std::vector<ProgramSet> programs;
  std::vector<dataset::ImageCandidate> candidates;
  std::vector<dataset::ScoredCandidate> scored;
  try {
    variants = stage_generate_qa(seeds, ctx);
    spdlog::info("stage qa: {} seeds -> {} variants", seeds.size(), variants.size());
    if (finish_stage(Stage::Qa)) return result;
    programs = stage_generate_code(variants, ctx);
    if (finish_stage(Stage::Code)) return result;
    candidates = stage_render(programs, ctx);
    spdlog::info("stage render: {} candidates", candidates.size());
    if (finish_stage(Stage::Render)) return result;
    scored = stage_score(candidates, variants, ctx);
    if (finish_stage(Stage::Score)) return result;
  } catch (...) {
    try {
      flush();
    } catch (const std::exception& e) {
      spdlog::error("checkpoint flush after failure also failed: {}", e.what());
    }
    throw;
  }

  std::map<std::string, std::string> parent_sources;
  for (const auto& s : seeds) parent_sources[s.id] = s.source_dataset;
  Selection selection = select_and_filter(scored, variants, parent_sources, config, options.images_dir);

  // Counters are derived from stored results so resumed runs report the same
  // numbers as uninterrupted ones.
  for (const auto& s : seeds) {
    const auto& q = state.qa.at(s.id);
    if (q.blocks.empty()) ++report.qa_parse_failures;
    else if (q.blocks.size() < static_cast<std::size_t>(config.n_variants)) ++report.qa_partial_warnings;
  }
  std::int64_t program_count = 0;
  for (const auto& set : programs) {
    program_count += static_cast<std::int64_t>(set.programs.size());
    report.code_parse_failures += config.k_candidates - static_cast<std::int64_t>(set.programs.size());
  }
  for (const auto& c : candidates) {
    if (!c.rendered()) ++report.render_failures;
  }
  for (const auto& c : candidates) {
    if (state.score.at({c.parent.parent_id, c.parent.variant_index, c.candidate_index}).parse_failed) {
      ++report.score_parse_failures;
    }
  }
  report.reached_selection = static_cast<std::int64_t>(variants.size());
  report.accepted = static_cast<std::int64_t>(selection.accepted.size());
  report.discarded_by_threshold = static_cast<std::int64_t>(selection.discarded.size());
  const auto n_seeds = static_cast<std::int64_t>(seeds.size());
  const auto n_variants = static_cast<std::int64_t>(variants.size());
  const auto n_candidates = static_cast<std::int64_t>(candidates.size());
  report.stages = {
      {"qa", n_seeds, n_variants, report.qa_parse_failures},
      {"code", n_variants, program_count, report.code_parse_failures},
      {"render", program_count, n_candidates, report.render_failures},
      {"score", n_candidates, static_cast<std::int64_t>(scored.size()), report.score_parse_failures},
      {"select", n_variants, report.accepted, report.discarded_by_threshold},
  };

  for (const auto& s : scored) {
    const CandidateKey key{s.candidate.parent.parent_id, s.candidate.parent.variant_index, s.candidate.candidate_index};
    dataset::CandidateRecord rec;
    rec.parent = s.candidate.parent;
    rec.candidate_index = s.candidate.candidate_index;
    rec.rendered = s.candidate.rendered();
    rec.score = s.score;
    rec.reason = s.reason;
    if (const auto* r = std::get_if<dataset::Rendered>(&s.candidate.outcome)) {
      const std::string name = candidate_image_name(key, r->format);
      rec.image.path = options.images_dir.empty() ? name : options.images_dir + "/" + name;
      result.images[key] = *r;
    } else {
      rec.diagnostic = std::get<dataset::Failed>(s.candidate.outcome).diagnostic;
    }
    result.candidates.push_back(std::move(rec));
  }
  result.records = std::move(selection.accepted);
  result.complete = true;
  report.wall_time = std::chrono::steady_clock::now() - started;
  return result;
}

std::string report_to_json_lines(const PipelineReport& report) {
  std::string out;
  for (const auto& s : report.stages) {
    json j = {{"stage", s.stage}, {"input", s.input}, {"output", s.output}, {"failures", s.failures}};
    out += j.dump() + "\n";
  }
  json summary = {{"summary",
                   {{"qa_parse_failures", report.qa_parse_failures},
                    {"qa_partial_warnings", report.qa_partial_warnings},
                    {"code_parse_failures", report.code_parse_failures},
                    {"render_failures", report.render_failures},
                    {"score_parse_failures", report.score_parse_failures},
                    {"reached_selection", report.reached_selection},
                    {"discarded_by_threshold", report.discarded_by_threshold},
                    {"accepted", report.accepted}}}};
  out += summary.dump() + "\n";
  return out;
}

std::string report_summary_text(const PipelineReport& report) {
  std::string out;
  for (const auto& s : report.stages) {
    out += fmt::format("{:<7} {:>6} -> {:<6} failures {}\n", s.stage, s.input, s.output, s.failures);
  }
  out += fmt::format("accepted {} / {} variants (discarded {}), qa warnings {}, wall time {:.2f}s\n", report.accepted,
                     report.reached_selection, report.discarded_by_threshold, report.qa_partial_warnings,
                     report.wall_time.count());
  return out;
}

OutputPaths output_paths_for(const fs::path& out, const fs::path& report) {
  OutputPaths p;
  p.records = out;
  const fs::path dir = out.parent_path();
  const std::string stem = out.stem().string();
  p.candidates = dir / (stem + ".candidates.jsonl");
  p.images_dir = dir / (stem + "_images");
  p.report = report.empty() ? dir / "report.jsonl" : report;
  return p;
}

void write_outputs(const RunResult& result, const OutputPaths& paths) {
  for (const auto& [key, rendered] : result.images) {
    write_file_atomic(paths.images_dir / candidate_image_name(key, rendered.format), rendered.bytes);
  }
  dataset::write_records(result.records, paths.records);
  dataset::write_records(result.candidates, paths.candidates);
  write_file_atomic(paths.report, report_to_json_lines(result.report));
}

}  // namespace geoforge::pipeline
