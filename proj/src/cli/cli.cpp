#include "geoforge/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "geoforge/analytics.hpp"
#include "geoforge/dataset.hpp"
#include "geoforge/eval.hpp"
#include "geoforge/fsutil.hpp"
#include "geoforge/gateway.hpp"
#include "geoforge/geoscript.hpp"
#include "geoforge/pipeline.hpp"

namespace geoforge::cli {
namespace fs = std::filesystem;

namespace {

struct SharedFlags {
  std::string cassette;
  std::optional<std::string> mode;
  int jobs = 4;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_shared(CLI::App* cmd, SharedFlags& f) {
  cmd->add_option("--cassette", f.cassette, "Cassette file (JSON Lines) for record/replay");
  cmd->add_option("--mode", f.mode, "Gateway mode")->check(CLI::IsMember({"live", "record", "replay"}));
  cmd->add_option("--jobs", f.jobs, "Worker threads and in-flight request cap")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", f.seed, "Seed for all sampling (default 0)")->each([&f](const std::string&) {
    f.seed_given = true;
  });
}

// Model ids from the environment override config values when set.
void apply_model_env(prompts::ModelRoles& models) {
  if (const char* v = std::getenv("GEOFORGE_MODEL_VLM"); v && *v) models.vision_model = v;
  if (const char* v = std::getenv("GEOFORGE_MODEL_TEXT"); v && *v) models.text_model = v;
}

std::unique_ptr<gateway::Gateway> make_gateway(gateway::Mode mode, const std::string& cassette_path, int jobs) {
  std::shared_ptr<gateway::Cassette> cassette;
  if (!cassette_path.empty() && fs::exists(cassette_path)) {
    cassette = gateway::Cassette::load(cassette_path);
  } else if (mode == gateway::Mode::Replay) {
    throw gateway::GatewayError(gateway::ErrorKind::CassetteIo,
                                cassette_path.empty() ? "replay mode needs --cassette"
                                                      : "cassette not found: " + cassette_path);
  } else {
    cassette = std::make_shared<gateway::Cassette>();
  }
  std::shared_ptr<gateway::Provider> provider;
  if (mode != gateway::Mode::Replay) {
    const auto env = gateway::environment_from_process();
    if (env.api_key.empty()) {
      throw gateway::GatewayError(gateway::ErrorKind::MissingCredentials,
                                  "GEOFORGE_API_KEY must be set for live and record modes");
    }
    provider = std::make_shared<gateway::HttpChatProvider>(env.api_base, env.api_key);
  }
  gateway::GatewayOptions options;
  options.mode = mode;
  options.max_in_flight = static_cast<std::size_t>(jobs);
  if (mode == gateway::Mode::Record) options.cassette_path = cassette_path;
  return std::make_unique<gateway::Gateway>(std::move(provider), std::move(cassette), std::move(options));
}

gateway::Mode mode_or(const std::optional<std::string>& flag, gateway::Mode fallback) {
  return flag ? gateway::mode_from_string(*flag) : fallback;
}

void load_enhanced_images(std::vector<dataset::EnhancedRecord>& records, const fs::path& base_dir) {
  for (auto& r : records) {
    if (r.image.bytes) continue;
    r.image.bytes = read_file_bytes(base_dir / r.image.path);
  }
}

fs::path dir_of(const fs::path& file) {
  const fs::path parent = fs::absolute(file).parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

struct Commands {
  CLI::App app{"Synthesizes simplified, image-aligned geometry problems and analyzes the results.", "geoforge"};
  bool verbose = false;
  bool quiet = false;

  SharedFlags run_flags;
  std::string run_seeds, run_out, run_config, run_backend, run_report, run_checkpoint, run_stop_after;
  CLI::App* run = nullptr;

  std::string render_in, render_out, render_png;
  int render_width = 600;
  double render_margin = 1.0;
  CLI::App* render = nullptr;

  SharedFlags assemble_flags;
  std::string assemble_manifest, assemble_out, assemble_mode = "best", assemble_stats;
  CLI::App* assemble = nullptr;

  CLI::App* analyze = nullptr;
  SharedFlags difficulty_flags;
  std::string difficulty_original, difficulty_generated, difficulty_report;
  std::size_t difficulty_n = 500;
  bool difficulty_slot_level = false;
  CLI::App* difficulty = nullptr;

  SharedFlags alignment_flags;
  std::string alignment_corpus, alignment_report, alignment_name;
  std::size_t alignment_n = 500;
  CLI::App* alignment = nullptr;

  SharedFlags grade_flags;
  std::string grade_items, grade_outputs, grade_method = "pattern", grade_report;
  CLI::App* grade = nullptr;

  Commands() {
    app.set_version_flag("--version", std::string("geoforge ") + GEOFORGE_VERSION);
    app.require_subcommand(1);
    app.fallthrough();
    app.set_help_all_flag("--help-all", "Print help for every subcommand and exit");
    app.add_flag("-v,--verbose", verbose, "Debug logging on stderr");
    app.add_flag("-q,--quiet", quiet, "Only warnings and errors on stderr");

    run = app.add_subcommand("run", "Run the four-stage synthesis pipeline over seed problems");
    run->add_option("--seeds", run_seeds, "Seed problems (JSON Lines)")->required();
    run->add_option("--out", run_out, "Enhanced dataset output (JSON Lines)")->required();
    run->add_option("--config", run_config, "Pipeline config file (key = value)");
    run->add_option("--backend", run_backend, "Renderer backend")->check(CLI::IsMember({"builtin_dsl", "external"}));
    run->add_option("--report", run_report, "Report path (default: report.jsonl beside --out)");
    run->add_option("--checkpoint", run_checkpoint, "Checkpoint file; an existing one is resumed");
    run->add_option("--stop-after", run_stop_after, "Stop after this stage, leaving the checkpoint")
        ->check(CLI::IsMember({"qa", "code", "render", "score"}));
    add_shared(run, run_flags);

    render = app.add_subcommand("render", "Render a GeoScript scene to SVG and optionally PNG");
    render->add_option("--in", render_in, "Scene program")->required();
    render->add_option("--out", render_out, "SVG output")->required();
    render->add_option("--png", render_png, "Also rasterize to this PNG");
    render->add_option("--width", render_width, "PNG width in pixels")->check(CLI::PositiveNumber);
    render->add_option("--margin", render_margin, "Margin around the scene in scene units")->check(CLI::NonNegativeNumber);

    assemble = app.add_subcommand("assemble", "Assemble a training mix from a manifest");
    assemble->add_option("--manifest", assemble_manifest, "Manifest (JSON)")->required();
    assemble->add_option("--out", assemble_out, "Assembled dataset output (JSON Lines)")->required();
    assemble->add_option("--assembly-mode", assemble_mode, "Image choice for generated entries")
        ->check(CLI::IsMember({"best", "original", "random"}));
    assemble->add_option("--stats", assemble_stats, "Stats output (default: <out stem>.stats.jsonl)");
    add_shared(assemble, assemble_flags);

    analyze = app.add_subcommand("analyze", "Dataset analyses");
    analyze->require_subcommand(1);
    difficulty = analyze->add_subcommand("difficulty", "Order-swapped pairwise difficulty survey");
    difficulty->add_option("--original", difficulty_original, "Original problems (JSON Lines)")->required();
    difficulty->add_option("--generated", difficulty_generated, "Generated records (JSON Lines)")->required();
    difficulty->add_option("--n", difficulty_n, "Sample size");
    difficulty->add_option("--report", difficulty_report, "Write the report lines here");
    difficulty->add_flag("--slot-level", difficulty_slot_level, "Compare raw slot digits instead of identities");
    add_shared(difficulty, difficulty_flags);

    alignment = analyze->add_subcommand("alignment", "Image-text alignment survey");
    alignment->add_option("--corpus", alignment_corpus, "Corpus records with question and image (JSON Lines)")->required();
    alignment->add_option("--n", alignment_n, "Sample size");
    alignment->add_option("--name", alignment_name, "Corpus name for the report");
    alignment->add_option("--report", alignment_report, "Write the report lines here");
    add_shared(alignment, alignment_flags);

    grade = app.add_subcommand("grade", "Extract final answers and compute accuracy");
    grade->add_option("--items", grade_items, "Benchmark items (JSON Lines)")->required();
    grade->add_option("--outputs", grade_outputs, "Model outputs (JSON Lines)")->required();
    grade->add_option("--method", grade_method, "Extraction method")->check(CLI::IsMember({"pattern", "model"}));
    grade->add_option("--report", grade_report, "Write the report lines here");
    add_shared(grade, grade_flags);
  }
};

int do_run(Commands& c) {
  pipeline::PipelineConfig config = c.run_config.empty() ? pipeline::PipelineConfig{} : pipeline::load_config(c.run_config);
  apply_model_env(config.models);
  if (!c.run_backend.empty()) config.backend = pipeline::backend_from_string(c.run_backend);
  if (c.run->count("--jobs")) config.concurrency = c.run_flags.jobs;
  if (c.run_flags.seed_given) config.seed = c.run_flags.seed;
  if (!c.run_checkpoint.empty()) config.checkpoint_path = c.run_checkpoint;
  config.mode = mode_or(c.run_flags.mode, config.mode);
  pipeline::validate(config);

  auto seeds = dataset::read_problems(c.run_seeds);
  pipeline::load_seed_images(seeds, dir_of(c.run_seeds));
  auto gw = make_gateway(config.mode, c.run_flags.cassette, config.concurrency);

  const auto paths = pipeline::output_paths_for(c.run_out, c.run_report);
  pipeline::RunOptions options;
  options.images_dir = paths.images_dir.filename().string();
  if (!c.run_stop_after.empty()) options.stop_after = pipeline::stage_from_string(c.run_stop_after);

  const auto result = pipeline::run_pipeline(seeds, config, *gw, options);
  if (!result.complete) {
    fmt::print("stopped after stage {}; checkpoint at {}\n", c.run_stop_after,
               config.checkpoint_path.empty() ? "(none)" : config.checkpoint_path.string());
    return 0;
  }
  pipeline::write_outputs(result, paths);
  fmt::print("{}", pipeline::report_summary_text(result.report));
  fmt::print("wrote {} records to {}\n", result.records.size(), paths.records.string());
  return 0;
}

int do_render(Commands& c) {
  const auto scene = geoscript::parse_scene(read_file_text(c.render_in));
  geoscript::RenderOptions options;
  options.margin = c.render_margin;
  const std::string svg = geoscript::render_svg(scene, options);
  write_file_atomic(c.render_out, svg);
  if (!c.render_png.empty()) {
    const Bytes png = geoscript::rasterize(svg, c.render_width);
    write_file_atomic(c.render_png, png);
    const auto size = geoscript::png_size(png);
    fmt::print("wrote {} and {} ({}x{})\n", c.render_out, c.render_png, size.width, size.height);
  } else {
    fmt::print("wrote {}\n", c.render_out);
  }
  return 0;
}

int do_assemble(Commands& c) {
  auto manifest = dataset::read_manifest(c.assemble_manifest);
  if (c.assemble_flags.seed_given) manifest.seed = c.assemble_flags.seed;
  const auto mode = dataset::assembly_mode_from_string(c.assemble_mode);
  const fs::path out = c.assemble_out;
  const auto inputs = dataset::load_assembly_inputs(manifest, mode, dir_of(c.assemble_manifest), dir_of(out));
  const auto result = dataset::assemble_mix(manifest, mode, inputs);
  dataset::write_assembled(result.records, out);
  const fs::path stats =
      c.assemble_stats.empty() ? out.parent_path() / (out.stem().string() + ".stats.jsonl") : fs::path(c.assemble_stats);
  write_file_atomic(stats, dataset::stats_to_json_lines(result.stats));
  for (const auto& e : result.stats.per_entry) {
    fmt::print("{:<24} {:<12} {:>8}\n", e.name, dataset::to_string(e.role), e.count);
  }
  fmt::print("{:<24} {:<12} {:>8}\n", "open-source total", "", result.stats.open_source_total);
  fmt::print("{:<24} {:<12} {:>8}\n", "generated total", "", result.stats.generated_total);
  fmt::print("{:<24} {:<12} {:>8}\n", "total", "", result.stats.total);
  return 0;
}

int do_difficulty(Commands& c) {
  auto originals = dataset::read_problems(c.difficulty_original);
  pipeline::load_seed_images(originals, dir_of(c.difficulty_original));
  auto generated = dataset::read_enhanced(c.difficulty_generated);
  load_enhanced_images(generated, dir_of(c.difficulty_generated));
  const auto pairs = analytics::pair_by_provenance(originals, generated);

  analytics::SurveyConfig config;
  config.sample_size = c.difficulty_n;
  config.seed = c.difficulty_flags.seed;
  config.concurrency = c.difficulty_flags.jobs;
  config.rule = c.difficulty_slot_level ? analytics::SwapRule::SlotLevel : analytics::SwapRule::IdentityLevel;
  apply_model_env(config.models);
  auto gw = make_gateway(mode_or(c.difficulty_flags.mode, gateway::Mode::Replay), c.difficulty_flags.cassette,
                         c.difficulty_flags.jobs);
  const auto d = analytics::difficulty_survey(pairs, *gw, config);
  if (!c.difficulty_report.empty()) write_file_atomic(c.difficulty_report, analytics::difficulty_to_json_lines(d));
  fmt::print("{}", analytics::difficulty_table(d));
  return 0;
}

int do_alignment(Commands& c) {
  const auto records = dataset::read_problems(c.alignment_corpus);
  const auto items = analytics::alignment_items_from(records, dir_of(c.alignment_corpus));
  analytics::SurveyConfig config;
  config.sample_size = c.alignment_n;
  config.seed = c.alignment_flags.seed;
  config.concurrency = c.alignment_flags.jobs;
  apply_model_env(config.models);
  auto gw = make_gateway(mode_or(c.alignment_flags.mode, gateway::Mode::Replay), c.alignment_flags.cassette,
                         c.alignment_flags.jobs);
  const std::string name = c.alignment_name.empty() ? fs::path(c.alignment_corpus).stem().string() : c.alignment_name;
  const auto r = analytics::alignment_survey(items, *gw, config, name);
  if (!c.alignment_report.empty()) write_file_atomic(c.alignment_report, analytics::alignment_to_json_lines(r));
  fmt::print("{}", analytics::alignment_table(r));
  return 0;
}

int do_grade(Commands& c) {
  const auto items = eval::read_items(c.grade_items);
  const auto outputs = eval::read_outputs(c.grade_outputs);
  const auto method = eval::method_from_string(c.grade_method);
  std::unique_ptr<gateway::Gateway> gw;
  prompts::ModelRoles models;
  apply_model_env(models);
  if (method == eval::Method::ModelAssisted) {
    gw = make_gateway(mode_or(c.grade_flags.mode, gateway::Mode::Replay), c.grade_flags.cassette, c.grade_flags.jobs);
  }
  const auto report = eval::accuracy_report(items, outputs, method, gw.get(), models, c.grade_flags.jobs);
  if (!c.grade_report.empty()) write_file_atomic(c.grade_report, eval::report_to_json_lines(report));
  fmt::print("{}", eval::report_table(report));
  return 0;
}

void setup_logging(bool verbose, bool quiet) {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("geoforge");
    spdlog::set_default_logger(l);
    return l;
  }();
  spdlog::set_level(verbose ? spdlog::level::debug : quiet ? spdlog::level::warn : spdlog::level::info);
}

// The deepest subcommand the user reached, for usage messages.
const CLI::App* deepest(const CLI::App& app) {
  for (const CLI::App* sub : app.get_subcommands()) return deepest(*sub);
  return &app;
}

}  // namespace

std::string help_text() {
  Commands c;
  std::string out = c.app.help();
  for (CLI::App* sub : {c.run, c.render, c.assemble, c.analyze, c.difficulty, c.alignment, c.grade}) {
    out += "\n" + sub->help();
  }
  return out;
}

int dispatch(int argc, const char* const* argv) {
  Commands c;
  try {
    c.app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << deepest(c.app)->help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << help_text();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << c.app.version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << deepest(c.app)->help();
    return 2;
  }

  setup_logging(c.verbose, c.quiet);
  try {
    if (c.run->parsed()) return do_run(c);
    if (c.render->parsed()) return do_render(c);
    if (c.assemble->parsed()) return do_assemble(c);
    if (c.difficulty->parsed()) return do_difficulty(c);
    if (c.alignment->parsed()) return do_alignment(c);
    if (c.grade->parsed()) return do_grade(c);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cerr << c.app.help();
  return 2;
}

}  // namespace geoforge::cli
