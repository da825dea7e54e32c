#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geoforge/parallel.hpp"
#include "geoforge/pipeline.hpp"

namespace geoforge::pipeline {

using dataset::GeneratedProblem;
using dataset::ImageCandidate;
using dataset::ProblemRecord;
using dataset::ScoredCandidate;

namespace {

std::string media_type_of(const Bytes& bytes) {
  if (bytes.size() >= 4 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') return "image/png";
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) return "image/jpeg";
  if (bytes.size() >= 4 && bytes[0] == 'G' && bytes[1] == 'I' && bytes[2] == 'F' && bytes[3] == '8') return "image/gif";
  return "image/png";
}

std::string format_of(const geoscript::ExternalExecutorConfig& config) {
  std::string ext = config.expected_output.extension().string();
  if (!ext.empty() && ext.front() == '.') ext.erase(0, 1);
  return ext.empty() ? "png" : ext;
}

dataset::Rendered render_builtin(const std::string& program, const PipelineConfig& config) {
  const auto scene = geoscript::parse_scene(program);
  const auto svg = geoscript::render_svg(scene, config.render);
  return {geoscript::rasterize(svg, config.image_width), "png"};
}

template <typename Key, typename Value>
bool has(StageContext& ctx, const std::map<Key, Value>& m, const Key& key) {
  std::lock_guard lock(ctx.state_mutex);
  return m.count(key) != 0;
}

}  // namespace

std::vector<GeneratedProblem> stage_generate_qa(const std::vector<ProblemRecord>& seeds, StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config;
  std::vector<const ProblemRecord*> todo;
  for (const auto& seed : seeds) {
    if (!seed.image.bytes || seed.image.bytes->empty()) {
      throw PipelineError(ErrorKind::MissingImage, "seed '" + seed.id + "' has no image bytes loaded");
    }
    if (!has(ctx, ctx.state.qa, seed.id)) todo.push_back(&seed);
  }

  parallel_for(todo.size(), static_cast<std::size_t>(cfg.concurrency), [&](std::size_t i) {
    const ProblemRecord& seed = *todo[i];
    prompts::QaContext qc{seed.question, seed.answer, gateway::Image{*seed.image.bytes, media_type_of(*seed.image.bytes)}};
    const auto response = ctx.gateway.complete(prompts::render_prompt(prompts::PromptKind::QaGeneration, qc, cfg.models));
    QaOutcome outcome;
    try {
      outcome.blocks = prompts::parse_qa(response.text, static_cast<std::size_t>(cfg.n_variants));
      if (outcome.blocks.size() < static_cast<std::size_t>(cfg.n_variants)) {
        spdlog::warn("qa: seed {} yielded {} of {} variants", seed.id, outcome.blocks.size(), cfg.n_variants);
      }
    } catch (const prompts::PromptError& e) {
      outcome.error = e.what();
      spdlog::warn("qa: seed {}: {}", seed.id, e.what());
    }
    std::lock_guard lock(ctx.state_mutex);
    ctx.state.qa[seed.id] = std::move(outcome);
  });

  std::vector<GeneratedProblem> variants;
  std::lock_guard lock(ctx.state_mutex);
  for (const auto& seed : seeds) {
    const auto& blocks = ctx.state.qa.at(seed.id).blocks;
    for (std::size_t v = 0; v < blocks.size(); ++v) {
      variants.push_back({seed.id, static_cast<int>(v + 1), blocks[v].question, blocks[v].answer,
                          blocks[v].image_description});
    }
  }
  return variants;
}

std::vector<ProgramSet> stage_generate_code(const std::vector<GeneratedProblem>& variants, StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config;
  const std::string reference =
      cfg.backend == Backend::BuiltinDsl ? std::string(prompts::geoscript_reference()) : std::string{};

  struct Item {
    const GeneratedProblem* variant;
    int candidate;
  };
  std::vector<Item> todo;
  for (const auto& v : variants) {
    for (int k = 1; k <= cfg.k_candidates; ++k) {
      if (!has(ctx, ctx.state.code, CandidateKey{v.parent_id, v.variant_index, k})) todo.push_back({&v, k});
    }
  }

  parallel_for(todo.size(), static_cast<std::size_t>(cfg.concurrency), [&](std::size_t i) {
    const auto& [v, k] = todo[i];
    prompts::CodeContext cc{v->question, v->answer, v->image_description, k, cfg.k_candidates, reference};
    const auto response = ctx.gateway.complete(prompts::render_prompt(prompts::PromptKind::CodeGeneration, cc, cfg.models));
    CodeOutcome outcome;
    try {
      outcome.program = prompts::parse_code(response.text);
    } catch (const prompts::PromptError& e) {
      outcome.error = e.what();
      spdlog::warn("code: {} v{} c{}: {}", v->parent_id, v->variant_index, k, e.what());
    }
    std::lock_guard lock(ctx.state_mutex);
    ctx.state.code[CandidateKey{v->parent_id, v->variant_index, k}] = std::move(outcome);
  });

  std::vector<ProgramSet> out;
  std::lock_guard lock(ctx.state_mutex);
  for (const auto& v : variants) {
    ProgramSet set{v, {}};
    for (int k = 1; k <= cfg.k_candidates; ++k) {
      const auto& outcome = ctx.state.code.at(CandidateKey{v.parent_id, v.variant_index, k});
      if (outcome.program) set.programs.emplace_back(k, *outcome.program);
    }
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<ImageCandidate> stage_render(const std::vector<ProgramSet>& programs, StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config;
  if (cfg.backend == Backend::External && ctx.executor == nullptr) {
    throw PipelineError(ErrorKind::InvalidConfig, "external backend selected but no executor configured");
  }
  struct Item {
    CandidateKey key;
    const std::string* program;
  };
  std::vector<Item> todo;
  for (const auto& set : programs) {
    for (const auto& [k, text] : set.programs) {
      CandidateKey key{set.variant.parent_id, set.variant.variant_index, k};
      if (!has(ctx, ctx.state.render, key)) todo.push_back({key, &text});
    }
  }

  parallel_for(todo.size(), static_cast<std::size_t>(cfg.concurrency), [&](std::size_t i) {
    const Item& item = todo[i];
    ImageCandidate candidate;
    candidate.parent = item.key.variant();
    candidate.candidate_index = item.key.candidate_index;
    candidate.program_text = *item.program;
    try {
      if (cfg.backend == Backend::BuiltinDsl) {
        candidate.outcome = render_builtin(*item.program, cfg);
      } else {
        candidate.outcome = dataset::Rendered{ctx.executor->run(*item.program), format_of(ctx.executor->config())};
      }
    } catch (const std::exception& e) {
      // A failed render keeps its slot; it is never retried or regenerated.
      candidate.outcome = dataset::Failed{e.what()};
    }
    std::lock_guard lock(ctx.state_mutex);
    ctx.state.render[item.key] = std::move(candidate);
  });

  std::vector<ImageCandidate> out;
  std::lock_guard lock(ctx.state_mutex);
  for (const auto& set : programs) {
    for (const auto& [k, text] : set.programs) {
      out.push_back(ctx.state.render.at(CandidateKey{set.variant.parent_id, set.variant.variant_index, k}));
    }
  }
  return out;
}

std::vector<ScoredCandidate> stage_score(const std::vector<ImageCandidate>& candidates,
                                         const std::vector<GeneratedProblem>& variants, StageContext& ctx) {
  const PipelineConfig& cfg = ctx.config;
  std::map<dataset::VariantKey, const GeneratedProblem*> by_key;
  for (const auto& v : variants) by_key[v.key()] = &v;

  std::vector<const ImageCandidate*> todo;
  for (const auto& c : candidates) {
    if (!by_key.count(c.parent)) {
      throw PipelineError(ErrorKind::InvalidConfig,
                          fmt::format("candidate for unknown variant {} v{}", c.parent.parent_id, c.parent.variant_index));
    }
    if (!has(ctx, ctx.state.score, CandidateKey{c.parent.parent_id, c.parent.variant_index, c.candidate_index})) {
      todo.push_back(&c);
    }
  }

  parallel_for(todo.size(), static_cast<std::size_t>(cfg.concurrency), [&](std::size_t i) {
    const ImageCandidate& c = *todo[i];
    const CandidateKey key{c.parent.parent_id, c.parent.variant_index, c.candidate_index};
    ScoreOutcome outcome;
    if (const auto* r = std::get_if<dataset::Rendered>(&c.outcome)) {
      const GeneratedProblem& v = *by_key.at(c.parent);
      prompts::ScoringContext sc{v.image_description, v.question, gateway::Image{r->bytes, media_type_of(r->bytes)}};
      const auto request = prompts::render_prompt(prompts::PromptKind::ImageScoring, sc, cfg.models);
      outcome.judged = true;
      const int attempts = cfg.reask_malformed_scores && ctx.gateway.mode() == gateway::Mode::Live ? 2 : 1;
      for (int a = 0; a < attempts; ++a) {
        const auto response = ctx.gateway.complete(request);
        try {
          const auto reply = prompts::parse_score(response.text);
          outcome.score = reply.score;
          outcome.reason = reply.reason;
          outcome.parse_failed = false;
          break;
        } catch (const prompts::PromptError& e) {
          // Unverifiable scores count as zero rather than being retried.
          outcome.score = 0.0;
          outcome.reason.clear();
          outcome.parse_failed = true;
          spdlog::warn("score: {} v{} c{}: {}", key.parent_id, key.variant_index, key.candidate_index, e.what());
        }
      }
    }
    std::lock_guard lock(ctx.state_mutex);
    ctx.state.score[key] = std::move(outcome);
  });

  std::vector<ScoredCandidate> out;
  std::lock_guard lock(ctx.state_mutex);
  for (const auto& c : candidates) {
    const auto& o = ctx.state.score.at(CandidateKey{c.parent.parent_id, c.parent.variant_index, c.candidate_index});
    out.push_back({c, o.score, o.reason});
  }
  return out;
}

std::optional<std::size_t> best_candidate(const std::vector<ScoredCandidate>& group) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (!best) {
      best = i;
      continue;
    }
    const auto& cur = group[i];
    const auto& top = group[*best];
    if (cur.score > top.score ||
        (cur.score == top.score && cur.candidate.candidate_index < top.candidate.candidate_index)) {
      best = i;
    }
  }
  return best;
}

std::string candidate_image_name(const CandidateKey& key, const std::string& format) {
  std::string id;
  for (char c : key.parent_id) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                      c == '_' || c == '.';
    id.push_back(keep ? c : '_');
  }
  return fmt::format("{}_v{}_c{}.{}", id, key.variant_index, key.candidate_index, format);
}

Selection select_and_filter(const std::vector<ScoredCandidate>& scored, const std::vector<GeneratedProblem>& variants,
                            const std::map<std::string, std::string>& parent_sources, const PipelineConfig& config,
                            const std::string& images_dir) {
  std::map<dataset::VariantKey, std::vector<ScoredCandidate>> groups;
  for (const auto& v : variants) groups[v.key()];
  // A failed render can never be selected, even at threshold 0.
  for (const auto& s : scored) {
    if (s.candidate.rendered()) groups[s.candidate.parent].push_back(s);
    else groups[s.candidate.parent];
  }

  std::map<dataset::VariantKey, const GeneratedProblem*> by_key;
  for (const auto& v : variants) by_key[v.key()] = &v;

  Selection out;
  for (const auto& [key, group] : groups) {
    const auto best = best_candidate(group);
    // Discard when the best score is below the threshold; equality keeps.
    if (!best || !(group[*best].score >= config.accept_threshold)) {
      out.discarded.push_back(key);
      continue;
    }
    const ScoredCandidate& win = group[*best];
    const auto vit = by_key.find(key);
    if (vit == by_key.end()) {
      out.discarded.push_back(key);
      continue;
    }
    const GeneratedProblem& v = *vit->second;
    const auto& rendered = std::get<dataset::Rendered>(win.candidate.outcome);
    const CandidateKey ck{key.parent_id, key.variant_index, win.candidate.candidate_index};

    dataset::EnhancedRecord r;
    r.id = fmt::format("{}_v{}", key.parent_id, key.variant_index);
    r.source_dataset = config.dataset_name;
    r.question = v.question;
    r.answer = v.answer;
    const std::string name = candidate_image_name(ck, rendered.format);
    r.image.path = images_dir.empty() ? name : images_dir + "/" + name;
    r.image.bytes = rendered.bytes;
    r.score = win.score;
    const auto src = parent_sources.find(key.parent_id);
    r.provenance = {src == parent_sources.end() ? std::string{} : src->second, key.parent_id, key.variant_index,
                    win.candidate.candidate_index};
    out.accepted.push_back(std::move(r));
  }
  // groups is keyed by (parent_id, variant_index), so accepted is already sorted.
  return out;
}

}  // namespace geoforge::pipeline
