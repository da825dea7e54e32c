#include "geoforge/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "geoforge/fsutil.hpp"
#include "geoforge/parallel.hpp"
#include "geoforge/random.hpp"
#include "json.hpp"

namespace geoforge::analytics {
using json = nlohmann::json;
using prompts::SlotVerdict;

namespace {

enum class Item { First, Second };

std::string media_type_of(const Bytes& b) {
  if (b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8) return "image/jpeg";
  return "image/png";
}

prompts::JudgeItem judge_item(const std::string& id, const std::string& question, const std::string& answer,
                              const dataset::ImageRef& image) {
  if (!image.bytes || image.bytes->empty()) {
    throw AnalyticsError(ErrorKind::MissingImage, "record '" + id + "' has no image bytes loaded");
  }
  return {question, answer, gateway::Image{*image.bytes, media_type_of(*image.bytes)}};
}

}  // namespace

std::string to_string(DifficultyVerdict v) {
  switch (v) {
    case DifficultyVerdict::Easier: return "easier";
    case DifficultyVerdict::Harder: return "harder";
    case DifficultyVerdict::Equal: return "equal";
  }
  return "equal";
}

DifficultyVerdict combine_verdicts(SlotVerdict p1, SlotVerdict p2, SwapRule rule) {
  if (rule == SwapRule::SlotLevel) {
    if (p1 != p2) return DifficultyVerdict::Equal;
    return p1 == SlotVerdict::First ? DifficultyVerdict::Easier : DifficultyVerdict::Harder;
  }
  // P1 shows (first, second); P2 shows (second, first).
  const Item harder1 = p1 == SlotVerdict::First ? Item::First : Item::Second;
  const Item harder2 = p2 == SlotVerdict::First ? Item::Second : Item::First;
  if (harder1 != harder2) return DifficultyVerdict::Equal;
  return harder1 == Item::First ? DifficultyVerdict::Easier : DifficultyVerdict::Harder;
}

PairJudgement judge_pair(const prompts::JudgeItem& first, const prompts::JudgeItem& second, gateway::Gateway& judge,
                         const SurveyConfig& config) {
  auto ask = [&](const prompts::JudgeItem& a, const prompts::JudgeItem& b) -> std::optional<SlotVerdict> {
    const auto request = prompts::render_prompt(prompts::PromptKind::DifficultyJudge, prompts::DifficultyContext{a, b},
                                                config.models);
    const auto response = judge.complete(request);
    try {
      return prompts::parse_difficulty(response.text);
    } catch (const prompts::PromptError& e) {
      spdlog::warn("difficulty judge: {}", e.what());
      return std::nullopt;
    }
  };
  PairJudgement j;
  j.p1 = ask(first, second);
  j.p2 = ask(second, first);
  if (!j.p1 || !j.p2) {
    j.judge_failed = true;
    j.verdict = DifficultyVerdict::Equal;
  } else {
    j.verdict = combine_verdicts(*j.p1, *j.p2, config.rule);
  }
  return j;
}

PairJudgement judge_pair_difficulty(const dataset::ProblemRecord& original, const dataset::EnhancedRecord& generated,
                                    gateway::Gateway& judge, const SurveyConfig& config) {
  return judge_pair(judge_item(original.id, original.question, original.answer, original.image),
                    judge_item(generated.id, generated.question, generated.answer, generated.image), judge, config);
}

std::vector<DifficultyPair> pair_by_provenance(const std::vector<dataset::ProblemRecord>& originals,
                                               const std::vector<dataset::EnhancedRecord>& generated) {
  std::map<std::string, const dataset::ProblemRecord*> by_id;
  for (const auto& o : originals) by_id[o.id] = &o;
  std::vector<DifficultyPair> out;
  out.reserve(generated.size());
  for (const auto& g : generated) {
    const auto it = by_id.find(g.provenance.parent_id);
    if (it == by_id.end()) {
      throw AnalyticsError(ErrorKind::MissingParent,
                           "generated record '" + g.id + "' names missing parent '" + g.provenance.parent_id + "'");
    }
    out.push_back({*it->second, g});
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t population, std::size_t n, std::uint64_t seed) {
  if (n > population) {
    throw AnalyticsError(ErrorKind::SampleTooLarge,
                         fmt::format("sample size {} exceeds population {}", n, population));
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  seeded_shuffle(idx, seed);
  idx.resize(n);
  return idx;
}

double DifficultyDistribution::percent(std::size_t count) const {
  return sample_size == 0 ? 0.0 : 100.0 * static_cast<double>(count) / static_cast<double>(sample_size);
}

DifficultyDistribution difficulty_survey(const std::vector<DifficultyPair>& population, gateway::Gateway& judge,
                                         const SurveyConfig& config) {
  if (population.empty()) throw AnalyticsError(ErrorKind::EmptyPopulation, "difficulty survey needs at least one pair");
  DifficultyDistribution d;
  d.sampled = sample_indices(population.size(), config.sample_size, config.seed);
  d.sample_size = d.sampled.size();

  std::vector<PairJudgement> results(d.sampled.size());
  parallel_for(d.sampled.size(), static_cast<std::size_t>(std::max(1, config.concurrency)), [&](std::size_t i) {
    const auto& pair = population[d.sampled[i]];
    results[i] = judge_pair_difficulty(pair.original, pair.generated, judge, config);
  });
  for (const auto& r : results) {
    if (r.judge_failed) ++d.judge_failures;
    switch (r.verdict) {
      case DifficultyVerdict::Easier: ++d.easier; break;
      case DifficultyVerdict::Harder: ++d.harder; break;
      case DifficultyVerdict::Equal: ++d.equal; break;
    }
  }
  return d;
}

std::string difficulty_to_json_lines(const DifficultyDistribution& d) {
  std::string out;
  const std::pair<const char*, std::size_t> rows[] = {{"easier", d.easier}, {"equal", d.equal}, {"harder", d.harder}};
  for (const auto& [name, count] : rows) {
    json j = {{"verdict", name}, {"count", count}, {"percent", std::round(d.percent(count) * 10.0) / 10.0}};
    out += j.dump() + "\n";
  }
  json summary = {{"summary",
                   {{"sample_size", d.sample_size},
                    {"easier_or_equal_percent", std::round(d.easier_or_equal_percent() * 10.0) / 10.0},
                    {"judge_failures", d.judge_failures}}}};
  out += summary.dump() + "\n";
  return out;
}

std::string difficulty_table(const DifficultyDistribution& d) {
  std::string out = fmt::format("{:<16} {:>6} {:>8}\n", "verdict", "count", "percent");
  out += fmt::format("{:<16} {:>6} {:>7.1f}%\n", "easier", d.easier, d.percent(d.easier));
  out += fmt::format("{:<16} {:>6} {:>7.1f}%\n", "equal", d.equal, d.percent(d.equal));
  out += fmt::format("{:<16} {:>6} {:>7.1f}%\n", "harder", d.harder, d.percent(d.harder));
  out += fmt::format("{:<16} {:>6} {:>7.1f}%\n", "easier or equal", d.easier + d.equal, d.easier_or_equal_percent());
  if (d.judge_failures) out += fmt::format("judge failures counted as equal: {}\n", d.judge_failures);
  return out;
}

std::vector<AlignmentItem> alignment_items_from(const std::vector<dataset::ProblemRecord>& records,
                                                const std::filesystem::path& base_dir) {
  std::vector<AlignmentItem> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Bytes bytes;
    if (r.image.bytes) {
      bytes = *r.image.bytes;
    } else {
      const std::filesystem::path p = base_dir / r.image.path;
      try {
        bytes = read_file_bytes(p);
      } catch (const std::exception&) {
        throw AnalyticsError(ErrorKind::MissingImage, "record '" + r.id + "': cannot read image " + p.string());
      }
    }
    if (bytes.empty()) throw AnalyticsError(ErrorKind::MissingImage, "record '" + r.id + "': empty image");
    const std::string media = media_type_of(bytes);
    out.push_back({r.id, r.question, gateway::Image{std::move(bytes), media}});
  }
  return out;
}

std::size_t histogram_bin(double score) {
  // Epsilon so a tenth that scales to just under an integer stays in its bin.
  const double scaled = std::floor(score * 10.0 + 1e-9);
  return static_cast<std::size_t>(std::clamp(scaled, 0.0, 9.0));
}

AlignmentReport alignment_survey(const std::vector<AlignmentItem>& corpus, gateway::Gateway& judge,
                                 const SurveyConfig& config, const std::string& corpus_name) {
  if (corpus.empty()) throw AnalyticsError(ErrorKind::EmptyPopulation, "alignment survey needs at least one item");
  const auto sampled = sample_indices(corpus.size(), config.sample_size, config.seed);

  AlignmentReport r;
  r.corpus = corpus_name;
  r.count = sampled.size();
  r.scores.assign(sampled.size(), 0.0);
  std::vector<char> failed(sampled.size(), 0);
  parallel_for(sampled.size(), static_cast<std::size_t>(std::max(1, config.concurrency)), [&](std::size_t i) {
    const AlignmentItem& item = corpus[sampled[i]];
    const auto request = prompts::render_prompt(prompts::PromptKind::ImageScoring,
                                                prompts::ScoringContext{item.text, {}, item.image}, config.models);
    const auto response = judge.complete(request);
    try {
      r.scores[i] = prompts::parse_score(response.text).score;
    } catch (const prompts::PromptError& e) {
      spdlog::warn("alignment judge, item {}: {}", item.id, e.what());
      failed[i] = 1;
    }
  });
  double sum = 0.0;
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    sum += r.scores[i];
    ++r.histogram[histogram_bin(r.scores[i])];
    r.judge_failures += static_cast<std::size_t>(failed[i]);
  }
  r.mean = r.count == 0 ? 0.0 : sum / static_cast<double>(r.count);
  return r;
}

std::string alignment_to_json_lines(const AlignmentReport& r) {
  std::string out;
  for (std::size_t b = 0; b < r.histogram.size(); ++b) {
    json j = {{"bin", fmt::format("{:.1f}-{:.1f}", b / 10.0, (b + 1) / 10.0)}, {"count", r.histogram[b]}};
    out += j.dump() + "\n";
  }
  json summary = {{"summary",
                   {{"corpus", r.corpus},
                    {"count", r.count},
                    {"mean", fmt::format("{:.4f}", r.mean)},
                    {"judge_failures", r.judge_failures}}}};
  out += summary.dump() + "\n";
  return out;
}

std::string alignment_table(const AlignmentReport& r) {
  std::string out = fmt::format("corpus {}: n = {}, mean = {:.4f}\n", r.corpus, r.count, r.mean);
  const std::size_t peak = *std::max_element(r.histogram.begin(), r.histogram.end());
  for (std::size_t b = 0; b < r.histogram.size(); ++b) {
    const std::size_t bar = peak == 0 ? 0 : (r.histogram[b] * 40 + peak - 1) / peak;
    out += fmt::format("{:.1f}-{:.1f} {:>5} {}\n", b / 10.0, (b + 1) / 10.0, r.histogram[b], std::string(bar, '#'));
  }
  if (r.judge_failures) out += fmt::format("judge failures scored 0: {}\n", r.judge_failures);
  return out;
}

}  // namespace geoforge::analytics
