#include <map>
#include <random>
#include <set>

#include "json.hpp"

#include "geoforge/dataset.hpp"
#include "geoforge/fsutil.hpp"
#include "geoforge/random.hpp"

namespace geoforge::dataset {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(DatasetRole role) { return role == DatasetRole::Generated ? "generated" : "open_source"; }

std::string to_string(AssemblyMode mode) {
  switch (mode) {
    case AssemblyMode::BestScored: return "best";
    case AssemblyMode::OriginalImage: return "original";
    case AssemblyMode::RandomCandidate: return "random";
  }
  return "best";
}

AssemblyMode assembly_mode_from_string(const std::string& text) {
  if (text == "best") return AssemblyMode::BestScored;
  if (text == "original") return AssemblyMode::OriginalImage;
  if (text == "random") return AssemblyMode::RandomCandidate;
  throw std::invalid_argument("unknown assembly mode '" + text + "' (expected best|original|random)");
}

const ImageRef& AssembledRecord::image() const {
  return std::visit([](const auto& r) -> const ImageRef& { return r.image; }, record);
}

DatasetManifest parse_manifest(const std::string& text) {
  DatasetManifest manifest;
  try {
    const json doc = json::parse(text);
    if (!doc.is_object()) throw std::invalid_argument("manifest must be a JSON object");
    manifest.seed = doc.value("seed", std::uint64_t{0});
    std::set<std::string> names;
    for (const json& e : doc.at("entries")) {
      ManifestEntry entry;
      entry.name = e.at("name").get<std::string>();
      entry.path = e.at("path").get<std::string>();
      entry.expected_count = e.value("expected_count", std::int64_t{0});
      const std::string role = e.at("role").get<std::string>();
      if (role == "open_source") entry.role = DatasetRole::OpenSource;
      else if (role == "generated") entry.role = DatasetRole::Generated;
      else throw std::invalid_argument("unknown role '" + role + "'");
      entry.parents_path = e.value("parents", std::string{});
      entry.candidates_path = e.value("candidates", std::string{});
      if (entry.expected_count < 0) throw std::invalid_argument("expected_count must be >= 0 for " + entry.name);
      if (!names.insert(entry.name).second) throw std::invalid_argument("duplicate entry name '" + entry.name + "'");
      manifest.entries.push_back(std::move(entry));
    }
  } catch (const std::exception& e) {
    throw DatasetError(ErrorKind::InvariantViolation, std::string("manifest: ") + e.what());
  }
  return manifest;
}

DatasetManifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw DatasetError(ErrorKind::MissingFile, "manifest not found: " + path.string());
  return parse_manifest(read_file_text(path));
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    json j{{"name", e.name}, {"path", e.path}, {"expected_count", e.expected_count}, {"role", to_string(e.role)}};
    if (!e.parents_path.empty()) j["parents"] = e.parents_path;
    if (!e.candidates_path.empty()) j["candidates"] = e.candidates_path;
    entries.push_back(std::move(j));
  }
  return json{{"entries", entries}, {"seed", manifest.seed}}.dump();
}

namespace {

void check_count(const ManifestEntry& entry, std::size_t actual) {
  if (entry.expected_count != 0 && static_cast<std::int64_t>(actual) != entry.expected_count) {
    throw DatasetError(ErrorKind::CountMismatch, "entry '" + entry.name + "': expected " +
                                                     std::to_string(entry.expected_count) + " records, found " +
                                                     std::to_string(actual));
  }
}

}  // namespace

AssemblyResult assemble_mix(const DatasetManifest& manifest, AssemblyMode mode, const AssemblyInputs& inputs) {
  AssemblyResult result;
  std::mt19937_64 engine(manifest.seed);

  for (const auto& entry : manifest.entries) {
    auto it = inputs.find(entry.name);
    if (it == inputs.end()) throw DatasetError(ErrorKind::MissingFile, "no inputs for entry '" + entry.name + "'");
    const EntryInputs& in = it->second;
    std::int64_t count = 0;

    if (entry.role == DatasetRole::OpenSource) {
      check_count(entry, in.open_source.size());
      for (const auto& r : in.open_source) result.records.push_back({entry.name, entry.role, r});
      count = static_cast<std::int64_t>(in.open_source.size());
      result.stats.open_source_total += count;
    } else {
      check_count(entry, in.enhanced.size());
      std::map<std::string, const ProblemRecord*> parents;
      std::map<VariantKey, std::vector<const CandidateRecord*>> groups;
      if (mode == AssemblyMode::OriginalImage) {
        for (const auto& p : in.parents) parents.emplace(p.id, &p);
      } else if (mode == AssemblyMode::RandomCandidate) {
        for (const auto& c : in.candidates) {
          if (c.rendered) groups[c.parent].push_back(&c);
        }
        for (auto& [key, group] : groups) {
          std::sort(group.begin(), group.end(),
                    [](const auto* a, const auto* b) { return a->candidate_index < b->candidate_index; });
        }
      }

      for (EnhancedRecord r : in.enhanced) {
        if (mode == AssemblyMode::OriginalImage) {
          auto p = parents.find(r.provenance.parent_id);
          if (p == parents.end()) {
            throw DatasetError(ErrorKind::MissingParent,
                               "entry '" + entry.name + "': parent '" + r.provenance.parent_id + "' not found");
          }
          r.image = p->second->image;
        } else if (mode == AssemblyMode::RandomCandidate) {
          auto g = groups.find({r.provenance.parent_id, r.provenance.variant_index});
          if (g == groups.end() || g->second.empty()) {
            throw DatasetError(ErrorKind::InvariantViolation,
                               "entry '" + entry.name + "': no rendered candidates for '" + r.id + "'");
          }
          const CandidateRecord* pick = g->second[uniform_index(engine, g->second.size())];
          r.image = pick->image;
          r.score = pick->score;
          r.provenance.candidate_index = pick->candidate_index;
        }
        result.records.push_back({entry.name, entry.role, std::move(r)});
      }
      count = static_cast<std::int64_t>(in.enhanced.size());
      result.stats.generated_total += count;
    }
    result.stats.per_entry.push_back({entry.name, entry.role, count});
  }
  result.stats.total = result.stats.generated_total + result.stats.open_source_total;
  return result;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string rebase(const fs::path& file_dir, const std::string& image, const fs::path& output_dir) {
  if (image.empty()) return image;
  const fs::path abs_image = fs::absolute(resolve(file_dir, image)).lexically_normal();
  const fs::path abs_out = fs::absolute(output_dir).lexically_normal();
  const fs::path rel = abs_image.lexically_relative(abs_out);
  return rel.empty() ? abs_image.generic_string() : rel.generic_string();
}

}  // namespace

AssemblyInputs load_assembly_inputs(const DatasetManifest& manifest, AssemblyMode mode, const fs::path& manifest_dir,
                                    const fs::path& output_dir) {
  AssemblyInputs inputs;
  for (const auto& entry : manifest.entries) {
    EntryInputs in;
    const fs::path path = resolve(manifest_dir, entry.path);
    const fs::path dir = path.parent_path();
    if (entry.role == DatasetRole::OpenSource) {
      in.open_source = read_problems(path);
      for (auto& r : in.open_source) r.image.path = rebase(dir, r.image.path, output_dir);
    } else {
      in.enhanced = read_enhanced(path);
      for (auto& r : in.enhanced) r.image.path = rebase(dir, r.image.path, output_dir);
      if (mode == AssemblyMode::OriginalImage) {
        if (entry.parents_path.empty()) {
          throw DatasetError(ErrorKind::MissingFile, "entry '" + entry.name + "' needs \"parents\" in original mode");
        }
        const fs::path pp = resolve(manifest_dir, entry.parents_path);
        in.parents = read_problems(pp);
        for (auto& r : in.parents) r.image.path = rebase(pp.parent_path(), r.image.path, output_dir);
      } else if (mode == AssemblyMode::RandomCandidate) {
        if (entry.candidates_path.empty()) {
          throw DatasetError(ErrorKind::MissingFile, "entry '" + entry.name + "' needs \"candidates\" in random mode");
        }
        const fs::path cp = resolve(manifest_dir, entry.candidates_path);
        in.candidates = read_candidates(cp);
        for (auto& c : in.candidates) c.image.path = rebase(cp.parent_path(), c.image.path, output_dir);
      }
    }
    inputs.emplace(entry.name, std::move(in));
  }
  return inputs;
}

std::size_t write_assembled(const std::vector<AssembledRecord>& records, const fs::path& path) {
  std::vector<AnyRecord> any;
  any.reserve(records.size());
  for (const auto& r : records) {
    std::visit([&](const auto& rec) { any.emplace_back(rec); }, r.record);
  }
  return write_records(any, path);
}

std::string stats_to_json_lines(const AssemblyStats& stats) {
  std::string out;
  for (const auto& e : stats.per_entry) {
    out += json{{"entry", e.name}, {"role", to_string(e.role)}, {"count", e.count}}.dump() + "\n";
  }
  out += json{{"generated_total", stats.generated_total},
              {"open_source_total", stats.open_source_total},
              {"total", stats.total},
              {"deduplicated", stats.deduplicated}}
             .dump() +
         "\n";
  return out;
}

}  // namespace geoforge::dataset
