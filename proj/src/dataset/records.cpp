#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "geoforge/dataset.hpp"
#include "geoforge/fsutil.hpp"

namespace geoforge::dataset {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Split split) { return split == Split::Train ? "train" : "test"; }

Split split_from_string(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + text + "'");
}

namespace {

// Field access that turns a missing key or wrong type into a message the
// caller wraps as MalformedLine.
const json& field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw std::invalid_argument(std::string("missing field \"") + key + "\"");
  return *it;
}

std::string str_field(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_string()) throw std::invalid_argument(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

std::string opt_str_field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return {};
  if (!it->is_string()) throw std::invalid_argument(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

int int_field(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_number_integer()) throw std::invalid_argument(std::string("field \"") + key + "\" must be an integer");
  return v.get<int>();
}

double num_field(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_number()) throw std::invalid_argument(std::string("field \"") + key + "\" must be a number");
  return v.get<double>();
}

json problem_json(const ProblemRecord& r) {
  json j;
  j["id"] = r.id;
  j["source_dataset"] = r.source_dataset;
  j["question"] = r.question;
  j["answer"] = r.answer;
  j["image"] = r.image.path;
  j["split"] = to_string(r.split);
  j["metadata"] = json::object();
  for (const auto& [k, v] : r.metadata) j["metadata"][k] = v;
  return j;
}

json generated_json(const GeneratedProblem& g) {
  return json{{"parent_id", g.parent_id},
              {"variant_index", g.variant_index},
              {"question", g.question},
              {"answer", g.answer},
              {"image_description", g.image_description}};
}

json enhanced_json(const EnhancedRecord& e) {
  json j;
  j["id"] = e.id;
  j["source_dataset"] = e.source_dataset;
  j["question"] = e.question;
  j["answer"] = e.answer;
  j["image"] = e.image.path;
  j["split"] = "train";
  j["metadata"] = json::object();
  j["score"] = e.score;
  j["provenance"] = json{{"source_dataset", e.provenance.source_dataset},
                         {"parent_id", e.provenance.parent_id},
                         {"variant_index", e.provenance.variant_index},
                         {"candidate_index", e.provenance.candidate_index}};
  return j;
}

json candidate_json(const CandidateRecord& c) {
  return json{{"parent_id", c.parent.parent_id},
              {"variant_index", c.parent.variant_index},
              {"candidate_index", c.candidate_index},
              {"status", c.rendered ? "rendered" : "failed"},
              {"image", c.image.path},
              {"score", c.score},
              {"reason", c.reason},
              {"diagnostic", c.diagnostic}};
}

ProblemRecord problem_from(const json& j) {
  ProblemRecord r;
  r.id = str_field(j, "id");
  r.source_dataset = str_field(j, "source_dataset");
  r.question = str_field(j, "question");
  r.answer = str_field(j, "answer");
  r.image.path = str_field(j, "image");
  r.split = split_from_string(str_field(j, "split"));
  if (auto it = j.find("metadata"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw std::invalid_argument("field \"metadata\" must be an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw std::invalid_argument("metadata values must be strings");
      r.metadata[k] = v.get<std::string>();
    }
  }
  return r;
}

GeneratedProblem generated_from(const json& j) {
  GeneratedProblem g;
  g.parent_id = str_field(j, "parent_id");
  g.variant_index = int_field(j, "variant_index");
  g.question = str_field(j, "question");
  g.answer = str_field(j, "answer");
  g.image_description = str_field(j, "image_description");
  return g;
}

EnhancedRecord enhanced_from(const json& j) {
  EnhancedRecord e;
  e.id = str_field(j, "id");
  e.source_dataset = str_field(j, "source_dataset");
  e.question = str_field(j, "question");
  e.answer = str_field(j, "answer");
  e.image.path = str_field(j, "image");
  e.score = num_field(j, "score");
  const json& p = field(j, "provenance");
  if (!p.is_object()) throw std::invalid_argument("field \"provenance\" must be an object");
  e.provenance.source_dataset = str_field(p, "source_dataset");
  e.provenance.parent_id = str_field(p, "parent_id");
  e.provenance.variant_index = int_field(p, "variant_index");
  e.provenance.candidate_index = int_field(p, "candidate_index");
  return e;
}

CandidateRecord candidate_from(const json& j) {
  CandidateRecord c;
  c.parent.parent_id = str_field(j, "parent_id");
  c.parent.variant_index = int_field(j, "variant_index");
  c.candidate_index = int_field(j, "candidate_index");
  const std::string status = str_field(j, "status");
  if (status != "rendered" && status != "failed") throw std::invalid_argument("unknown status '" + status + "'");
  c.rendered = status == "rendered";
  c.image.path = opt_str_field(j, "image");
  c.score = num_field(j, "score");
  c.reason = opt_str_field(j, "reason");
  c.diagnostic = opt_str_field(j, "diagnostic");
  return c;
}

std::string record_key(const AnyRecord& record) {
  return std::visit(
      [](const auto& r) -> std::string {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, GeneratedProblem>) {
          return r.parent_id + "#" + std::to_string(r.variant_index);
        } else if constexpr (std::is_same_v<T, CandidateRecord>) {
          return r.parent.parent_id + "#" + std::to_string(r.parent.variant_index) + "#" +
                 std::to_string(r.candidate_index);
        } else {
          return r.id;
        }
      },
      record);
}

void require(bool ok, const std::string& key, const char* what) {
  if (!ok) throw DatasetError(ErrorKind::InvariantViolation, "record '" + key + "': " + what);
}

}  // namespace

void validate(const AnyRecord& record) {
  const std::string key = record_key(record);
  std::visit(
      [&](const auto& r) {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ProblemRecord>) {
          require(!r.id.empty(), key, "id is empty");
          require(!r.question.empty(), key, "question is empty");
          require(!r.image.path.empty(), key, "image path is empty");
        } else if constexpr (std::is_same_v<T, GeneratedProblem>) {
          require(!r.parent_id.empty(), key, "parent_id is empty");
          require(r.variant_index >= 1, key, "variant_index must be >= 1");
          require(!r.question.empty(), key, "question is empty");
          require(!r.answer.empty(), key, "answer is empty");
          require(!r.image_description.empty(), key, "image_description is empty");
        } else if constexpr (std::is_same_v<T, EnhancedRecord>) {
          require(!r.id.empty(), key, "id is empty");
          require(!r.question.empty(), key, "question is empty");
          require(!r.image.path.empty(), key, "image path is empty");
          require(r.score >= 0.0 && r.score <= 1.0, key, "score outside [0,1]");
        } else {
          require(r.candidate_index >= 1, key, "candidate_index must be >= 1");
          require(r.score >= 0.0 && r.score <= 1.0, key, "score outside [0,1]");
          require(r.rendered || r.score == 0.0, key, "failed candidate must score 0");
          require(!r.rendered || !r.image.path.empty(), key, "rendered candidate needs an image");
        }
      },
      record);
}

std::string to_json_line(const AnyRecord& record) {
  json j = std::visit(
      [](const auto& r) -> json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ProblemRecord>) return problem_json(r);
        else if constexpr (std::is_same_v<T, GeneratedProblem>) return generated_json(r);
        else if constexpr (std::is_same_v<T, EnhancedRecord>) return enhanced_json(r);
        else return candidate_json(r);
      },
      record);
  try {
    return j.dump();
  } catch (const json::exception& e) {
    throw DatasetError(ErrorKind::InvariantViolation, "record '" + record_key(record) + "': " + e.what());
  }
}

std::vector<AnyRecord> read_records(const fs::path& path, RecordSchema schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DatasetError(fs::exists(path) ? ErrorKind::IoFailure : ErrorKind::MissingFile,
                       "cannot open " + path.string());
  }
  std::vector<AnyRecord> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    AnyRecord record;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw std::invalid_argument("line is not a JSON object");
      switch (schema) {
        case RecordSchema::Problem: record = problem_from(j); break;
        case RecordSchema::Generated: record = generated_from(j); break;
        case RecordSchema::Enhanced: record = enhanced_from(j); break;
        case RecordSchema::Candidate: record = candidate_from(j); break;
      }
      validate(record);
    } catch (const std::exception& e) {
      throw DatasetError(ErrorKind::MalformedLine,
                         path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
    if (!seen.insert(record_key(record)).second) {
      throw DatasetError(ErrorKind::DuplicateId,
                         path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + record_key(record) + "'",
                         line_no);
    }
    out.push_back(std::move(record));
  }
  return out;
}

std::size_t write_records(const std::vector<AnyRecord>& records, const fs::path& path) {
  std::string body;
  for (const auto& r : records) {
    validate(r);
    body += to_json_line(r);
    body += '\n';
  }
  try {
    write_file_atomic(path, body);
  } catch (const std::exception& e) {
    throw DatasetError(ErrorKind::IoFailure, e.what());
  }
  return records.size();
}

namespace {
template <typename T>
std::vector<T> read_typed(const fs::path& path, RecordSchema schema) {
  std::vector<T> out;
  for (auto& r : read_records(path, schema)) out.push_back(std::get<T>(std::move(r)));
  return out;
}
}  // namespace

std::vector<ProblemRecord> read_problems(const fs::path& path) {
  return read_typed<ProblemRecord>(path, RecordSchema::Problem);
}
std::vector<GeneratedProblem> read_generated(const fs::path& path) {
  return read_typed<GeneratedProblem>(path, RecordSchema::Generated);
}
std::vector<EnhancedRecord> read_enhanced(const fs::path& path) {
  return read_typed<EnhancedRecord>(path, RecordSchema::Enhanced);
}
std::vector<CandidateRecord> read_candidates(const fs::path& path) {
  return read_typed<CandidateRecord>(path, RecordSchema::Candidate);
}

}  // namespace geoforge::dataset
