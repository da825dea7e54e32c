#include <fstream>

#include "json.hpp"

#include "geoforge/fsutil.hpp"
#include "geoforge/gateway.hpp"

namespace geoforge::gateway {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json entry_to_json(const CassetteEntry& e) {
  json messages = json::array();
  for (const auto& part : e.request.messages) {
    messages.push_back({{"role", to_string(part.role)}, {"text", part.text}, {"images", part.image_sha256}});
  }
  return json{{"fingerprint", e.fingerprint},
              {"hit_count", e.hit_count},
              {"request", {{"model", e.request.model_id}, {"messages", messages}}},
              {"response",
               {{"text", e.response.text},
                {"finish_reason", to_string(e.response.finish_reason)},
                {"usage",
                 {{"input_tokens", e.response.usage.input_tokens},
                  {"output_tokens", e.response.usage.output_tokens}}}}}};
}

CassetteEntry entry_from_json(const json& j) {
  CassetteEntry e;
  e.fingerprint = j.at("fingerprint").get<std::string>();
  e.hit_count = j.value("hit_count", std::int64_t{0});
  const json& r = j.at("response");
  e.response.text = r.at("text").get<std::string>();
  e.response.finish_reason = finish_reason_from_string(r.value("finish_reason", std::string("complete")));
  if (auto u = r.find("usage"); u != r.end()) {
    e.response.usage.input_tokens = u->value("input_tokens", std::int64_t{0});
    e.response.usage.output_tokens = u->value("output_tokens", std::int64_t{0});
  }
  if (auto q = j.find("request"); q != j.end()) {
    e.request.model_id = q->value("model", std::string{});
    for (const json& m : q->value("messages", json::array())) {
      RequestSummary::Part part;
      part.role = m.value("role", std::string("user")) == "system" ? Role::System : Role::User;
      part.text = m.value("text", std::string{});
      part.image_sha256 = m.value("images", std::vector<std::string>{});
      e.request.messages.push_back(std::move(part));
    }
  }
  return e;
}

}  // namespace

std::shared_ptr<Cassette> Cassette::load(const fs::path& path) {
  auto c = std::make_shared<Cassette>();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GatewayError(ErrorKind::CassetteIo, "cannot open cassette " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      CassetteEntry e = entry_from_json(json::parse(line));
      const std::string key = e.fingerprint;
      if (!c->entries_.emplace(key, std::move(e)).second) {
        throw std::invalid_argument("duplicate fingerprint " + key);
      }
    } catch (const std::exception& e) {
      throw GatewayError(ErrorKind::CassetteIo, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

std::optional<ChatResponse> Cassette::replay(const std::string& fingerprint) {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(fingerprint);
  if (it == entries_.end()) return std::nullopt;
  ++it->second.hit_count;
  return it->second.response;
}

bool Cassette::contains(const std::string& fingerprint) const {
  std::lock_guard lock(mutex_);
  return entries_.count(fingerprint) != 0;
}

bool Cassette::insert(CassetteEntry entry) {
  std::lock_guard lock(mutex_);
  const std::string key = entry.fingerprint;
  return entries_.emplace(key, std::move(entry)).second;
}

void Cassette::save(const fs::path& path) const {
  std::string body;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [key, e] : entries_) {
      // Hit counts are runtime statistics; persisting them would make a
      // replayed cassette drift from its committed form.
      CassetteEntry stored = e;
      stored.hit_count = 0;
      body += entry_to_json(stored).dump() + "\n";
    }
  }
  try {
    write_file_atomic(path, body);
  } catch (const std::exception& e) {
    throw GatewayError(ErrorKind::CassetteIo, e.what());
  }
}

std::size_t Cassette::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<CassetteEntry> Cassette::entries() const {
  std::lock_guard lock(mutex_);
  std::vector<CassetteEntry> out;
  for (const auto& [key, e] : entries_) out.push_back(e);
  return out;
}

std::int64_t Cassette::hit_count(const std::string& fingerprint) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(fingerprint);
  return it == entries_.end() ? 0 : it->second.hit_count;
}

}  // namespace geoforge::gateway
