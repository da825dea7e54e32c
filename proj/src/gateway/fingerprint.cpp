#include <charconv>
#include <cstdlib>

#include "geoforge/gateway.hpp"

namespace geoforge::gateway {

std::string to_string(Role role) { return role == Role::System ? "system" : "user"; }

std::string to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::Complete: return "complete";
    case FinishReason::Truncated: return "truncated";
    case FinishReason::Refused: return "refused";
  }
  return "complete";
}

FinishReason finish_reason_from_string(const std::string& text) {
  if (text == "complete") return FinishReason::Complete;
  if (text == "truncated") return FinishReason::Truncated;
  if (text == "refused") return FinishReason::Refused;
  throw std::invalid_argument("unknown finish_reason '" + text + "'");
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::Live: return "live";
    case Mode::Record: return "record";
    case Mode::Replay: return "replay";
  }
  return "replay";
}

Mode mode_from_string(const std::string& text) {
  if (text == "live") return Mode::Live;
  if (text == "record") return Mode::Record;
  if (text == "replay") return Mode::Replay;
  throw std::invalid_argument("unknown mode '" + text + "' (expected live|record|replay)");
}

void validate(const ChatRequest& request) {
  if (request.model_id.empty()) throw GatewayError(ErrorKind::InvalidRequest, "request has no model id");
  if (request.messages.empty()) throw GatewayError(ErrorKind::InvalidRequest, "request has no messages");
  if (!(request.sampling.temperature >= 0.0)) throw GatewayError(ErrorKind::InvalidRequest, "temperature must be >= 0");
  if (request.sampling.max_output_tokens <= 0) {
    throw GatewayError(ErrorKind::InvalidRequest, "max_output_tokens must be > 0");
  }
}

namespace {

// Every field is written as tag, decimal length, ':' and the raw bytes, so no
// two distinct requests share a serialization.
void put(Sha256& h, char tag, std::string_view value) {
  std::string head(1, tag);
  head += std::to_string(value.size());
  head += ':';
  h.update(head);
  h.update(value);
}

std::string shortest(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

}  // namespace

std::string fingerprint(const ChatRequest& request) {
  Sha256 h;
  h.update("geoforge.chat.v1\n");
  put(h, 'M', request.model_id);
  put(h, 'T', shortest(request.sampling.temperature));
  put(h, 'O', std::to_string(request.sampling.max_output_tokens));
  put(h, 'N', std::to_string(request.messages.size()));
  for (const auto& m : request.messages) {
    put(h, 'R', to_string(m.role));
    put(h, 'X', m.text);
    put(h, 'I', std::to_string(m.images.size()));
    for (const auto& img : m.images) {
      put(h, 'Y', img.media_type);
      put(h, 'D', sha256_hex(img.bytes));
    }
  }
  return h.hex_digest();
}

RequestSummary summarize(const ChatRequest& request) {
  RequestSummary s;
  s.model_id = request.model_id;
  for (const auto& m : request.messages) {
    RequestSummary::Part part{m.role, m.text, {}};
    for (const auto& img : m.images) part.image_sha256.push_back(sha256_hex(img.bytes));
    s.messages.push_back(std::move(part));
  }
  return s;
}

Environment environment_from_process() {
  Environment env;
  auto get = [](const char* name, std::string& out) {
    if (const char* v = std::getenv(name); v != nullptr && *v != '\0') out = v;
  };
  get("GEOFORGE_API_KEY", env.api_key);
  get("GEOFORGE_API_BASE", env.api_base);
  get("GEOFORGE_MODEL_VLM", env.model_vlm);
  get("GEOFORGE_MODEL_TEXT", env.model_text);
  return env;
}

}  // namespace geoforge::gateway
