#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include <regex>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "geoforge/gateway.hpp"

namespace geoforge::gateway {
using nlohmann::json;

HttpChatProvider::HttpChatProvider(std::string api_base, std::string api_key, std::chrono::seconds timeout)
    : api_base_(std::move(api_base)), api_key_(std::move(api_key)), timeout_(timeout) {
  if (api_key_.empty()) throw GatewayError(ErrorKind::MissingCredentials, "GEOFORGE_API_KEY is not set");
  while (!api_base_.empty() && api_base_.back() == '/') api_base_.pop_back();
}

std::string HttpChatProvider::request_body(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", m.text}});
    for (const auto& img : m.images) {
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:" + img.media_type + ";base64," + base64_encode(img.bytes)}}}});
    }
    messages.push_back({{"role", to_string(m.role)}, {"content", content}});
  }
  return json{{"model", request.model_id},
              {"messages", messages},
              {"temperature", request.sampling.temperature},
              {"max_tokens", request.sampling.max_output_tokens}}
      .dump();
}

ChatResponse HttpChatProvider::parse_response_body(const std::string& body) {
  const json doc = json::parse(body);
  const json& choice = doc.at("choices").at(0);
  ChatResponse r;
  const json& content = choice.at("message").at("content");
  r.text = content.is_string() ? content.get<std::string>() : std::string{};
  const std::string finish = choice.value("finish_reason", std::string("stop"));
  if (finish == "length") r.finish_reason = FinishReason::Truncated;
  else if (finish == "content_filter") r.finish_reason = FinishReason::Refused;
  else r.finish_reason = FinishReason::Complete;
  if (r.text.empty() && r.finish_reason == FinishReason::Complete) r.finish_reason = FinishReason::Refused;
  if (auto u = doc.find("usage"); u != doc.end()) {
    r.usage.input_tokens = u->value("prompt_tokens", std::int64_t{0});
    r.usage.output_tokens = u->value("completion_tokens", std::int64_t{0});
  }
  return r;
}

namespace {

std::string redact(const std::string& body) {
  static const std::regex k_inline_image(R"(data:image/[a-z+]+;base64,[A-Za-z0-9+/=]+)");
  return std::regex_replace(body, k_inline_image, "<image redacted>");
}

}  // namespace

ProviderResult HttpChatProvider::send(const ChatRequest& request) {
  // The base may carry a path prefix such as https://host/v1.
  std::string host = api_base_;
  std::string path = "/chat/completions";
  if (auto scheme = api_base_.find("://"); scheme != std::string::npos) {
    if (auto slash = api_base_.find('/', scheme + 3); slash != std::string::npos) {
      host = api_base_.substr(0, slash);
      path = api_base_.substr(slash) + path;
    }
  }
  httplib::Client client(host);
  client.set_connection_timeout(timeout_);
  client.set_read_timeout(timeout_);
  client.set_write_timeout(timeout_);
  client.set_bearer_token_auth(api_key_);

  const std::string body = request_body(request);
  spdlog::debug("POST {} body={}", path, redact(body));
  auto res = client.Post(path, body, "application/json");

  ProviderResult out;
  if (!res) {
    out.transient = true;
    out.body = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.body = res->body;
  spdlog::debug("response status={} body={}", res->status, redact(res->body.substr(0, 2000)));
  if (res->status == 200) {
    try {
      out.response = parse_response_body(res->body);
    } catch (const std::exception& e) {
      out.body = std::string("unparseable response: ") + e.what();
    }
    return out;
  }
  out.transient = res->status == 429 || res->status >= 500;
  return out;
}

}  // namespace geoforge::gateway
