#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include "geoforge/digest.hpp"
#include "geoforge/error.hpp"

namespace geoforge::gateway {

enum class ErrorKind { CassetteMiss, ProviderError, RateLimited, InvalidRequest, CassetteIo, MissingCredentials };

class GatewayError : public KindedError<ErrorKind> {
 public:
  GatewayError(ErrorKind kind, const std::string& message, int status = 0)
      : KindedError(kind, message), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

enum class Role { System, User };

struct Image {
  Bytes bytes;
  std::string media_type = "image/png";
  bool operator==(const Image&) const = default;
};

struct Message {
  Role role = Role::User;
  std::string text;
  std::vector<Image> images;
  bool operator==(const Message&) const = default;
};

struct Sampling {
  double temperature = 0.0;
  int max_output_tokens = 1024;
  bool operator==(const Sampling&) const = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<Message> messages;
  Sampling sampling;
  bool operator==(const ChatRequest&) const = default;
};

enum class FinishReason { Complete, Truncated, Refused };

struct Usage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  bool operator==(const Usage&) const = default;
};

struct ChatResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::Complete;
  Usage usage;
  bool operator==(const ChatResponse&) const = default;
};

std::string to_string(Role role);
std::string to_string(FinishReason reason);
FinishReason finish_reason_from_string(const std::string& text);

// Throws InvalidRequest when the request has no messages, an empty model id,
// a negative temperature or a non-positive token budget.
void validate(const ChatRequest& request);

// Lowercase hex SHA-256 over a canonical, length-prefixed serialization of
// the request. Images contribute their media type and content digest.
std::string fingerprint(const ChatRequest& request);

// What a cassette keeps about the request, for humans and audits. Images are
// reduced to their digests.
struct RequestSummary {
  struct Part {
    Role role = Role::User;
    std::string text;
    std::vector<std::string> image_sha256;
    bool operator==(const Part&) const = default;
  };
  std::string model_id;
  std::vector<Part> messages;
  bool operator==(const RequestSummary&) const = default;
};

RequestSummary summarize(const ChatRequest& request);

struct CassetteEntry {
  std::string fingerprint;
  ChatResponse response;
  std::int64_t hit_count = 0;
  RequestSummary request;
};

// Fingerprint-keyed store of recorded responses. Thread-safe. Files are one
// JSON object per line, sorted by fingerprint so re-recording is diffable.
class Cassette {
 public:
  Cassette() = default;
  static std::shared_ptr<Cassette> load(const std::filesystem::path& path);

  // Returns the recorded response and bumps its hit count.
  std::optional<ChatResponse> replay(const std::string& fingerprint);
  bool contains(const std::string& fingerprint) const;
  // Inserts unless the fingerprint is already present; returns whether it
  // was inserted.
  bool insert(CassetteEntry entry);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const;
  std::vector<CassetteEntry> entries() const;
  std::int64_t hit_count(const std::string& fingerprint) const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, CassetteEntry> entries_;
};

// Result of one provider attempt. `transient` marks failures worth retrying
// (connection errors, 429, 5xx).
struct ProviderResult {
  std::optional<ChatResponse> response;
  int status = 0;
  std::string body;
  bool transient = false;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderResult send(const ChatRequest& request) = 0;
};

// Provider-style chat-completion endpoint over HTTP(S).
class HttpChatProvider : public Provider {
 public:
  HttpChatProvider(std::string api_base, std::string api_key,
                   std::chrono::seconds timeout = std::chrono::seconds(120));
  ProviderResult send(const ChatRequest& request) override;

  static std::string request_body(const ChatRequest& request);
  static ChatResponse parse_response_body(const std::string& body);

 private:
  std::string api_base_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

enum class Mode { Live, Record, Replay };
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& text);

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{1000};
  double factor = 2.0;
  bool jitter = false;
  // Replaced in tests so backoff costs no wall time.
  std::function<void(std::chrono::milliseconds)> sleep;

  std::chrono::milliseconds delay_for(int attempt) const;
};

struct GatewayOptions {
  Mode mode = Mode::Replay;
  RetryPolicy retry;
  std::size_t max_in_flight = 4;
  // Record mode rewrites this file after every new entry; empty disables.
  std::filesystem::path cassette_path;
};

struct GatewayStats {
  std::int64_t requests = 0;
  std::int64_t provider_calls = 0;
  std::int64_t retries = 0;
  std::int64_t cassette_hits = 0;
  std::int64_t recorded = 0;
  std::int64_t peak_in_flight = 0;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<Provider> provider, std::shared_ptr<Cassette> cassette, GatewayOptions options);

  ChatResponse complete(const ChatRequest& request);
  ChatResponse complete(const ChatRequest& request, Mode mode);

  Mode mode() const { return options_.mode; }
  GatewayStats stats() const;
  const std::shared_ptr<Cassette>& cassette() const { return cassette_; }

 private:
  ChatResponse call_with_retries(const ChatRequest& request);

  std::shared_ptr<Provider> provider_;
  std::shared_ptr<Cassette> cassette_;
  GatewayOptions options_;
  std::counting_semaphore<1 << 16> in_flight_;
  std::atomic<std::int64_t> current_in_flight_{0};
  mutable std::mutex stats_mutex_;
  std::mutex save_mutex_;
  GatewayStats stats_;
};

struct Environment {
  std::string api_key;
  std::string api_base = "https://api.openai.com/v1";
  std::string model_vlm = "gpt-4-vision-preview";
  std::string model_text = "gpt-4-1106-preview";
};

// Reads GEOFORGE_API_KEY, GEOFORGE_API_BASE, GEOFORGE_MODEL_VLM and
// GEOFORGE_MODEL_TEXT, keeping defaults for unset variables.
Environment environment_from_process();

}  // namespace geoforge::gateway
