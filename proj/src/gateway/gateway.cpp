#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "geoforge/gateway.hpp"

namespace geoforge::gateway {

std::chrono::milliseconds RetryPolicy::delay_for(int attempt) const {
  // attempt is 1-based; the wait before attempt n+1 is base * factor^(n-1).
  double ms = static_cast<double>(base_delay.count()) * std::pow(factor, attempt - 1);
  if (jitter) {
    thread_local std::mt19937_64 engine{std::random_device{}()};
    ms *= std::uniform_real_distribution<double>(0.5, 1.0)(engine);
  }
  return std::chrono::milliseconds(static_cast<std::int64_t>(ms));
}

Gateway::Gateway(std::shared_ptr<Provider> provider, std::shared_ptr<Cassette> cassette, GatewayOptions options)
    : provider_(std::move(provider)),
      cassette_(cassette ? std::move(cassette) : std::make_shared<Cassette>()),
      options_(std::move(options)),
      in_flight_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options_.max_in_flight))) {
  if (options_.retry.max_attempts < 1) options_.retry.max_attempts = 1;
}

ChatResponse Gateway::complete(const ChatRequest& request) { return complete(request, options_.mode); }

ChatResponse Gateway::complete(const ChatRequest& request, Mode mode) {
  validate(request);
  {
    std::lock_guard lock(stats_mutex_);
    ++stats_.requests;
  }
  const std::string fp = fingerprint(request);

  if (mode == Mode::Replay || mode == Mode::Record) {
    if (auto hit = cassette_->replay(fp)) {
      std::lock_guard lock(stats_mutex_);
      ++stats_.cassette_hits;
      return *hit;
    }
    if (mode == Mode::Replay) {
      throw GatewayError(ErrorKind::CassetteMiss, "cassette miss for fingerprint " + fp);
    }
  }

  ChatResponse response = call_with_retries(request);

  if (mode == Mode::Record) {
    if (cassette_->insert(CassetteEntry{fp, response, 0, summarize(request)})) {
      {
        std::lock_guard lock(stats_mutex_);
        ++stats_.recorded;
      }
      if (!options_.cassette_path.empty()) {
        std::lock_guard lock(save_mutex_);
        cassette_->save(options_.cassette_path);
      }
    }
  }
  return response;
}

ChatResponse Gateway::call_with_retries(const ChatRequest& request) {
  if (!provider_) throw GatewayError(ErrorKind::MissingCredentials, "no live provider configured");
  const RetryPolicy& retry = options_.retry;
  ProviderResult last;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    {
      in_flight_.acquire();
      const std::int64_t now = ++current_in_flight_;
      {
        std::lock_guard lock(stats_mutex_);
        ++stats_.provider_calls;
        stats_.peak_in_flight = std::max(stats_.peak_in_flight, now);
      }
      try {
        last = provider_->send(request);
      } catch (...) {
        --current_in_flight_;
        in_flight_.release();
        throw;
      }
      --current_in_flight_;
      in_flight_.release();
    }
    if (last.response) return *last.response;
    if (!last.transient) break;
    if (attempt < retry.max_attempts) {
      const auto delay = retry.delay_for(attempt);
      spdlog::debug("provider attempt {} failed with status {}; retrying in {} ms", attempt, last.status,
                    delay.count());
      {
        std::lock_guard lock(stats_mutex_);
        ++stats_.retries;
      }
      if (retry.sleep) retry.sleep(delay);
      else std::this_thread::sleep_for(delay);
    }
  }
  const std::string excerpt = last.body.substr(0, 200);
  if (last.status == 429) {
    throw GatewayError(ErrorKind::RateLimited, "rate limited after retries: " + excerpt, last.status);
  }
  throw GatewayError(ErrorKind::ProviderError,
                     "provider error (status " + std::to_string(last.status) + "): " + excerpt, last.status);
}

GatewayStats Gateway::stats() const {
  std::lock_guard lock(stats_mutex_);
  return stats_;
}

}  // namespace geoforge::gateway
