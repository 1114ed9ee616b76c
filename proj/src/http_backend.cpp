// SPDX-License-Identifier: Apache-2.0
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "redloop/clients.hpp"

namespace redloop::clients {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("endpoint is not a URL: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport final : public HttpTransport {
 public:
  HttpResponse post(const std::string& url, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>& headers, int timeout_ms) override {
    const ParsedUrl parts = split_url(url);
    httplib::Client client(parts.origin);
    const auto timeout = std::chrono::milliseconds(timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(parts.path, h, body, "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
  }
};

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void real_sleep_seconds(double s) {
  if (s > 0) std::this_thread::sleep_for(std::chrono::duration<double>(s));
}

}  // namespace

std::shared_ptr<HttpTransport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

TokenBucket::TokenBucket(double rate_per_second, Clock clock, Sleep sleep)
    : rate_(rate_per_second),
      capacity_(std::max(1.0, rate_per_second)),
      tokens_(capacity_),
      clock_(clock ? std::move(clock) : Clock(steady_seconds)),
      sleep_(sleep ? std::move(sleep) : Sleep(real_sleep_seconds)) {
  if (!(rate_per_second > 0.0)) throw ConfigError("rate limit must be positive");
  last_ = clock_();
}

void TokenBucket::acquire() {
  std::lock_guard lock(mutex_);
  for (;;) {
    const double now = clock_();
    tokens_ = std::min(capacity_, tokens_ + (now - last_) * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    sleep_((1.0 - tokens_) / rate_);
  }
}

HttpBackend::HttpBackend(BackendDescriptor descriptor, std::shared_ptr<HttpTransport> transport, RetryPolicy retry,
                         std::shared_ptr<TokenBucket> bucket)
    : descriptor_(std::move(descriptor)),
      transport_(std::move(transport)),
      retry_(std::move(retry)),
      bucket_(std::move(bucket)) {
  descriptor_.validate();
  if (!transport_) throw ConfigError("HttpBackend needs a transport");
  if (!bucket_) bucket_ = std::make_shared<TokenBucket>(descriptor_.rate_limit);
  if (!retry_.sleep_ms) retry_.sleep_ms = [](double ms) { real_sleep_seconds(ms / 1000.0); };
}

std::string HttpBackend::version() const {
  if (descriptor_.params.contains("model_version")) return descriptor_.params["model_version"].dump();
  return descriptor_.endpoint;
}

Json HttpBackend::invoke(const Json& request) {
  Json wire = request;
  if (!descriptor_.params.empty()) wire["params"] = descriptor_.params;
  const std::string body = wire.dump();

  std::vector<std::pair<std::string, std::string>> headers;
  if (!descriptor_.auth_ref.empty()) {
    const char* secret = std::getenv(descriptor_.auth_ref.c_str());
    if (!secret) throw ConfigError("environment variable " + descriptor_.auth_ref + " is not set");
    headers.emplace_back("Authorization", std::string("Bearer ") + secret);
  }

  std::vector<std::string> attempts;
  double backoff = retry_.base_backoff_ms;
  for (int attempt = 0; attempt <= descriptor_.max_retries; ++attempt) {
    if (attempt > 0) {
      retry_.sleep_ms(backoff);
      backoff = std::min(backoff * 2.0, retry_.max_backoff_ms);
      std::lock_guard lock(mutex_);
      ++retries_;
    }
    bucket_->acquire();
    const HttpResponse res = transport_->post(descriptor_.endpoint, body, headers, descriptor_.timeout_ms);
    attempts.push_back("attempt " + std::to_string(attempt + 1) + ": " +
                       (res.status == 0 ? "transport error " + res.error : "HTTP " + std::to_string(res.status)));
    {
      std::lock_guard lock(mutex_);
      last_attempts_ = attempts;
    }
    if (res.status >= 200 && res.status < 300) {
      try {
        return Json::parse(res.body);
      } catch (const nlohmann::json::exception&) {
        throw MalformedPayloadError("response from " + descriptor_.endpoint + " is not JSON", res.body);
      }
    }
    const bool retryable = res.status == 0 || res.status == 429 || res.status >= 500;
    if (!retryable)
      throw BackendError(std::string(role_name(descriptor_.role)) + " backend rejected the request", attempts);
  }
  throw BackendError(std::string(role_name(descriptor_.role)) + " backend failed after " +
                         std::to_string(attempts.size()) + " attempts",
                     attempts);
}

}  // namespace redloop::clients
