#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>

#include "ditto/common.hpp"
#include "ditto/jsonl.hpp"

namespace ditto {

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_multiplier = 2.0;
  std::chrono::milliseconds max_backoff{10'000};

  std::chrono::milliseconds backoff_for(int attempt) const {
    double ms = static_cast<double>(initial_backoff.count());
    for (int i = 1; i < attempt; ++i) ms *= backoff_multiplier;
    ms = std::min(ms, static_cast<double>(max_backoff.count()));
    return std::chrono::milliseconds(static_cast<long>(ms));
  }

  json to_json() const {
    return json{{"max_attempts", max_attempts},
                {"initial_backoff_ms", initial_backoff.count()},
                {"backoff_multiplier", backoff_multiplier},
                {"max_backoff_ms", max_backoff.count()}};
  }

  static RetryPolicy from_json(const json& j) {
    RetryPolicy p;
    p.max_attempts = j.value("max_attempts", 3);
    p.initial_backoff = std::chrono::milliseconds(j.value("initial_backoff_ms", 500));
    p.backoff_multiplier = j.value("backoff_multiplier", 2.0);
    p.max_backoff = std::chrono::milliseconds(j.value("max_backoff_ms", 10'000));
    return p;
  }
};

// Paces callers to at most `requests_per_minute`, shared across worker
// threads. The clock is injectable so pacing logic is testable without
// sleeping.
class RateLimiter {
public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit RateLimiter(double requests_per_minute, Clock clock = nullptr,
                       Sleeper sleeper = nullptr)
      : interval_(requests_per_minute <= 0
                      ? std::chrono::milliseconds(0)
                      : std::chrono::milliseconds(static_cast<long>(60'000.0 / requests_per_minute))),
        clock_(clock ? std::move(clock) : [] { return std::chrono::steady_clock::now(); }),
        sleeper_(sleeper ? std::move(sleeper)
                         : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

  void acquire() {
    if (interval_.count() == 0) return;
    std::chrono::milliseconds wait{0};
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto now = clock_();
      if (!has_next_) {
        next_slot_ = now;
        has_next_ = true;
      }
      if (next_slot_ > now)
        wait = std::chrono::duration_cast<std::chrono::milliseconds>(next_slot_ - now);
      next_slot_ = std::max(next_slot_, now) + interval_;
    }
    if (wait.count() > 0) sleeper_(wait);
  }

  std::chrono::milliseconds interval() const { return interval_; }

private:
  std::chrono::milliseconds interval_;
  Clock clock_;
  Sleeper sleeper_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_slot_{};
  bool has_next_ = false;
};

// ---------------------------------------------------------------------------
// Cached HTTP fetching for the knowledge-base clients
// ---------------------------------------------------------------------------

enum class CacheMode { off, record, replay, readwrite };

inline CacheMode cache_mode_from_string(std::string_view s) {
  if (s == "off") return CacheMode::off;
  if (s == "record") return CacheMode::record;
  if (s == "replay") return CacheMode::replay;
  if (s == "readwrite") return CacheMode::readwrite;
  throw ConfigError("unknown cache mode: '" + std::string(s) + "'");
}

struct HttpRequest {
  std::string method = "GET";
  std::string endpoint;  // scheme://host[:port]
  std::string target;    // path + query string
  std::string body;
  std::string content_type;

  std::string url() const { return endpoint + target; }
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string fetched_at;  // ISO 8601
};

class HttpCache {
public:
  HttpCache() = default;
  explicit HttpCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::string key_of(const HttpRequest& req) {
    return sha256_hex(req.endpoint + "\n" + req.method + "\n" + req.target + "\n" + req.body);
  }

  bool enabled() const { return !dir_.empty(); }

  std::optional<HttpResponse> lookup(const HttpRequest& req) const {
    auto path = entry_path(req);
    if (!std::filesystem::exists(path)) return std::nullopt;
    json j = json::parse(read_file(path));
    HttpResponse resp;
    resp.status = j.at("status").get<int>();
    resp.body = j.at("body").get<std::string>();
    resp.fetched_at = j.value("fetched_at", "");
    return resp;
  }

  void store(const HttpRequest& req, const HttpResponse& resp) const {
    json j{{"schema", "http-cache/1"},
           {"fetched_at", resp.fetched_at},
           {"endpoint", req.endpoint},
           {"method", req.method},
           {"target", req.target},
           {"request_body", req.body},
           {"status", resp.status},
           {"body", resp.body}};
    write_file(entry_path(req), j.dump(2) + "\n");
  }

  std::filesystem::path entry_path(const HttpRequest& req) const {
    return dir_ / (key_of(req) + ".json");
  }

private:
  std::filesystem::path dir_;
};

// Fetches with caching, bounded retries on transient failures, and a per-host
// rate limit. In replay mode no network traffic is ever issued.
class CachedHttpFetcher {
public:
  CachedHttpFetcher(HttpCache cache, CacheMode mode, RetryPolicy retry,
                    double requests_per_minute)
      : cache_(std::move(cache)),
        mode_(mode),
        retry_(retry),
        limiter_(std::make_shared<RateLimiter>(requests_per_minute)) {
    if ((mode_ == CacheMode::replay || mode_ == CacheMode::record ||
         mode_ == CacheMode::readwrite) &&
        !cache_.enabled())
      throw ConfigError("cache mode requires a cache directory");
  }

  HttpResponse fetch(const HttpRequest& req) {
    if (mode_ == CacheMode::replay || mode_ == CacheMode::readwrite) {
      if (auto hit = cache_.lookup(req)) {
        note_snapshot(hit->fetched_at);
        return *hit;
      }
      if (mode_ == CacheMode::replay)
        throw TransportError("replay cache miss for " + req.method + " " + req.url() +
                             " (key " + HttpCache::key_of(req) + ")");
    }
    HttpResponse resp = fetch_live(req);
    if (mode_ == CacheMode::record || mode_ == CacheMode::readwrite) cache_.store(req, resp);
    note_snapshot(resp.fetched_at);
    return resp;
  }

  // Latest fetched_at across everything served so far; the store's snapshot
  // provenance, stable under replay.
  std::string snapshot() const {
    std::lock_guard<std::mutex> lock(snapshot_mutex_);
    return snapshot_;
  }

private:
  HttpResponse fetch_live(const HttpRequest& req) {
    std::string last_detail;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
      if (attempt > 1) std::this_thread::sleep_for(retry_.backoff_for(attempt - 1));
      limiter_->acquire();
      httplib::Client client(req.endpoint);
      client.set_connection_timeout(15, 0);
      client.set_read_timeout(60, 0);
      client.set_follow_location(true);
      httplib::Result result =
          req.method == "POST"
              ? client.Post(req.target, req.body,
                            req.content_type.empty() ? "application/x-www-form-urlencoded"
                                                     : req.content_type)
              : client.Get(req.target);
      if (!result) {
        last_detail = "attempt " + std::to_string(attempt) + ": " +
                      httplib::to_string(result.error());
        continue;
      }
      if (result->status >= 500) {
        last_detail = "attempt " + std::to_string(attempt) + ": HTTP " +
                      std::to_string(result->status);
        continue;
      }
      return HttpResponse{result->status, result->body, now_iso8601()};
    }
    throw TransportError("endpoint unreachable: " + req.url() + " after " +
                         std::to_string(retry_.max_attempts) + " attempts (" + last_detail + ")");
  }

  void note_snapshot(const std::string& fetched_at) {
    std::lock_guard<std::mutex> lock(snapshot_mutex_);
    if (snapshot_ < fetched_at) snapshot_ = fetched_at;
  }

  HttpCache cache_;
  CacheMode mode_;
  RetryPolicy retry_;
  std::shared_ptr<RateLimiter> limiter_;
  mutable std::mutex snapshot_mutex_;
  std::string snapshot_;
};

inline std::string url_encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xf]);
    }
  }
  return out;
}

}  // namespace ditto
