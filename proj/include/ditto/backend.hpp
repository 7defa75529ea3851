#pragma once

#include <cstdlib>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ditto/http.hpp"
#include "ditto/jsonl.hpp"

namespace ditto {

inline constexpr const char* kCassetteSchema = "cassette/1";

struct ChatMessage {
  std::string role;  // system | user | assistant
  std::string content;

  json to_json() const { return json{{"role", role}, {"content", content}}; }
  static ChatMessage from_json(const json& j) {
    return ChatMessage{j.at("role").get<std::string>(), j.at("content").get<std::string>()};
  }
};

struct SamplingParams {
  double temperature = 0.7;
  double top_p = 1.0;
  double length_penalty = 1.0;
  std::uint32_t max_new_tokens = 2048;
  std::uint32_t context_budget = 8192;

  void validate() const {
    if (temperature < 0) throw ConfigError("sampling: temperature must be >= 0");
    if (top_p <= 0 || top_p > 1) throw ConfigError("sampling: top_p must be in (0,1]");
    if (max_new_tokens == 0) throw ConfigError("sampling: max_new_tokens must be positive");
    if (context_budget < max_new_tokens)
      throw ConfigError("sampling: context_budget must be >= max_new_tokens");
  }

  json to_json() const {
    return json{{"temperature", temperature},
                {"top_p", top_p},
                {"length_penalty", length_penalty},
                {"max_new_tokens", max_new_tokens},
                {"context_budget", context_budget}};
  }

  static SamplingParams from_json(const json& j) {
    SamplingParams p;
    p.temperature = j.value("temperature", 0.7);
    p.top_p = j.value("top_p", 1.0);
    p.length_penalty = j.value("length_penalty", 1.0);
    p.max_new_tokens = j.value("max_new_tokens", 2048u);
    p.context_budget = j.value("context_budget", 8192u);
    return p;
  }
};

// Inference defaults for dialogue simulation: topP 0.8, length penalty 1.1,
// 8,192 context, 2,048 new tokens.
inline SamplingParams simulation_sampling() {
  SamplingParams p;
  p.temperature = 0.7;
  p.top_p = 0.8;
  p.length_penalty = 1.1;
  p.max_new_tokens = 2048;
  p.context_budget = 8192;
  return p;
}

// Judging runs at temperature 0.2 (majority voting happens at the call site).
inline SamplingParams judge_sampling() {
  SamplingParams p;
  p.temperature = 0.2;
  p.top_p = 1.0;
  p.length_penalty = 1.0;
  p.max_new_tokens = 1024;
  p.context_budget = 8192;
  return p;
}

struct SamplingOverrides {
  std::optional<double> temperature;
  std::optional<std::uint32_t> max_new_tokens;

  SamplingParams apply(SamplingParams base) const {
    if (temperature) base.temperature = *temperature;
    if (max_new_tokens) base.max_new_tokens = *max_new_tokens;
    return base;
  }
};

enum class BackendMode { http, replay, record, scripted };

inline BackendMode backend_mode_from_string(std::string_view s) {
  if (s == "http") return BackendMode::http;
  if (s == "replay") return BackendMode::replay;
  if (s == "record") return BackendMode::record;
  throw ConfigError("unknown backend mode: '" + std::string(s) + "'");
}

struct BackendProfile {
  std::string name;
  std::string endpoint = "https://api.openai.com";
  std::string model;
  std::string auth_env = "OPENAI_API_KEY";  // env var holding the credential
  SamplingParams sampling;
  RetryPolicy retry;
  double requests_per_minute = 60;
  BackendMode mode = BackendMode::http;
  std::string cassette;  // path, for replay/record modes
  // Conservative chars-per-token estimate for budget checks; mixed en/zh.
  double chars_per_token = 3.4;

  void validate() const {
    if (name.empty()) throw ConfigError("backend profile without a name");
    sampling.validate();
    if ((mode == BackendMode::replay || mode == BackendMode::record) && cassette.empty())
      throw ConfigError("backend '" + name + "': replay/record mode requires a cassette path");
  }

  json to_json() const {
    json j{{"endpoint", endpoint},
           {"model", model},
           {"auth_env", auth_env},
           {"sampling", sampling.to_json()},
           {"retry", retry.to_json()},
           {"requests_per_minute", requests_per_minute},
           {"mode", mode == BackendMode::http     ? "http"
                    : mode == BackendMode::replay ? "replay"
                                                  : "record"},
           {"chars_per_token", chars_per_token}};
    if (!cassette.empty()) j["cassette"] = cassette;
    return j;
  }

  static BackendProfile from_json(const std::string& name, const json& j) {
    BackendProfile p;
    p.name = name;
    p.endpoint = j.value("endpoint", p.endpoint);
    p.model = j.value("model", "");
    p.auth_env = j.value("auth_env", p.auth_env);
    if (j.contains("sampling")) p.sampling = SamplingParams::from_json(j["sampling"]);
    if (j.contains("retry")) p.retry = RetryPolicy::from_json(j["retry"]);
    p.requests_per_minute = j.value("requests_per_minute", 60.0);
    p.mode = backend_mode_from_string(j.value("mode", "http"));
    p.cassette = j.value("cassette", "");
    p.chars_per_token = j.value("chars_per_token", 3.4);
    p.validate();
    return p;
  }

  std::size_t estimate_tokens(std::string_view text) const {
    return static_cast<std::size_t>(
        static_cast<double>(utf8_length(text)) / chars_per_token + 1.0);
  }
};

struct ChatUsage {
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;

  json to_json() const {
    return json{{"prompt_tokens", prompt_tokens}, {"completion_tokens", completion_tokens}};
  }
};

struct ChatResult {
  std::string text;
  ChatUsage usage;
  std::string fingerprint;
};

// Request fingerprint over canonical JSON: object keys are sorted by the
// serializer, so map key order never leaks into the hash.
inline std::string chat_fingerprint(const std::string& model,
                                    const std::vector<ChatMessage>& messages,
                                    const SamplingParams& sampling) {
  json msgs = json::array();
  for (const auto& m : messages) msgs.push_back(m.to_json());
  json j{{"model", model},
         {"messages", msgs},
         {"sampling",
          {{"temperature", sampling.temperature},
           {"top_p", sampling.top_p},
           {"length_penalty", sampling.length_penalty},
           {"max_new_tokens", sampling.max_new_tokens}}}};
  return sha256_hex(canonical_dump(j));
}

class ChatBackend {
public:
  virtual ~ChatBackend() = default;
  virtual ChatResult chat(const std::vector<ChatMessage>& messages,
                          const SamplingOverrides& overrides = {}) = 0;
  virtual const BackendProfile& profile() const = 0;
};

// ---------------------------------------------------------------------------
// Cassette: recorded request -> completions, consumed in order for
// multi-round calls on the same fingerprint.
// ---------------------------------------------------------------------------

struct CassetteEntry {
  std::string fingerprint;
  std::string model;
  std::vector<ChatMessage> messages;
  SamplingParams sampling;
  std::string completion;
  ChatUsage usage;

  json to_json() const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back(m.to_json());
    return json{{"fingerprint", fingerprint}, {"model", model},
                {"messages", msgs},          {"sampling", sampling.to_json()},
                {"completion", completion},  {"usage", usage.to_json()}};
  }

  static CassetteEntry from_json(const json& j) {
    CassetteEntry e;
    e.fingerprint = j.at("fingerprint").get<std::string>();
    e.model = j.value("model", "");
    for (const auto& m : j.at("messages")) e.messages.push_back(ChatMessage::from_json(m));
    if (j.contains("sampling")) e.sampling = SamplingParams::from_json(j["sampling"]);
    e.completion = j.at("completion").get<std::string>();
    if (j.contains("usage")) {
      e.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0ull);
      e.usage.completion_tokens = j["usage"].value("completion_tokens", 0ull);
    }
    return e;
  }
};

class Cassette {
public:
  static Cassette load(const std::filesystem::path& path) {
    Cassette c;
    c.path_ = path;
    auto file = read_jsonl(path, kCassetteSchema);
    std::size_t line_no = 1;  // header line
    for (const auto& rec : file.records) {
      ++line_no;
      try {
        c.entries_.push_back(CassetteEntry::from_json(rec));
      } catch (const json::exception& e) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    return c;
  }

  void save(const std::filesystem::path& path) const {
    std::vector<json> records;
    records.reserve(entries_.size());
    for (const auto& e : entries_) records.push_back(e.to_json());
    write_jsonl(path, kCassetteSchema, records);
  }

  void append(CassetteEntry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<CassetteEntry>& entries() const { return entries_; }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
  std::vector<CassetteEntry> entries_;
};

// Replays a cassette; never touches the network. A fingerprint miss is a
// hard error that names the nearest recorded fingerprint to aid debugging.
class ReplayBackend : public ChatBackend {
public:
  ReplayBackend(BackendProfile profile, Cassette cassette)
      : profile_(std::move(profile)) {
    for (auto& e : cassette.entries()) by_fingerprint_[e.fingerprint].push_back(e);
  }

  static std::unique_ptr<ReplayBackend> open(BackendProfile profile) {
    auto cassette = Cassette::load(profile.cassette);
    return std::make_unique<ReplayBackend>(std::move(profile), std::move(cassette));
  }

  ChatResult chat(const std::vector<ChatMessage>& messages,
                  const SamplingOverrides& overrides = {}) override {
    SamplingParams effective = overrides.apply(profile_.sampling);
    std::string fp = chat_fingerprint(profile_.model, messages, effective);
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = by_fingerprint_.find(fp);
    if (it == by_fingerprint_.end())
      throw TransportError("replay miss: no recording for fingerprint " + fp +
                           " (nearest recorded: " + nearest_locked(fp) + ")");
    auto& queue = it->second;
    std::size_t& consumed = consumed_[fp];
    if (consumed >= queue.size())
      throw TransportError("replay miss: all " + std::to_string(queue.size()) +
                           " recordings for fingerprint " + fp + " already consumed");
    const CassetteEntry& entry = queue[consumed++];
    return ChatResult{entry.completion, entry.usage, fp};
  }

  const BackendProfile& profile() const override { return profile_; }

private:
  std::string nearest_locked(const std::string& fp) const {
    if (by_fingerprint_.empty()) return "<cassette empty>";
    auto it = by_fingerprint_.lower_bound(fp);
    if (it == by_fingerprint_.end()) return std::prev(it)->first;
    return it->first;
  }

  BackendProfile profile_;
  std::map<std::string, std::vector<CassetteEntry>> by_fingerprint_;
  std::map<std::string, std::size_t> consumed_;
  std::mutex mutex_;
};

// Wraps a live backend and appends every exchange to a cassette file.
// Credentials travel in headers only and are never serialized.
class RecordingBackend : public ChatBackend {
public:
  RecordingBackend(std::unique_ptr<ChatBackend> inner, std::filesystem::path cassette_path)
      : inner_(std::move(inner)), path_(std::move(cassette_path)) {
    if (std::filesystem::exists(path_)) cassette_ = Cassette::load(path_);
  }

  ChatResult chat(const std::vector<ChatMessage>& messages,
                  const SamplingOverrides& overrides = {}) override {
    ChatResult result = inner_->chat(messages, overrides);
    SamplingParams effective = overrides.apply(inner_->profile().sampling);
    CassetteEntry entry;
    entry.fingerprint = result.fingerprint;
    entry.model = inner_->profile().model;
    entry.messages = messages;
    entry.sampling = effective;
    entry.completion = result.text;
    entry.usage = result.usage;
    std::lock_guard<std::mutex> lock(mutex_);
    cassette_.append(std::move(entry));
    cassette_.save(path_);
    return result;
  }

  const BackendProfile& profile() const override { return inner_->profile(); }

private:
  std::unique_ptr<ChatBackend> inner_;
  std::filesystem::path path_;
  Cassette cassette_;
  std::mutex mutex_;
};

// Deterministic in-process backend for tests and fixture generation. The
// handler sees the messages plus how many times this exact request was
// already issued, so multi-round calls can vary per round.
class ScriptedBackend : public ChatBackend {
public:
  using Handler = std::function<std::string(const std::vector<ChatMessage>&, std::size_t call_index)>;

  ScriptedBackend(BackendProfile profile, Handler handler)
      : profile_(std::move(profile)), handler_(std::move(handler)) {}

  ChatResult chat(const std::vector<ChatMessage>& messages,
                  const SamplingOverrides& overrides = {}) override {
    SamplingParams effective = overrides.apply(profile_.sampling);
    std::string fp = chat_fingerprint(profile_.model, messages, effective);
    std::size_t index;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      index = calls_[fp]++;
    }
    ChatResult r;
    r.text = handler_(messages, index);
    r.fingerprint = fp;
    r.usage.prompt_tokens = 0;
    r.usage.completion_tokens = 0;
    return r;
  }

  const BackendProfile& profile() const override { return profile_; }

private:
  BackendProfile profile_;
  Handler handler_;
  std::map<std::string, std::size_t> calls_;
  std::mutex mutex_;
};

// OpenAI-compatible chat-completions client. The only live wire dialect.
class HttpChatBackend : public ChatBackend {
public:
  explicit HttpChatBackend(BackendProfile profile)
      : profile_(std::move(profile)),
        limiter_(std::make_shared<RateLimiter>(profile_.requests_per_minute)) {}

  ChatResult chat(const std::vector<ChatMessage>& messages,
                  const SamplingOverrides& overrides = {}) override {
    if (messages.empty()) throw PreconditionError("chat: messages must be non-empty");
    SamplingParams effective = overrides.apply(profile_.sampling);
    std::string fp = chat_fingerprint(profile_.model, messages, effective);

    const char* key = profile_.auth_env.empty() ? "" : std::getenv(profile_.auth_env.c_str());
    if (!profile_.auth_env.empty() && (!key || !*key))
      throw ConfigError("backend '" + profile_.name + "': credential env var " +
                        profile_.auth_env + " is not set");

    json body{{"model", profile_.model},
              {"temperature", effective.temperature},
              {"top_p", effective.top_p},
              {"max_tokens", effective.max_new_tokens}};
    if (effective.length_penalty != 1.0) body["length_penalty"] = effective.length_penalty;
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back(m.to_json());
    body["messages"] = msgs;

    std::string last_detail;
    for (int attempt = 1; attempt <= profile_.retry.max_attempts; ++attempt) {
      if (attempt > 1) std::this_thread::sleep_for(profile_.retry.backoff_for(attempt - 1));
      limiter_->acquire();
      httplib::Client client(profile_.endpoint);
      client.set_connection_timeout(15, 0);
      client.set_read_timeout(300, 0);
      httplib::Headers headers;
      if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
      auto result = client.Post("/v1/chat/completions", headers, body.dump(),
                                "application/json");
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
      return parse_response(result->status, result->body, fp);
    }
    throw TransportError("backend '" + profile_.name + "': retries exhausted (" + last_detail +
                         ")");
  }

  const BackendProfile& profile() const override { return profile_; }

private:
  ChatResult parse_response(int status, const std::string& body, const std::string& fp) {
    json j = json::parse(body, nullptr, false);
    if (status != 200) {
      std::string message =
          j.is_discarded() ? excerpt(body) : j.value("error", json::object()).value("message", excerpt(body));
      if (message.find("context") != std::string::npos ||
          message.find("maximum context length") != std::string::npos)
        throw PreconditionError("backend '" + profile_.name + "': context overflow: " + message);
      throw TransportError("backend '" + profile_.name + "': HTTP " + std::to_string(status) +
                           ": " + message);
    }
    if (j.is_discarded())
      throw ParseError("backend '" + profile_.name + "': non-JSON completion body: " +
                       excerpt(body));
    try {
      ChatResult r;
      r.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      if (j.contains("usage")) {
        r.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0ull);
        r.usage.completion_tokens = j["usage"].value("completion_tokens", 0ull);
      }
      r.fingerprint = fp;
      return r;
    } catch (const json::exception& e) {
      throw ParseError("backend '" + profile_.name + "': unexpected completion shape: " +
                       std::string(e.what()) + "; payload: " + excerpt(body));
    }
  }

  BackendProfile profile_;
  std::shared_ptr<RateLimiter> limiter_;
};

// Instantiates the backend a profile describes.
inline std::unique_ptr<ChatBackend> open_backend(const BackendProfile& profile) {
  switch (profile.mode) {
    case BackendMode::replay:
      return ReplayBackend::open(profile);
    case BackendMode::record: {
      BackendProfile live = profile;
      live.mode = BackendMode::http;
      return std::make_unique<RecordingBackend>(std::make_unique<HttpChatBackend>(live),
                                                profile.cassette);
    }
    case BackendMode::http:
      return std::make_unique<HttpChatBackend>(profile);
    case BackendMode::scripted:
      throw ConfigError("scripted backends are constructed in code, not from config");
  }
  throw ConfigError("unreachable backend mode");
}

}  // namespace ditto
