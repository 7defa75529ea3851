#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "ditto/backend.hpp"
#include "ditto/wiki.hpp"

namespace ditto {

// Run-wide configuration: backend profiles, fixture directories, and wiki
// fetch settings. Flags override fields; credentials stay in env vars.
struct GlobalConfig {
  std::map<std::string, BackendProfile> backends;
  std::filesystem::path template_dir = "fixtures/templates";
  std::filesystem::path judge_dir = "fixtures/judge";
  WikiEndpoints endpoints;
  std::filesystem::path http_cache_dir;
  CacheMode http_cache_mode = CacheMode::off;
  std::size_t article_budget = 6000;
  double wiki_requests_per_minute = 30;
  RetryPolicy wiki_retry;
  int jobs = 1;
  std::string config_hash;  // sha256 of the loaded file; empty for defaults

  static GlobalConfig load(const std::filesystem::path& path) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const IoError& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ConfigError(path.string() + ": config must be a JSON object");
    GlobalConfig c;
    try {
      if (j.contains("backends"))
        for (const auto& [name, profile] : j["backends"].items())
          c.backends.emplace(name, BackendProfile::from_json(name, profile));
      if (j.contains("template_dir"))
        c.template_dir = j["template_dir"].get<std::string>();
      if (j.contains("judge_dir")) c.judge_dir = j["judge_dir"].get<std::string>();
      if (j.contains("endpoints")) c.endpoints = WikiEndpoints::from_json(j["endpoints"]);
      if (j.contains("http_cache")) {
        const json& cache = j["http_cache"];
        if (cache.contains("dir")) c.http_cache_dir = cache["dir"].get<std::string>();
        if (cache.contains("mode"))
          c.http_cache_mode = cache_mode_from_string(cache["mode"].get<std::string>());
      }
      c.article_budget = j.value("article_budget", c.article_budget);
      c.wiki_requests_per_minute =
          j.value("wiki_requests_per_minute", c.wiki_requests_per_minute);
      if (j.contains("wiki_retry")) c.wiki_retry = RetryPolicy::from_json(j["wiki_retry"]);
      c.jobs = j.value("jobs", c.jobs);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
    if (c.article_budget == 0) throw ConfigError("article_budget must be positive");
    // Relative fixture paths resolve against the config file's directory so a
    // config travels with its fixtures.
    auto anchor = path.parent_path();
    if (c.template_dir.is_relative()) c.template_dir = anchor / c.template_dir;
    if (c.judge_dir.is_relative()) c.judge_dir = anchor / c.judge_dir;
    if (!c.http_cache_dir.empty() && c.http_cache_dir.is_relative())
      c.http_cache_dir = anchor / c.http_cache_dir;
    for (auto& [name, profile] : c.backends) {
      if (!profile.cassette.empty()) {
        std::filesystem::path p = profile.cassette;
        if (p.is_relative()) profile.cassette = (anchor / p).string();
      }
    }
    c.config_hash = sha256_hex(text);
    return c;
  }

  const BackendProfile& backend(const std::string& name) const {
    auto it = backends.find(name);
    if (it == backends.end()) {
      std::vector<std::string> known;
      for (const auto& [n, p] : backends) known.push_back(n);
      throw ConfigError("unknown backend '" + name + "' (configured: " +
                        (known.empty() ? "none" : join(known, ", ")) + ")");
    }
    return it->second;
  }

  CachedHttpFetcher make_fetcher() const {
    return CachedHttpFetcher(HttpCache(http_cache_dir), http_cache_mode, wiki_retry,
                             wiki_requests_per_minute);
  }
};

}  // namespace ditto
