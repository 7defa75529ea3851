#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ditto/jsonl.hpp"

namespace ditto {

inline constexpr const char* kManifestSchema = "run-manifest/1";

// Written into every output directory: what ran, with which inputs, and what
// came out. Output hashes are the replay-stability witness — two replays of
// the same inputs must list identical hashes even though timestamps differ.
struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<std::string> backends;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  std::map<std::string, std::uint64_t> counters;
  std::string started_at;
  std::string finished_at;

  void add_input(const std::filesystem::path& path) {
    inputs[path.string()] = sha256_file(path);
  }
  void add_output(const std::filesystem::path& path) {
    outputs[path.string()] = sha256_file(path);
  }

  json to_json() const {
    return json{{"schema", kManifestSchema},
                {"tool_version", tool_version},
                {"command", command},
                {"config_hash", config_hash},
                {"seed", seed},
                {"backends", backends},
                {"inputs", inputs},
                {"outputs", outputs},
                {"counters", counters},
                {"started_at", started_at},
                {"finished_at", finished_at}};
  }

  void write(const std::filesystem::path& dir) {
    finished_at = now_iso8601();
    write_file(dir / "manifest.json", canonical_dump(to_json()) + "\n");
  }

  // For commands whose --out is a single file: the manifest sits beside it
  // so several outputs can share a directory without clobbering manifests.
  void write_sidecar(const std::filesystem::path& out_file) {
    finished_at = now_iso8601();
    write_file(out_file.string() + ".manifest.json", canonical_dump(to_json()) + "\n");
  }

  static RunManifest from_json(const json& j) {
    RunManifest m;
    m.tool_version = j.value("tool_version", "");
    m.command = j.value("command", "");
    m.config_hash = j.value("config_hash", "");
    m.seed = j.value("seed", 0ull);
    if (j.contains("backends"))
      m.backends = j["backends"].get<std::vector<std::string>>();
    if (j.contains("inputs"))
      m.inputs = j["inputs"].get<std::map<std::string, std::string>>();
    if (j.contains("outputs"))
      m.outputs = j["outputs"].get<std::map<std::string, std::string>>();
    if (j.contains("counters"))
      m.counters = j["counters"].get<std::map<std::string, std::uint64_t>>();
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    return m;
  }

  static RunManifest load(const std::filesystem::path& path) {
    json j = json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw ParseError(path.string() + ": manifest is not JSON");
    return from_json(j);
  }
};

}  // namespace ditto
