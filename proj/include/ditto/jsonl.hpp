#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ditto/common.hpp"

namespace ditto {

using json = nlohmann::json;
// Preserves object insertion order; used where upstream response order matters.
using ojson = nlohmann::ordered_json;

// Canonical serialization: nlohmann sorts object keys, arrays keep order.
inline std::string canonical_dump(const json& j) { return j.dump(); }

struct JsonlFile {
  std::string schema;        // empty when the file carries no header line
  std::vector<json> records; // one parsed object per non-header line
};

inline json parse_json_line(const std::string& line, const std::filesystem::path& path,
                            std::size_t line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw ParseError("corrupt JSON at " + path.string() + ":" + std::to_string(line_no));
  return j;
}

// Reads a line-delimited JSON file. When expected_schema is non-empty the
// first line must be a {"schema": ...} header matching it.
inline JsonlFile read_jsonl(const std::filesystem::path& path,
                            const std::string& expected_schema = "") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read file: " + path.string());
  JsonlFile out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_json_line(line, path, line_no);
    if (line_no == 1 && j.is_object() && j.contains("schema") && j.size() == 1) {
      out.schema = j["schema"].get<std::string>();
      continue;
    }
    out.records.push_back(std::move(j));
  }
  if (!expected_schema.empty() && out.schema != expected_schema)
    throw ParseError("schema mismatch in " + path.string() + ": expected '" + expected_schema +
                     "', found '" + out.schema + "'");
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::string& schema,
                        const std::vector<json>& records) {
  std::string out;
  if (!schema.empty()) out += json{{"schema", schema}}.dump() + "\n";
  for (const auto& r : records) out += r.dump() + "\n";
  write_file(path, out);
}

}  // namespace ditto
