#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <openssl/evp.h>

namespace ditto {

inline constexpr const char* kToolVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Errors. One base class so the CLI can map failures to exit codes uniformly.
// ---------------------------------------------------------------------------

class DittoError : public std::runtime_error {
public:
  DittoError(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

class PreconditionError : public DittoError {
public:
  explicit PreconditionError(const std::string& msg) : DittoError("precondition", msg) {}
};

class ParseError : public DittoError {
public:
  explicit ParseError(const std::string& msg) : DittoError("parse", msg) {}
};

class TransportError : public DittoError {
public:
  explicit TransportError(const std::string& msg) : DittoError("transport", msg) {}
};

class ConfigError : public DittoError {
public:
  explicit ConfigError(const std::string& msg) : DittoError("config", msg) {}
};

class NotFoundError : public DittoError {
public:
  explicit NotFoundError(const std::string& msg) : DittoError("not-found", msg) {}
};

class IoError : public DittoError {
public:
  explicit IoError(const std::string& msg) : DittoError("io", msg) {}
};

// ---------------------------------------------------------------------------
// Domain enums
// ---------------------------------------------------------------------------

enum class Language { en, zh };
enum class CharacterKind { human, fictional };

inline std::string to_string(Language l) { return l == Language::en ? "en" : "zh"; }
inline std::string to_string(CharacterKind k) {
  return k == CharacterKind::human ? "human" : "fictional";
}

inline Language language_from_string(std::string_view s) {
  if (s == "en") return Language::en;
  if (s == "zh") return Language::zh;
  throw ParseError("unknown language: '" + std::string(s) + "' (expected en or zh)");
}

inline CharacterKind kind_from_string(std::string_view s) {
  if (s == "human") return CharacterKind::human;
  if (s == "fictional") return CharacterKind::fictional;
  throw ParseError("unknown character kind: '" + std::string(s) + "'");
}

inline bool is_entity_id(std::string_view id) {
  if (id.size() < 2 || id[0] != 'Q') return false;
  return std::all_of(id.begin() + 1, id.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Numeric part of a QID, used as the canonical sort key for entity ids.
inline std::uint64_t entity_number(std::string_view id) {
  if (!is_entity_id(id)) throw PreconditionError("not a Q-entity id: '" + std::string(id) + "'");
  std::uint64_t n = 0;
  for (std::size_t i = 1; i < id.size(); ++i) n = n * 10 + static_cast<std::uint64_t>(id[i] - '0');
  return n;
}

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("sha256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Seeded randomness. std::mt19937_64 has a fully specified output sequence,
// and all draws below are defined in terms of raw engine output only, so a
// fixed seed yields identical results on every platform. Distribution classes
// from <random> are deliberately avoided (their algorithms are unspecified).
// ---------------------------------------------------------------------------

class SeededRng {
public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  // Sub-seed derived from (seed, tag), stable across call order.
  static std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = fnv1a64(tag);
    return seed ^ (h + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
  }

  static SeededRng derive(std::uint64_t seed, std::string_view tag) {
    return SeededRng(derive_seed(seed, tag));
  }

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, n) via rejection sampling (no modulo bias).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw PreconditionError("SeededRng::below(0)");
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                (std::numeric_limits<std::uint64_t>::max() % n);
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices drawn from [0, n), in draw order.
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
    if (k > n) throw PreconditionError("sample_indices: k > n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      std::size_t j = static_cast<std::size_t>(below(pool.size()));
      out.push_back(pool[j]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
    }
    return out;
  }

private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// UTF-8 helpers. Budgets throughout the pipeline are in code points.
// ---------------------------------------------------------------------------

inline bool is_utf8_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s)
    if (!is_utf8_continuation(c)) ++n;
  return n;
}

// Longest prefix of s with at most n code points; never splits a sequence.
inline std::string_view utf8_prefix(std::string_view s, std::size_t n_codepoints) {
  std::size_t count = 0, i = 0;
  while (i < s.size()) {
    if (!is_utf8_continuation(static_cast<unsigned char>(s[i]))) {
      if (count == n_codepoints) break;
      ++count;
    }
    ++i;
  }
  return s.substr(0, i);
}

// Short payload excerpt for error messages; trims at a UTF-8 boundary.
inline std::string excerpt(std::string_view payload, std::size_t max_bytes = 200) {
  std::string_view cut = payload.substr(0, max_bytes);
  while (!cut.empty() && is_utf8_continuation(static_cast<unsigned char>(cut.back())))
    cut.remove_suffix(1);
  // A lone lead byte of a truncated sequence must go too.
  if (!cut.empty() && static_cast<unsigned char>(cut.back()) >= 0xC0) cut.remove_suffix(1);
  std::string out(cut);
  if (payload.size() > max_bytes) out += "...";
  return out;
}

// ---------------------------------------------------------------------------
// String helpers
// ---------------------------------------------------------------------------

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string lowercase_ascii(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  if (from.empty()) return;
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Collapses all whitespace runs to single spaces; used by overlap checks so
// formatting differences do not hide (or fake) sentence matches.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = true;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_ws) out.push_back(' ');
      in_ws = true;
    } else {
      out.push_back(c);
      in_ws = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// Splits on sentence terminators (ASCII .!? and CJK 。！？), keeping the
// terminator with the sentence.
inline std::vector<std::string> split_sentences(std::string_view text) {
  static const std::vector<std::string_view> terms = {".", "!", "?", "。", "！", "？"};
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    for (auto t : terms) {
      if (text.substr(i, t.size()) == t) {
        cur += t;
        out.push_back(trim(cur));
        cur.clear();
        i += t.size();
        matched = true;
        break;
      }
    }
    if (!matched) {
      cur += text[i];
      ++i;
    }
  }
  std::string rest = trim(cur);
  if (!rest.empty()) out.push_back(rest);
  std::erase_if(out, [](const std::string& s) { return s.empty(); });
  return out;
}

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

inline std::string now_iso8601() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return buf;
}

// ---------------------------------------------------------------------------
// File I/O (exact bytes)
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write file: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string sha256_file(const std::filesystem::path& path) {
  return sha256_hex(read_file(path));
}

// ---------------------------------------------------------------------------
// Bounded parallel map. Workers pull indices from a shared counter; result
// order is the input order, so callers stay deterministic regardless of the
// worker count.
// ---------------------------------------------------------------------------

template <typename Fn>
void parallel_for(std::size_t count, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  std::mutex err_mutex;
  std::exception_ptr first_error;
  const std::size_t n_workers = std::min(jobs, count);
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ditto
