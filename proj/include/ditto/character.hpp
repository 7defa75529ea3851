#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ditto/common.hpp"
#include "ditto/jsonl.hpp"

namespace ditto {

inline constexpr const char* kCharacterStoreSchema = "character-store/1";

// One character's Wikidata identity plus its Wikipedia article.
struct CharacterRecord {
  std::string id;           // Q-entity id
  std::string label;
  std::string description;
  std::vector<std::string> aliases;
  // (property label, value) pairs in upstream response order.
  std::vector<std::pair<std::string, std::string>> claims;
  std::string wiki_article; // plain text, possibly truncated
  Language language = Language::en;
  CharacterKind kind = CharacterKind::human;
  std::uint64_t sitelink_count = 0;
  bool article_absent = false;  // no Wikipedia article in this language
  bool wiki_truncated = false;

  void validate() const {
    if (!is_entity_id(id)) throw PreconditionError("invalid entity id: '" + id + "'");
    if (label.empty()) throw PreconditionError(id + ": label is empty");
    if (description.empty()) throw PreconditionError(id + ": description is empty");
    for (const auto& [prop, value] : claims) {
      (void)value;
      if (prop.empty()) throw PreconditionError(id + ": claim with empty property label");
    }
  }

  json to_json() const {
    json claims_j = json::array();
    for (const auto& [p, v] : claims) claims_j.push_back(json::array({p, v}));
    return json{{"id", id},
                {"label", label},
                {"description", description},
                {"aliases", aliases},
                {"claims", claims_j},
                {"wiki_article", wiki_article},
                {"language", to_string(language)},
                {"kind", to_string(kind)},
                {"sitelink_count", sitelink_count},
                {"article_absent", article_absent},
                {"wiki_truncated", wiki_truncated}};
  }

  static CharacterRecord from_json(const json& j) {
    CharacterRecord r;
    r.id = j.at("id").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.description = j.at("description").get<std::string>();
    r.aliases = j.at("aliases").get<std::vector<std::string>>();
    for (const auto& c : j.at("claims"))
      r.claims.emplace_back(c.at(0).get<std::string>(), c.at(1).get<std::string>());
    r.wiki_article = j.at("wiki_article").get<std::string>();
    r.language = language_from_string(j.at("language").get<std::string>());
    r.kind = kind_from_string(j.at("kind").get<std::string>());
    r.sitelink_count = j.at("sitelink_count").get<std::uint64_t>();
    r.article_absent = j.value("article_absent", false);
    r.wiki_truncated = j.value("wiki_truncated", false);
    r.validate();
    return r;
  }
};

struct StoreProvenance {
  std::string snapshot;  // ISO 8601; under replay this comes from the cache entries
  std::vector<std::string> endpoints;
};

// Keyed by (id, language). Ordering sorts en before zh, then by entity number,
// which fixes the on-disk byte order.
struct StoreKey {
  std::string id;
  Language language;

  bool operator<(const StoreKey& o) const {
    if (language != o.language) return language < o.language;
    return entity_number(id) < entity_number(o.id);
  }
  bool operator==(const StoreKey& o) const { return id == o.id && language == o.language; }
};

class CharacterStore {
public:
  using Map = std::map<StoreKey, CharacterRecord>;

  const Map& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  StoreProvenance& provenance() { return provenance_; }
  const StoreProvenance& provenance() const { return provenance_; }

  const CharacterRecord* find(const std::string& id, Language lang) const {
    auto it = records_.find(StoreKey{id, lang});
    return it == records_.end() ? nullptr : &it->second;
  }

  const CharacterRecord& require(const std::string& id, Language lang) const {
    const CharacterRecord* rec = find(id, lang);
    if (!rec)
      throw NotFoundError("character " + id + " (" + std::string(to_string(lang)) +
                          ") is not in the store");
    return *rec;
  }

  // Inserts or merges. When the same (id, language) arrives under both kinds,
  // the fictional record wins (the rarer class).
  void upsert(CharacterRecord rec) {
    rec.validate();
    StoreKey key{rec.id, rec.language};
    auto it = records_.find(key);
    if (it == records_.end()) {
      records_.emplace(std::move(key), std::move(rec));
      return;
    }
    if (it->second.kind == CharacterKind::fictional && rec.kind == CharacterKind::human) return;
    it->second = std::move(rec);
  }

  void merge(const CharacterStore& other) {
    for (const auto& [key, rec] : other.records_) {
      (void)key;
      upsert(rec);
    }
    for (const auto& ep : other.provenance_.endpoints) {
      auto& eps = provenance_.endpoints;
      if (std::find(eps.begin(), eps.end(), ep) == eps.end()) eps.push_back(ep);
    }
    if (provenance_.snapshot < other.provenance_.snapshot)
      provenance_.snapshot = other.provenance_.snapshot;
  }

  std::vector<const CharacterRecord*> by_language(Language lang, bool with_article_only) const {
    std::vector<const CharacterRecord*> out;
    for (const auto& [key, rec] : records_) {
      if (key.language != lang) continue;
      if (with_article_only && rec.article_absent) continue;
      out.push_back(&rec);
    }
    return out;  // map order: ascending entity number within the language
  }

  bool operator==(const CharacterStore& other) const {
    if (records_.size() != other.records_.size()) return false;
    auto a = records_.begin();
    auto b = other.records_.begin();
    for (; a != records_.end(); ++a, ++b) {
      if (!(a->first == b->first)) return false;
      if (a->second.to_json() != b->second.to_json()) return false;
    }
    return provenance_.snapshot == other.provenance_.snapshot &&
           provenance_.endpoints == other.provenance_.endpoints;
  }

private:
  Map records_;
  StoreProvenance provenance_;
};

// Line-delimited JSON, one record per line, sorted by (language, id), with a
// schema header followed by a provenance line.
inline void save_store(const CharacterStore& store, const std::filesystem::path& path) {
  std::string out;
  out += json{{"schema", kCharacterStoreSchema}}.dump() + "\n";
  out += json{{"provenance",
               {{"snapshot", store.provenance().snapshot},
                {"endpoints", store.provenance().endpoints}}}}
             .dump() +
         "\n";
  for (const auto& [key, rec] : store.records()) {
    (void)key;
    out += rec.to_json().dump() + "\n";
  }
  write_file(path, out);
}

inline CharacterStore load_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read store: " + path.string());
  CharacterStore store;
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = parse_json_line(line, path, line_no);
    if (!saw_header) {
      if (!j.is_object() || j.value("schema", "") != kCharacterStoreSchema)
        throw ParseError(path.string() + ":1: missing '" + std::string(kCharacterStoreSchema) +
                         "' header");
      saw_header = true;
      continue;
    }
    if (j.is_object() && j.contains("provenance")) {
      store.provenance().snapshot = j["provenance"].value("snapshot", "");
      store.provenance().endpoints =
          j["provenance"].value("endpoints", std::vector<std::string>{});
      continue;
    }
    CharacterRecord rec;
    try {
      rec = CharacterRecord::from_json(j);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DittoError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (store.find(rec.id, rec.language))
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": duplicate record (" +
                       rec.id + ", " + to_string(rec.language) + ")");
    // The harvest queries filter on zh labels and descriptions; re-assert on load.
    if (rec.language == Language::zh && (rec.label.empty() || rec.description.empty()))
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": zh record without zh label/description");
    store.upsert(std::move(rec));
  }
  if (!saw_header && line_no > 0)
    throw ParseError(path.string() + ": not a character store (no schema header)");
  return store;
}

// Truncates an article to at most `budget` code points, cutting at the last
// paragraph boundary that fits; falls back to a hard cut when the first
// paragraph alone is over budget. Returns true when anything was dropped.
inline bool truncate_article(std::string& article, std::size_t budget) {
  if (utf8_length(article) <= budget) return false;
  std::string_view prefix = utf8_prefix(article, budget);
  std::size_t cut = prefix.rfind("\n\n");
  if (cut != std::string_view::npos && cut > 0)
    article = std::string(prefix.substr(0, cut));
  else
    article = std::string(prefix);
  while (!article.empty() && std::isspace(static_cast<unsigned char>(article.back())))
    article.pop_back();
  return true;
}

}  // namespace ditto
