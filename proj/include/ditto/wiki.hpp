#pragma once

#include <set>
#include <string>
#include <vector>

#include "ditto/character.hpp"
#include "ditto/http.hpp"
#include "ditto/sparql.hpp"

namespace ditto {

struct WikiEndpoints {
  std::string sparql = "https://query.wikidata.org";
  std::string wikidata_api = "https://www.wikidata.org";
  // {lang} is substituted with the subdomain language code.
  std::string wikipedia_pattern = "https://{lang}.wikipedia.org";

  std::string wikipedia(Language lang) const {
    std::string ep = wikipedia_pattern;
    replace_all(ep, "{lang}", to_string(lang));
    return ep;
  }

  std::vector<std::string> all(Language lang) const {
    return {sparql, wikidata_api, wikipedia(lang)};
  }

  static WikiEndpoints from_json(const json& j) {
    WikiEndpoints e;
    e.sparql = j.value("sparql", e.sparql);
    e.wikidata_api = j.value("wikidata_api", e.wikidata_api);
    e.wikipedia_pattern = j.value("wikipedia_pattern", e.wikipedia_pattern);
    return e;
  }

  json to_json() const {
    return json{{"sparql", sparql},
                {"wikidata_api", wikidata_api},
                {"wikipedia_pattern", wikipedia_pattern}};
  }
};

// Request builders are the single source of truth for URL shapes; cache keys
// depend on them, so fixture tooling reuses these instead of hand-building.

inline HttpRequest build_sparql_request(const WikiEndpoints& eps, const std::string& query) {
  HttpRequest req;
  req.method = "POST";
  req.endpoint = eps.sparql;
  req.target = "/sparql";
  req.body = "query=" + url_encode(query) + "&format=json";
  req.content_type = "application/x-www-form-urlencoded";
  return req;
}

inline HttpRequest build_entity_request(const WikiEndpoints& eps, const std::string& id,
                                        Language lang) {
  HttpRequest req;
  req.endpoint = eps.wikidata_api;
  req.target = "/w/api.php?action=wbgetentities&format=json&ids=" + url_encode(id) +
               "&props=labels%7Cdescriptions%7Caliases%7Cclaims%7Csitelinks&languages=" +
               to_string(lang);
  return req;
}

inline HttpRequest build_label_request(const WikiEndpoints& eps,
                                       const std::vector<std::string>& ids, Language lang) {
  HttpRequest req;
  req.endpoint = eps.wikidata_api;
  req.target = "/w/api.php?action=wbgetentities&format=json&ids=" +
               url_encode(join(ids, "|")) + "&props=labels&languages=" + to_string(lang);
  return req;
}

inline HttpRequest build_article_request(const WikiEndpoints& eps, Language lang,
                                         const std::string& title) {
  HttpRequest req;
  req.endpoint = eps.wikipedia(lang);
  req.target = "/w/api.php?action=query&format=json&prop=extracts&explaintext=1&redirects=1"
               "&titles=" +
               url_encode(title);
  return req;
}

namespace detail {

// Renders one snak value to text. Entity references come back as bare ids
// here and are resolved to labels in a second pass.
inline std::string render_snak_value(const ojson& datavalue, std::set<std::string>* entity_refs) {
  const std::string type = datavalue.value("type", "");
  const auto& value = datavalue.at("value");
  if (type == "wikibase-entityid") {
    std::string id = value.at("id").get<std::string>();
    if (entity_refs) entity_refs->insert(id);
    return id;
  }
  if (type == "string") return value.get<std::string>();
  if (type == "monolingualtext") return value.at("text").get<std::string>();
  if (type == "time") {
    std::string t = value.at("time").get<std::string>();  // "+1952-03-11T00:00:00Z"
    if (!t.empty() && (t[0] == '+' || t[0] == '-')) t.erase(0, 1);
    std::size_t tpos = t.find('T');
    return tpos == std::string::npos ? t : t.substr(0, tpos);
  }
  if (type == "quantity") {
    std::string amount = value.at("amount").get<std::string>();
    if (!amount.empty() && amount[0] == '+') amount.erase(0, 1);
    return amount;
  }
  if (type == "globecoordinate") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f, %.4f", value.at("latitude").get<double>(),
                  value.at("longitude").get<double>());
    return buf;
  }
  return datavalue.dump();
}

inline std::string lang_value(const ojson& entity, const char* field, Language lang) {
  auto it = entity.find(field);
  if (it == entity.end()) return "";
  auto lit = it->find(to_string(lang));
  if (lit == it->end()) return "";
  return lit->value("value", "");
}

}  // namespace detail

struct WikiClientOptions {
  std::size_t article_budget = 6000;  // code points, see truncate_article
  std::size_t label_batch = 50;
};

// Wikidata + Wikipedia client behind the cached fetcher.
class WikiClient {
public:
  WikiClient(CachedHttpFetcher* fetcher, WikiEndpoints endpoints, WikiClientOptions opts = {})
      : fetcher_(fetcher), endpoints_(std::move(endpoints)), opts_(opts) {}

  std::vector<CharacterListing> list_characters(CharacterKind kind, Language lang,
                                                std::uint64_t limit) {
    std::string query = sparql_query_text(kind, lang, limit);
    HttpResponse resp = fetcher_->fetch(build_sparql_request(endpoints_, query));
    if (resp.status != 200)
      throw TransportError("SPARQL endpoint returned HTTP " + std::to_string(resp.status));
    auto rows = parse_sparql_listing(resp.body);
    if (rows.size() > limit) rows.resize(limit);
    return rows;
  }

  CharacterRecord fetch_profile(const std::string& id, Language lang, CharacterKind kind,
                                std::uint64_t sitelink_count_hint = 0) {
    if (!is_entity_id(id))
      throw PreconditionError("fetch_profile: invalid entity id '" + id + "'");

    ojson entity = fetch_entity(id, lang);

    CharacterRecord rec;
    rec.id = id;
    rec.language = lang;
    rec.kind = kind;
    rec.label = detail::lang_value(entity, "labels", lang);
    rec.description = detail::lang_value(entity, "descriptions", lang);
    if (rec.label.empty())
      throw NotFoundError(id + ": no " + to_string(lang) + " label");
    if (rec.description.empty())
      throw NotFoundError(id + ": no " + to_string(lang) + " description");

    if (auto it = entity.find("aliases"); it != entity.end()) {
      if (auto lit = it->find(to_string(lang)); lit != it->end())
        for (const auto& a : *lit) rec.aliases.push_back(a.value("value", ""));
    }

    // Claims: response order preserved; entity-valued snaks resolved to labels.
    std::set<std::string> refs;
    std::vector<std::pair<std::string, std::string>> raw_claims;
    if (auto it = entity.find("claims"); it != entity.end()) {
      for (const auto& [prop, statements] : it->items()) {
        refs.insert(prop);
        for (const auto& st : statements) {
          const auto& snak = st.at("mainsnak");
          if (snak.value("snaktype", "") != "value") continue;
          raw_claims.emplace_back(prop,
                                  detail::render_snak_value(snak.at("datavalue"), &refs));
        }
      }
    }
    auto labels = resolve_labels(std::vector<std::string>(refs.begin(), refs.end()), lang);
    auto labelled = [&](const std::string& key) {
      auto it = labels.find(key);
      return it == labels.end() || it->second.empty() ? key : it->second;
    };
    for (auto& [prop, value] : raw_claims) {
      std::string value_out = is_entity_id(value) ? labelled(value) : value;
      rec.claims.emplace_back(labelled(prop), std::move(value_out));
    }

    std::uint64_t sitelinks = 0;
    std::string article_title;
    if (auto it = entity.find("sitelinks"); it != entity.end()) {
      sitelinks = it->size();
      const std::string wiki_key = to_string(lang) + "wiki";
      if (auto sit = it->find(wiki_key); sit != it->end())
        article_title = sit->value("title", "");
    }
    rec.sitelink_count = sitelink_count_hint ? sitelink_count_hint : sitelinks;

    if (article_title.empty()) {
      rec.article_absent = true;
    } else {
      rec.wiki_article = fetch_article(lang, article_title);
      if (rec.wiki_article.empty())
        rec.article_absent = true;
      else
        rec.wiki_truncated = truncate_article(rec.wiki_article, opts_.article_budget);
    }
    rec.validate();
    return rec;
  }

  const WikiEndpoints& endpoints() const { return endpoints_; }

private:
  ojson fetch_entity(const std::string& id, Language lang) {
    HttpResponse resp = fetcher_->fetch(build_entity_request(endpoints_, id, lang));
    ojson j = ojson::parse(resp.body, nullptr, false);
    if (j.is_discarded())
      throw ParseError("malformed entity response for " + id + ": " + excerpt(resp.body));
    auto entities = j.find("entities");
    if (entities == j.end() || entities->find(id) == entities->end())
      throw NotFoundError("entity not found: " + id);
    const ojson& entity = (*entities)[id];
    if (entity.contains("missing")) throw NotFoundError("entity not found: " + id);
    return entity;
  }

  std::map<std::string, std::string> resolve_labels(const std::vector<std::string>& ids,
                                                    Language lang) {
    std::map<std::string, std::string> out;
    for (std::size_t start = 0; start < ids.size(); start += opts_.label_batch) {
      std::vector<std::string> batch(
          ids.begin() + static_cast<std::ptrdiff_t>(start),
          ids.begin() + static_cast<std::ptrdiff_t>(std::min(ids.size(), start + opts_.label_batch)));
      HttpResponse resp = fetcher_->fetch(build_label_request(endpoints_, batch, lang));
      ojson j = ojson::parse(resp.body, nullptr, false);
      if (j.is_discarded()) continue;
      auto entities = j.find("entities");
      if (entities == j.end()) continue;
      for (const auto& [eid, entity] : entities->items())
        out[eid] = detail::lang_value(entity, "labels", lang);
    }
    return out;
  }

  std::string fetch_article(Language lang, const std::string& title) {
    HttpResponse resp = fetcher_->fetch(build_article_request(endpoints_, lang, title));
    json j = json::parse(resp.body, nullptr, false);
    if (j.is_discarded()) return "";
    auto query = j.find("query");
    if (query == j.end()) return "";
    auto pages = query->find("pages");
    if (pages == query->end()) return "";
    for (const auto& [pageid, page] : pages->items()) {
      if (pageid == "-1") continue;
      return page.value("extract", "");
    }
    return "";
  }

  CachedHttpFetcher* fetcher_;
  WikiEndpoints endpoints_;
  WikiClientOptions opts_;
};

struct CollectEvent {
  std::string id;
  std::string detail;
};

struct CollectResult {
  CharacterStore store;
  std::vector<CollectEvent> skipped;
};

// Harvests one (kind, language) slice: SPARQL listing, then profile fetches
// with bounded parallelism. Assembly is single-writer and the store sorts
// records itself, so the worker count never changes output bytes.
inline CollectResult collect_characters(WikiClient& client, CachedHttpFetcher& fetcher,
                                        CharacterKind kind, Language lang, std::uint64_t limit,
                                        std::size_t jobs = 1) {
  CollectResult result;
  auto listing = client.list_characters(kind, lang, limit);

  std::vector<std::optional<CharacterRecord>> fetched(listing.size());
  std::vector<std::optional<CollectEvent>> failures(listing.size());
  parallel_for(listing.size(), jobs, [&](std::size_t i) {
    try {
      fetched[i] =
          client.fetch_profile(listing[i].id, lang, kind, listing[i].sitelink_count);
    } catch (const NotFoundError& e) {
      failures[i] = CollectEvent{listing[i].id, e.what()};
    } catch (const ParseError& e) {
      failures[i] = CollectEvent{listing[i].id, e.what()};
    }
  });

  for (std::size_t i = 0; i < listing.size(); ++i) {
    if (fetched[i]) result.store.upsert(std::move(*fetched[i]));
    if (failures[i]) result.skipped.push_back(std::move(*failures[i]));
  }
  result.store.provenance().snapshot = fetcher.snapshot();
  result.store.provenance().endpoints = client.endpoints().all(lang);
  return result;
}

}  // namespace ditto
