#pragma once

#include <string>
#include <vector>

#include "ditto/common.hpp"
#include "ditto/jsonl.hpp"

namespace ditto {

// The two harvest queries, parameterized only in LIMIT and the label
// language. Whitespace quirks are part of the contract (golden-file tested),
// including the trailing period present only in the human variant.
namespace detail {

inline constexpr const char* kHumanQueryTemplate =
    "PREFIX wdt: <http://www.wikidata.org/prop/direct/>\n"
    "PREFIX wd: <http://www.wikidata.org/entity/>\n"
    "PREFIX schema: <http://schema.org/>\n"
    "PREFIX wikibase: <http://wikiba.se/ontology#>\n"
    "PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>\n"
    "SELECT ?person ?label \n"
    "(COUNT(DISTINCT(?sitelink)) as ?sites)\n"
    "WHERE { \n"
    "  ?person wdt:P31 wd:Q5 .\n"
    "  ?sitelink schema:about ?person .\n"
    "  ?person rdfs:label ?label .\n"
    "  FILTER (lang(?label) = \"@LANG@\") .\n"
    "  ?person schema:description ?description.\n"
    "  FILTER(LANG(?description) = \"@LANG@\") .\n"
    "  }\n"
    "GROUP BY ?person ?label\n"
    "ORDER BY DESC(?sites)\n"
    "LIMIT @LIMIT@\n";

inline constexpr const char* kFictionalQueryTemplate =
    "PREFIX wdt: <http://www.wikidata.org/prop/direct/>\n"
    "PREFIX wd: <http://www.wikidata.org/entity/>\n"
    "PREFIX schema: <http://schema.org/>\n"
    "PREFIX wikibase: <http://wikiba.se/ontology#>\n"
    "PREFIX rdfs: <http://www.w3.org/2000/01/rdf-schema#>\n"
    "SELECT ?person ?label \n"
    "(COUNT(DISTINCT(?sitelink)) as ?sites)\n"
    "WHERE { \n"
    "  ?person wdt:P31 wd:Q15632617 .\n"
    "  ?sitelink schema:about ?person .\n"
    "  ?person rdfs:label ?label .\n"
    "  FILTER (lang(?label) = \"@LANG@\") .\n"
    "  ?person schema:description ?description.\n"
    "  FILTER(LANG(?description) = \"@LANG@\")\n"
    "  }\n"
    "GROUP BY ?person ?label\n"
    "ORDER BY DESC(?sites)\n"
    "LIMIT @LIMIT@\n";

}  // namespace detail

inline std::string sparql_query_text(CharacterKind kind, Language language, std::uint64_t limit) {
  if (limit < 1) throw PreconditionError("list_characters: limit must be >= 1");
  std::string q = kind == CharacterKind::human ? detail::kHumanQueryTemplate
                                               : detail::kFictionalQueryTemplate;
  replace_all(q, "@LANG@", to_string(language));
  replace_all(q, "@LIMIT@", std::to_string(limit));
  return q;
}

struct CharacterListing {
  std::string id;
  std::string label;
  std::uint64_t sitelink_count = 0;
};

// Parses SPARQL JSON results into listings. Rows are expected in descending
// ?sites order; a stable re-sort makes that a guarantee rather than a hope.
inline std::vector<CharacterListing> parse_sparql_listing(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded())
    throw ParseError("malformed SPARQL response (not JSON): " + excerpt(body));
  std::vector<CharacterListing> out;
  try {
    for (const auto& binding : j.at("results").at("bindings")) {
      CharacterListing row;
      std::string uri = binding.at("person").at("value").get<std::string>();
      std::size_t slash = uri.rfind('/');
      row.id = slash == std::string::npos ? uri : uri.substr(slash + 1);
      if (!is_entity_id(row.id))
        throw ParseError("SPARQL row with non-entity binding: " + excerpt(uri));
      row.label = binding.at("label").at("value").get<std::string>();
      row.sitelink_count =
          std::stoull(binding.at("sites").at("value").get<std::string>());
      out.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed SPARQL response: ") + e.what() + "; payload: " +
                     excerpt(body));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.sitelink_count > b.sitelink_count;
  });
  return out;
}

}  // namespace ditto
