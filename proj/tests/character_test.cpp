#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "ditto/character.hpp"
#include "test_paths.hpp"

using namespace ditto;

namespace {

CharacterRecord sample(const std::string& id, Language lang, CharacterKind kind) {
  CharacterRecord r;
  r.id = id;
  r.label = "Label " + id;
  r.description = "description of " + id;
  r.aliases = {"alias one"};
  r.claims = {{"instance of", "human"}, {"occupation", "poet"}};
  r.wiki_article = "Paragraph one.\n\nParagraph two.";
  r.language = lang;
  r.kind = kind;
  r.sitelink_count = 10;
  return r;
}

}  // namespace

TEST_CASE("record validation rejects malformed entries") {
  CharacterRecord r = sample("Q1", Language::en, CharacterKind::human);
  CHECK_NOTHROW(r.validate());
  r.id = "P31";
  CHECK_THROWS_AS(r.validate(), PreconditionError);
  r = sample("Q1", Language::en, CharacterKind::human);
  r.label.clear();
  CHECK_THROWS_AS(r.validate(), PreconditionError);
  r = sample("Q1", Language::en, CharacterKind::human);
  r.claims.push_back({"", "value"});
  CHECK_THROWS_AS(r.validate(), PreconditionError);
}

TEST_CASE("record json round-trip preserves claim order") {
  CharacterRecord r = sample("Q77", Language::zh, CharacterKind::fictional);
  r.claims = {{"z-last", "1"}, {"a-first", "2"}, {"m-mid", "3"}};
  CharacterRecord back = CharacterRecord::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  REQUIRE(back.claims.size() == 3);
  CHECK(back.claims[0].first == "z-last");
  CHECK(back.claims[2].first == "m-mid");
  CHECK(back.language == Language::zh);
  CHECK(back.kind == CharacterKind::fictional);
}

TEST_CASE("store keys order by language then entity number") {
  StoreKey en9{"Q9", Language::en}, en10{"Q10", Language::en}, zh2{"Q2", Language::zh};
  CHECK(en9 < en10);  // numeric, not lexicographic
  CHECK(en10 < zh2);  // en sorts before zh regardless of number
  CHECK_FALSE(zh2 < en9);
}

TEST_CASE("upsert keeps the fictional record regardless of arrival order") {
  CharacterStore s;
  s.upsert(sample("Q5", Language::en, CharacterKind::human));
  s.upsert(sample("Q5", Language::en, CharacterKind::fictional));
  CHECK(s.require("Q5", Language::en).kind == CharacterKind::fictional);

  CharacterStore s2;
  s2.upsert(sample("Q5", Language::en, CharacterKind::fictional));
  s2.upsert(sample("Q5", Language::en, CharacterKind::human));
  CHECK(s2.require("Q5", Language::en).kind == CharacterKind::fictional);

  // Same id in different languages is two records.
  s.upsert(sample("Q5", Language::zh, CharacterKind::human));
  CHECK(s.size() == 2);
  CHECK(s.find("Q7", Language::en) == nullptr);
  CHECK_THROWS_AS(s.require("Q7", Language::en), NotFoundError);
}

TEST_CASE("merge unions endpoints and keeps the newest snapshot") {
  CharacterStore a, b;
  a.upsert(sample("Q1", Language::en, CharacterKind::human));
  a.provenance().snapshot = "2024-01-01T00:00:00Z";
  a.provenance().endpoints = {"https://one", "https://two"};
  b.upsert(sample("Q2", Language::en, CharacterKind::human));
  b.provenance().snapshot = "2024-02-01T00:00:00Z";
  b.provenance().endpoints = {"https://two", "https://three"};
  a.merge(b);
  CHECK(a.size() == 2);
  CHECK(a.provenance().snapshot == "2024-02-01T00:00:00Z");
  CHECK(a.provenance().endpoints ==
        std::vector<std::string>{"https://one", "https://two", "https://three"});

  // Merging an older snapshot does not roll back.
  CharacterStore c;
  c.provenance().snapshot = "2023-01-01T00:00:00Z";
  a.merge(c);
  CHECK(a.provenance().snapshot == "2024-02-01T00:00:00Z");
}

TEST_CASE("by_language filters on language and article presence") {
  CharacterStore s;
  s.upsert(sample("Q3", Language::en, CharacterKind::human));
  CharacterRecord no_article = sample("Q1", Language::en, CharacterKind::human);
  no_article.article_absent = true;
  s.upsert(no_article);
  s.upsert(sample("Q2", Language::zh, CharacterKind::human));

  auto en_all = s.by_language(Language::en, false);
  REQUIRE(en_all.size() == 2);
  CHECK(en_all[0]->id == "Q1");  // ascending entity number
  CHECK(en_all[1]->id == "Q3");
  auto en_with_article = s.by_language(Language::en, true);
  REQUIRE(en_with_article.size() == 1);
  CHECK(en_with_article[0]->id == "Q3");
  CHECK(s.by_language(Language::zh, true).size() == 1);
}

TEST_CASE("store files round-trip and reject duplicates") {
  auto dir = std::filesystem::temp_directory_path() / "ditto_character_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "store.jsonl";

  CharacterStore s;
  s.upsert(sample("Q12", Language::en, CharacterKind::human));
  s.upsert(sample("Q4", Language::zh, CharacterKind::fictional));
  s.provenance().snapshot = "2024-01-15T08:30:15Z";
  s.provenance().endpoints = {"https://example.test"};
  save_store(s, path);

  CharacterStore loaded = load_store(path);
  CHECK(loaded == s);

  // First line must be the schema header.
  std::string text = read_file(path);
  CHECK(text.rfind("{\"schema\":\"character-store/1\"}\n", 0) == 0);

  // A duplicated record line fails loudly.
  json dup = sample("Q12", Language::en, CharacterKind::human).to_json();
  write_file(path, text + dup.dump() + "\n");
  CHECK_THROWS_AS(load_store(path), ParseError);

  write_file(path, "{\"other\":1}\n");
  CHECK_THROWS_AS(load_store(path), ParseError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("zh records must carry zh label and description on load") {
  auto dir = std::filesystem::temp_directory_path() / "ditto_character_zh";
  std::filesystem::create_directories(dir);
  auto path = dir / "store.jsonl";
  json rec = sample("Q4", Language::zh, CharacterKind::human).to_json();
  rec["description"] = "";
  std::string text = json{{"schema", kCharacterStoreSchema}}.dump() + "\n" + rec.dump() + "\n";
  write_file(path, text);
  CHECK_THROWS_AS(load_store(path), ParseError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("article truncation cuts at paragraph boundaries in code points") {
  // 10 + 2 + 12 code points; budget 20 lands inside paragraph two.
  std::string article = "0123456789\n\nabcdefghijkl";
  std::string a = article;
  CHECK_FALSE(truncate_article(a, 100));
  CHECK(a == article);

  a = article;
  CHECK(truncate_article(a, 20));
  CHECK(a == "0123456789");

  // Multi-byte text: budgets count code points, not bytes.
  std::string zh = "一二三四五六七八九十\n\n多余的第二段落内容";
  CHECK(truncate_article(zh, 15));
  CHECK(zh == "一二三四五六七八九十");

  // First paragraph alone over budget: hard cut, no dangling whitespace.
  std::string longpara = "aaaaaaaaaa bbbbbbbbbb";
  CHECK(truncate_article(longpara, 11));
  CHECK(longpara == "aaaaaaaaaa");
}
