#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <filesystem>
#include <set>

#include "ditto/common.hpp"

using namespace ditto;

TEST_CASE("entity id validation") {
  CHECK(is_entity_id("Q42"));
  CHECK(is_entity_id("Q100000001"));
  CHECK_FALSE(is_entity_id("P31"));
  CHECK_FALSE(is_entity_id("Q"));
  CHECK_FALSE(is_entity_id("42"));
  CHECK_FALSE(is_entity_id("Q42x"));
  CHECK_FALSE(is_entity_id(""));
  CHECK(entity_number("Q42") == 42);
  CHECK(entity_number("Q100000012") == 100000012);
}

TEST_CASE("language and kind round-trips") {
  CHECK(to_string(Language::en) == "en");
  CHECK(to_string(Language::zh) == "zh");
  CHECK(language_from_string("zh") == Language::zh);
  CHECK(kind_from_string("human") == CharacterKind::human);
  CHECK(kind_from_string("fictional") == CharacterKind::fictional);
  CHECK_THROWS_AS(language_from_string("fr"), ParseError);
  CHECK_THROWS_AS(kind_from_string("animal"), ParseError);
}

TEST_CASE("fnv1a64 reference vectors") {
  // Published FNV-1a 64-bit test vectors.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("sha256 reference vectors") {
  CHECK(sha256_hex("") ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("seeded rng is deterministic and unbiased at the edges") {
  SeededRng a(7), b(7), c(8);
  std::vector<std::uint64_t> va, vb, vc;
  for (int i = 0; i < 16; ++i) {
    va.push_back(a.next());
    vb.push_back(b.next());
    vc.push_back(c.next());
  }
  CHECK(va == vb);
  CHECK(va != vc);

  SeededRng r(123);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7);
  CHECK(r.below(1) == 0);
  CHECK_THROWS_AS(r.below(0), PreconditionError);
}

TEST_CASE("derived seeds depend on the tag, not call order") {
  const std::uint64_t s1 = SeededRng::derive_seed(42, "alpha");
  const std::uint64_t s2 = SeededRng::derive_seed(42, "beta");
  const std::uint64_t s1_again = SeededRng::derive_seed(42, "alpha");
  CHECK(s1 != s2);
  CHECK(s1 == s1_again);
  CHECK(SeededRng::derive_seed(43, "alpha") != s1);
}

TEST_CASE("shuffle and sample_indices are seed-stable") {
  std::vector<int> v1{1, 2, 3, 4, 5, 6}, v2 = v1;
  SeededRng::derive(9, "t").shuffle(v1);
  SeededRng::derive(9, "t").shuffle(v2);
  CHECK(v1 == v2);
  CHECK(std::set<int>(v1.begin(), v1.end()) == std::set<int>{1, 2, 3, 4, 5, 6});

  SeededRng r(5);
  auto picks = r.sample_indices(10, 4);
  CHECK(picks.size() == 4);
  CHECK(std::set<std::size_t>(picks.begin(), picks.end()).size() == 4);
  for (auto p : picks) CHECK(p < 10);
  CHECK_THROWS_AS(r.sample_indices(3, 4), PreconditionError);

  auto all = SeededRng(1).sample_indices(5, 5);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 5);
}

TEST_CASE("utf8 helpers count code points") {
  CHECK(utf8_length("hello") == 5);
  CHECK(utf8_length("héllo") == 5);
  CHECK(utf8_length("你好") == 2);
  CHECK(utf8_length("") == 0);
  CHECK(utf8_prefix("你好吗", 2) == "你好");
  CHECK(utf8_prefix("abc", 10) == "abc");
  CHECK(utf8_prefix("héllo", 2) == "hé");

  // Excerpts never split a multi-byte sequence.
  std::string zh = "你好你好你好";
  std::string cut = excerpt(zh, 4);  // 4 bytes lands mid-character
  CHECK(cut == "你...");
}

TEST_CASE("string helpers") {
  CHECK(trim("  x \t\n") == "x");
  CHECK(trim("") == "");
  CHECK(lowercase_ascii("AbC") == "abc");
  std::string s = "a-b-c";
  replace_all(s, "-", "+");
  CHECK(s == "a+b+c");
  CHECK(join({"a", "b", "c"}, ", ") == "a, b, c");
  CHECK(join({}, ", ") == "");
  CHECK(normalize_whitespace("a \t b\n\nc") == "a b c");
}

TEST_CASE("sentence splitting keeps terminators, handles CJK") {
  auto en = split_sentences("Hello there. How are you? Fine!");
  REQUIRE(en.size() == 3);
  CHECK(en[0] == "Hello there.");
  CHECK(en[1] == "How are you?");
  CHECK(en[2] == "Fine!");

  auto zh = split_sentences("你好。吃了吗？很好！");
  REQUIRE(zh.size() == 3);
  CHECK(zh[0] == "你好。");
  CHECK(zh[1] == "吃了吗？");

  auto tail = split_sentences("no terminator here");
  REQUIRE(tail.size() == 1);
  CHECK(tail[0] == "no terminator here");
}

TEST_CASE("timestamps are ISO 8601 UTC") {
  std::string t = now_iso8601();
  REQUIRE(t.size() == 20);
  CHECK(t[4] == '-');
  CHECK(t[10] == 'T');
  CHECK(t.back() == 'Z');
}

TEST_CASE("file io round-trips bytes exactly") {
  auto dir = std::filesystem::temp_directory_path() / "ditto_common_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "blob.bin";
  std::string payload = "line1\n\xE4\xBD\xA0\xE5\xA5\xBD\nline3";
  write_file(path, payload);
  CHECK(read_file(path) == payload);
  CHECK(sha256_file(path) == sha256_hex(payload));
  CHECK_THROWS_AS(read_file(dir / "absent.txt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("parallel_for covers every index and propagates errors") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 4, [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);

  CHECK_THROWS_AS(parallel_for(10, 3,
                               [](std::size_t i) {
                                 if (i == 5) throw ParseError("boom");
                               }),
                  ParseError);
}

TEST_CASE("error hierarchy carries kinds") {
  try {
    throw ParseError("bad payload");
  } catch (const DittoError& e) {
    CHECK(e.kind() == "parse");
    CHECK(std::string(e.what()) == "bad payload");
  }
  CHECK(ConfigError("x").kind() == "config");
  CHECK(TransportError("x").kind() == "transport");
  CHECK(PreconditionError("x").kind() == "precondition");
  CHECK(NotFoundError("x").kind() == "not-found");
  CHECK(IoError("x").kind() == "io");
}
