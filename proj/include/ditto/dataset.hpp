#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ditto/simulate.hpp"

namespace ditto {

inline constexpr const char* kTrainingConfigSchema = "training-config/1";

// ---------------------------------------------------------------------------
// SFT records: knowledge-concealed ChatML-style conversations
// ---------------------------------------------------------------------------

struct SftRecord {
  std::vector<ChatMessage> messages;
  std::string character_id;
  std::string session_id;
  Language language = Language::en;
  std::vector<bool> expects_rejection;  // one flag per exchange

  void validate() const {
    if (messages.empty() || messages.front().role != "system")
      throw PreconditionError("sft record " + session_id + " must start with a system message");
    if ((messages.size() - 1) % 2 != 0)
      throw PreconditionError("sft record " + session_id + " has an unpaired message");
    for (std::size_t i = 1; i < messages.size(); ++i) {
      const char* expected = (i % 2 == 1) ? "user" : "assistant";
      if (messages[i].role != expected)
        throw PreconditionError("sft record " + session_id + ": message " + std::to_string(i) +
                                " should be " + expected + ", is " + messages[i].role);
    }
    if (expects_rejection.size() != (messages.size() - 1) / 2)
      throw PreconditionError("sft record " + session_id + ": flag count mismatch");
  }

  std::size_t exchanges() const { return (messages.size() - 1) / 2; }

  json to_json() const {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back(m.to_json());
    json flags = json::array();
    for (bool f : expects_rejection) flags.push_back(f);
    return json{{"messages", msgs},
                {"meta",
                 {{"character_id", character_id},
                  {"session_id", session_id},
                  {"language", to_string(language)},
                  {"expects_rejection", flags}}}};
  }

  static SftRecord from_json(const json& j) {
    SftRecord r;
    for (const auto& m : j.at("messages")) r.messages.push_back(ChatMessage::from_json(m));
    const json& meta = j.at("meta");
    r.character_id = meta.at("character_id").get<std::string>();
    r.session_id = meta.at("session_id").get<std::string>();
    r.language = language_from_string(meta.at("language").get<std::string>());
    for (const auto& f : meta.at("expects_rejection")) r.expects_rejection.push_back(f.get<bool>());
    r.validate();
    return r;
  }
};

// Swaps the knowledge-augmented system prompt for the brief intro; turn
// texts pass through untouched.
inline SftRecord conceal(const DialogueSession& session) {
  SftRecord r;
  r.character_id = session.role_id;
  r.session_id = session.session_id();
  r.language = session.language;
  r.messages.push_back({"system", session.system_brief});
  for (const auto& t : session.turns) {
    r.messages.push_back({"user", t.query.text});
    r.messages.push_back({"assistant", t.response});
    r.expects_rejection.push_back(t.expects_rejection);
  }
  r.validate();
  return r;
}

// Concealment check: no article sentence of >= 30 code points may survive in
// the system message. The description itself is allowed — the brief intro
// quotes it by design. Comparison is whitespace-normalized.
inline std::vector<std::string> concealment_violations(const std::string& system_message,
                                                       const std::string& wiki_article,
                                                       const std::string& description) {
  std::vector<std::string> violations;
  const std::string sys_norm = normalize_whitespace(system_message);
  const std::string desc_norm = normalize_whitespace(description);
  for (const auto& sentence : split_sentences(wiki_article)) {
    const std::string norm = normalize_whitespace(sentence);
    if (utf8_length(norm) < 30) continue;
    if (!desc_norm.empty() && desc_norm.find(norm) != std::string::npos) continue;
    if (sys_norm.find(norm) != std::string::npos) violations.push_back(norm);
  }
  return violations;
}

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

struct SplitResult {
  std::vector<DialogueSession> train;
  std::vector<DialogueSession> test;
};

// Reserved roles go to the test split; everything else trains. A role id in
// the list reserves the role across all its languages.
inline SplitResult split_roles(std::vector<DialogueSession> sessions,
                               const std::set<std::string>& test_role_ids) {
  if (test_role_ids.empty())
    throw PreconditionError("test role list must be non-empty");
  SplitResult out;
  for (auto& s : sessions) {
    if (test_role_ids.count(s.role_id))
      out.test.push_back(std::move(s));
    else
      out.train.push_back(std::move(s));
  }
  std::set<std::string> train_ids, test_ids;
  for (const auto& s : out.train) train_ids.insert(s.role_id);
  for (const auto& s : out.test) test_ids.insert(s.role_id);
  for (const auto& id : test_ids)
    if (train_ids.count(id))
      throw PreconditionError("split bug: role " + id + " landed in both splits");
  return out;
}

// One role id per line; blank lines and #-comments ignored.
inline std::set<std::string> load_role_list(const std::filesystem::path& path) {
  std::set<std::string> ids;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (!is_entity_id(t))
      throw ParseError(path.string() + ": '" + t + "' is not an entity id");
    ids.insert(t);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Statistics (two turn conventions, both reported)
// ---------------------------------------------------------------------------

struct SplitCounts {
  std::uint64_t roles = 0;  // (role, language) pairs; additive across languages
  std::uint64_t sessions = 0;
  std::uint64_t turns_exchange = 0;  // one (query, response) pair
  std::uint64_t turns_message = 0;   // individual user/assistant messages

  json to_json() const {
    return json{{"roles", roles},
                {"sessions", sessions},
                {"turns_exchange", turns_exchange},
                {"turns_message", turns_message}};
  }
};

struct DatasetStats {
  std::map<std::string, SplitCounts> by_language;  // keyed "en"/"zh"
  SplitCounts all;
  std::uint64_t roles_distinct = 0;  // distinct role ids regardless of language

  json to_json() const {
    json langs = json::object();
    for (const auto& [lang, counts] : by_language) langs[lang] = counts.to_json();
    json j{{"languages", langs}, {"all", all.to_json()}};
    j["all"]["roles_distinct"] = roles_distinct;
    return j;
  }
};

inline DatasetStats stats(const std::vector<SftRecord>& records) {
  DatasetStats out;
  std::map<std::string, std::set<std::string>> roles_by_lang;
  std::set<std::string> distinct;
  for (const auto& r : records) {
    const std::string lang{to_string(r.language)};
    auto& c = out.by_language[lang];
    c.sessions += 1;
    c.turns_exchange += r.exchanges();
    c.turns_message += r.exchanges() * 2;
    roles_by_lang[lang].insert(r.character_id);
    distinct.insert(r.character_id);
  }
  for (auto& [lang, ids] : roles_by_lang)
    out.by_language[lang].roles = ids.size();
  for (const auto& [lang, c] : out.by_language) {
    out.all.roles += c.roles;
    out.all.sessions += c.sessions;
    out.all.turns_exchange += c.turns_exchange;
    out.all.turns_message += c.turns_message;
  }
  out.roles_distinct = distinct.size();
  return out;
}

// ---------------------------------------------------------------------------
// Training-config sidecar for external trainers
// ---------------------------------------------------------------------------

// Two schedules: a fixed-step run with a decaying learning rate, and a
// shorter epoch-based run at the floor rate.
inline json training_presets() {
  return json{{"steps-300",
               {{"train_steps", 300},
                {"global_batch_size", 128},
                {"sequence_length", 8192},
                {"learning_rate", 2e-6},
                {"min_learning_rate", 2e-7},
                {"mask_prompt_loss", true},
                {"mask_role_tag_loss", true}}},
              {"epochs-5",
               {{"epochs", 5},
                {"learning_rate", 2e-7},
                {"warmup_ratio", 0.1},
                {"sequence_length", 8192},
                {"mask_prompt_loss", true},
                {"mask_role_tag_loss", true}}}};
}

inline json training_sidecar(const std::string& preset) {
  json presets = training_presets();
  if (!presets.contains(preset))
    throw ConfigError("unknown training preset '" + preset +
                      "' (expected steps-300 or epochs-5)");
  return json{{"schema", kTrainingConfigSchema}, {"selected", preset}, {"presets", presets}};
}

inline void emit_training_sidecar(const std::filesystem::path& path, const std::string& preset) {
  write_file(path, canonical_dump(training_sidecar(preset)) + "\n");
}

// ---------------------------------------------------------------------------
// Corpus emission
// ---------------------------------------------------------------------------

// Plain JSONL without a schema header line: the file feeds external trainers
// that expect every line to be a sample.
inline void save_sft(const std::filesystem::path& path, const std::vector<SftRecord>& records) {
  std::string out;
  for (const auto& r : records) out += canonical_dump(r.to_json()) + "\n";
  write_file(path, out);
}

inline std::vector<SftRecord> load_sft(const std::filesystem::path& path) {
  std::vector<SftRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    out.push_back(SftRecord::from_json(parse_json_line(line, path.string(), line_no)));
  }
  return out;
}

struct SftBuildResult {
  std::vector<SftRecord> train;
  std::vector<SftRecord> test;
  DatasetStats train_stats;
  DatasetStats test_stats;
  std::size_t concealment_checked = 0;
};

// sessions -> concealed corpus, split by reserved roles, with the
// concealment invariant enforced on every record.
inline SftBuildResult build_sft(std::vector<DialogueSession> sessions,
                                const std::set<std::string>& test_role_ids,
                                const CharacterStore* store) {
  SplitResult split = split_roles(std::move(sessions), test_role_ids);
  SftBuildResult out;
  auto convert = [&](std::vector<DialogueSession>& side, std::vector<SftRecord>& dest) {
    for (const auto& s : side) {
      SftRecord r = conceal(s);
      const CharacterRecord* rec = store ? store->find(s.role_id, s.language) : nullptr;
      // Without the store, the golden-knowledge excerpt stands in for the
      // article: it contains the full article text, so the check stays safe.
      const std::string& article = rec ? rec->wiki_article : s.golden_knowledge;
      const std::string description = rec ? rec->description : "";
      auto violations =
          concealment_violations(r.messages.front().content, article, description);
      if (!violations.empty())
        throw PreconditionError("concealment violated for " + r.session_id + ": \"" +
                                excerpt(violations.front(), 80) + "\"");
      ++out.concealment_checked;
      dest.push_back(std::move(r));
    }
  };
  convert(split.train, out.train);
  convert(split.test, out.test);
  out.train_stats = stats(out.train);
  out.test_stats = stats(out.test);
  return out;
}

}  // namespace ditto
