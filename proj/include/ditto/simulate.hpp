#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ditto/backend.hpp"
#include "ditto/character.hpp"
#include "ditto/templates.hpp"

namespace ditto {

inline constexpr const char* kSessionSchema = "sessions/1";

// ---------------------------------------------------------------------------
// Profile verbalization: how record fields bind to template slots.
// ---------------------------------------------------------------------------

// Aliases joined with a language-appropriate separator; an explicit em-dash
// marks the empty case so the template shape stays stable.
inline std::string aliases_text(const CharacterRecord& rec) {
  if (rec.aliases.empty()) return "—";
  return join(rec.aliases, rec.language == Language::zh ? "、" : ", ");
}

// One "property: value" line per claim, in fetch order.
inline std::string claims_block(const CharacterRecord& rec) {
  if (rec.claims.empty()) return "—";
  std::vector<std::string> lines;
  lines.reserve(rec.claims.size());
  for (const auto& [prop, value] : rec.claims) lines.push_back(prop + ": " + value);
  return join(lines, "\n");
}

// The reference profile excerpt used by the knowledge judge.
inline std::string golden_knowledge_text(const CharacterRecord& rec) {
  std::string out = claims_block(rec);
  if (!rec.wiki_article.empty()) out += "\n\n" + rec.wiki_article;
  return out;
}

inline std::map<std::string, std::string> profile_bindings(const CharacterRecord& rec,
                                                           const std::string& suffix = "") {
  return {{"label" + suffix, rec.label},
          {"description" + suffix, rec.description},
          {"aliases" + suffix, aliases_text(rec)},
          {"claims" + suffix, claims_block(rec)},
          {"wiki" + suffix, rec.wiki_article}};
}

inline std::string render_brief_intro(const TemplateSet& templates, const CharacterRecord& rec) {
  return render_format(templates.brief_intro(rec.language),
                       {{"label", rec.label}, {"description", rec.description}});
}

// ---------------------------------------------------------------------------
// Character pairing
// ---------------------------------------------------------------------------

struct CharacterPair {
  std::string role_a;
  std::string role_b;
  Language language = Language::en;
  std::uint64_t rng_seed = 0;
};

// Every role appears as role A exactly once per language; its partner is a
// seeded uniform draw from the same-language pool (articles present), made
// independent of iteration order by deriving one stream per role.
inline std::vector<CharacterPair> pair_characters(const CharacterStore& store,
                                                  std::uint64_t seed) {
  std::vector<CharacterPair> pairs;
  for (Language lang : {Language::en, Language::zh}) {
    auto pool = store.by_language(lang, /*with_article_only=*/true);
    if (pool.empty()) continue;
    if (pool.size() < 2)
      throw PreconditionError("pairing needs at least 2 " + std::string(to_string(lang)) +
                              " roles with articles, have " + std::to_string(pool.size()));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const std::string tag = std::string("pair/") + to_string(lang) + "/" + pool[i]->id;
      SeededRng rng(SeededRng::derive(seed, tag));
      std::size_t j = rng.below(pool.size() - 1);
      if (j >= i) ++j;
      CharacterPair p;
      p.role_a = pool[i]->id;
      p.role_b = pool[j]->id;
      p.language = lang;
      p.rng_seed = SeededRng::derive_seed(seed, tag + "/stream");
      pairs.push_back(std::move(p));
    }
  }
  return pairs;  // pool order is already (language, entity-number) sorted
}

// ---------------------------------------------------------------------------
// Prompt rendering
// ---------------------------------------------------------------------------

struct RenderedPrompt {
  std::string text;
  bool wiki_truncated = false;
  std::size_t estimated_tokens = 0;
};

namespace detail {

// Shrinks the two wiki slots until the rendered prompt fits the token budget.
// The reduction is proportional to each article's share of the overshoot.
inline RenderedPrompt render_query_prompt_bounded(const std::string& tmpl,
                                                  const CharacterRecord& a,
                                                  const CharacterRecord& b,
                                                  const BackendProfile& profile) {
  auto bindings = profile_bindings(a, "1");
  auto more = profile_bindings(b, "2");
  bindings.insert(more.begin(), more.end());

  RenderedPrompt out;
  out.text = render_format(tmpl, bindings);
  const std::size_t budget =
      profile.sampling.context_budget - profile.sampling.max_new_tokens;
  out.estimated_tokens = profile.estimate_tokens(out.text);
  if (out.estimated_tokens <= budget) return out;

  const std::size_t wiki_cp = utf8_length(a.wiki_article) + utf8_length(b.wiki_article);
  const std::size_t overhead_tokens =
      profile.estimate_tokens(out.text) -
      profile.estimate_tokens(a.wiki_article) - profile.estimate_tokens(b.wiki_article);
  const std::size_t allowed_tokens = budget > overhead_tokens ? budget - overhead_tokens : 0;
  const auto allowed_cp =
      static_cast<std::size_t>(static_cast<double>(allowed_tokens) * profile.chars_per_token);

  CharacterRecord ta = a, tb = b;
  if (wiki_cp > 0) {
    const double share_a = static_cast<double>(utf8_length(a.wiki_article)) /
                           static_cast<double>(wiki_cp);
    auto budget_a = static_cast<std::size_t>(share_a * static_cast<double>(allowed_cp));
    truncate_article(ta.wiki_article, budget_a);
    truncate_article(tb.wiki_article, allowed_cp - budget_a);
  }
  auto tb_bindings = profile_bindings(ta, "1");
  auto tb_more = profile_bindings(tb, "2");
  tb_bindings.insert(tb_more.begin(), tb_more.end());
  out.text = render_format(tmpl, tb_bindings);
  out.estimated_tokens = profile.estimate_tokens(out.text);
  out.wiki_truncated = true;
  return out;
}

}  // namespace detail

// Query-simulation prompt for a pair: role A binds the *1 slots, role B *2.
inline RenderedPrompt render_query_prompt(const TemplateSet& templates,
                                          const CharacterPair& pair,
                                          const CharacterStore& store,
                                          const BackendProfile& profile) {
  const CharacterRecord& a = store.require(pair.role_a, pair.language);
  const CharacterRecord& b = store.require(pair.role_b, pair.language);
  return detail::render_query_prompt_bounded(templates.query_sim(pair.language), a, b, profile);
}

// Response-simulation prompt; the ablation variant drops the claims and
// article blocks while keeping the instruction header.
inline std::string render_response_prompt(const TemplateSet& templates,
                                          const CharacterRecord& rec,
                                          bool with_knowledge) {
  return render_format(templates.response_sim(rec.language, with_knowledge),
                       profile_bindings(rec));
}

// ---------------------------------------------------------------------------
// Question parsing (total: never throws, reports diagnostics instead)
// ---------------------------------------------------------------------------

struct ParsedQuestions {
  std::vector<std::string> questions;
  std::vector<std::string> diagnostics;
};

namespace detail {

// Strips markdown code fences and trims to the outermost JSON array so that
// chatty completions ("Here you go: ```json [...] ```") still parse.
inline std::string isolate_json_array(const std::string& text) {
  std::string t = trim(text);
  auto fence = t.find("```");
  if (fence != std::string::npos) {
    auto start = t.find('\n', fence);
    auto end = t.rfind("```");
    if (start != std::string::npos && end != std::string::npos && end > start)
      t = trim(t.substr(start + 1, end - start - 1));
  }
  auto open = t.find('[');
  auto close = t.rfind(']');
  if (open != std::string::npos && close != std::string::npos && close > open)
    return t.substr(open, close - open + 1);
  return t;
}

}  // namespace detail

// Accepts a JSON array of objects with a single string question field; the
// zh template names the field "问题". Extra object fields are tolerated
// (models often attach their explanations despite the requested shape).
inline ParsedQuestions parse_question_payload(const std::string& completion) {
  ParsedQuestions out;
  json j = json::parse(completion, nullptr, false);
  if (j.is_discarded()) j = json::parse(detail::isolate_json_array(completion), nullptr, false);
  if (j.is_discarded()) {
    out.diagnostics.push_back("completion is not JSON: " + excerpt(completion, 120));
    return out;
  }
  if (!j.is_array()) {
    out.diagnostics.push_back("top-level JSON is not an array");
    return out;
  }
  std::size_t index = 0;
  for (const auto& item : j) {
    const std::size_t at = index++;
    if (!item.is_object()) {
      out.diagnostics.push_back("element " + std::to_string(at) + " is not an object");
      continue;
    }
    const json* field = nullptr;
    if (item.contains("question")) field = &item["question"];
    else if (item.contains("问题")) field = &item["问题"];
    if (!field) {
      out.diagnostics.push_back("element " + std::to_string(at) + " has no question field");
      continue;
    }
    if (!field->is_string()) {
      out.diagnostics.push_back("element " + std::to_string(at) + " question is not a string");
      continue;
    }
    std::string q = trim(field->get<std::string>());
    if (q.empty()) {
      out.diagnostics.push_back("element " + std::to_string(at) + " question is empty");
      continue;
    }
    out.questions.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct SimulatedQuestion {
  std::string text;
  std::string answerable_by;
  std::string unanswerable_by;
  Language language = Language::en;
  int generation_round = 1;
  std::string raw_source;

  json to_json() const {
    return json{{"text", text},
                {"answerable_by", answerable_by},
                {"unanswerable_by", unanswerable_by},
                {"language", to_string(language)},
                {"generation_round", generation_round},
                {"raw_source", raw_source}};
  }

  static SimulatedQuestion from_json(const json& j) {
    SimulatedQuestion q;
    q.text = j.at("text").get<std::string>();
    q.answerable_by = j.at("answerable_by").get<std::string>();
    q.unanswerable_by = j.at("unanswerable_by").get<std::string>();
    q.language = language_from_string(j.at("language").get<std::string>());
    q.generation_round = j.value("generation_round", 1);
    q.raw_source = j.value("raw_source", "");
    return q;
  }
};

struct DialogueTurn {
  SimulatedQuestion query;
  std::string response;
  bool expects_rejection = false;
};

struct DialogueSession {
  std::string role_id;
  std::string role_label;
  Language language = Language::en;
  std::string system_full;      // knowledge-augmented simulation prompt
  std::string system_identity;  // identity-only variant (ablation recipe)
  std::string system_brief;     // concealed intro used for SFT emission
  std::string golden_knowledge;
  std::vector<DialogueTurn> turns;

  std::string session_id() const { return std::string(to_string(language)) + "/" + role_id; }

  void validate() const {
    if (turns.empty()) throw PreconditionError("session " + session_id() + " has no turns");
    for (const auto& t : turns) {
      if (t.expects_rejection != (t.query.unanswerable_by == role_id))
        throw PreconditionError("session " + session_id() +
                                ": expects_rejection disagrees with question linkage");
    }
  }

  json to_json() const {
    json turns_json = json::array();
    for (const auto& t : turns)
      turns_json.push_back(json{{"query", t.query.to_json()},
                                {"response", t.response},
                                {"expects_rejection", t.expects_rejection}});
    return json{{"role_id", role_id},
                {"role_label", role_label},
                {"language", to_string(language)},
                {"system_full", system_full},
                {"system_identity", system_identity},
                {"system_brief", system_brief},
                {"golden_knowledge", golden_knowledge},
                {"turns", turns_json}};
  }

  static DialogueSession from_json(const json& j) {
    DialogueSession s;
    s.role_id = j.at("role_id").get<std::string>();
    s.role_label = j.value("role_label", "");
    s.language = language_from_string(j.at("language").get<std::string>());
    s.system_full = j.at("system_full").get<std::string>();
    s.system_identity = j.value("system_identity", s.system_full);
    s.system_brief = j.at("system_brief").get<std::string>();
    s.golden_knowledge = j.value("golden_knowledge", "");
    for (const auto& t : j.at("turns")) {
      DialogueTurn turn;
      turn.query = SimulatedQuestion::from_json(t.at("query"));
      turn.response = t.at("response").get<std::string>();
      turn.expects_rejection = t.at("expects_rejection").get<bool>();
      s.turns.push_back(std::move(turn));
    }
    return s;
  }
};

inline void save_sessions(const std::filesystem::path& path,
                          const std::vector<DialogueSession>& sessions) {
  std::vector<json> records;
  records.reserve(sessions.size());
  for (const auto& s : sessions) records.push_back(s.to_json());
  write_jsonl(path, kSessionSchema, records);
}

inline std::vector<DialogueSession> load_sessions(const std::filesystem::path& path) {
  auto file = read_jsonl(path, kSessionSchema);
  std::vector<DialogueSession> out;
  out.reserve(file.records.size());
  std::size_t line_no = 1;
  for (const auto& rec : file.records) {
    ++line_no;
    try {
      out.push_back(DialogueSession::from_json(rec));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

struct SimEvent {
  std::string kind;     // pair-dropped | turn-failed | session-dropped | question-rejected
  std::string subject;  // pair or session identifier
  std::string detail;

  json to_json() const {
    return json{{"kind", kind}, {"subject", subject}, {"detail", detail}};
  }
};

struct SimOptions {
  std::uint64_t seed = 0;
  int query_rounds = 3;        // completions requested per pair
  int questions_per_pair = 3;  // kept from the pooled format-valid questions
  bool single_question = false;  // strictest reading: keep exactly one
  int turns_per_session = 6;     // exchange cap: role-specific then contrastive
  bool with_knowledge = true;
  int jobs = 1;
};

// Requests up to `query_rounds` completions for one pair, pools every
// format-valid question, then keeps a seeded uniform sample.
inline std::vector<SimulatedQuestion> simulate_questions(const TemplateSet& templates,
                                                         const CharacterPair& pair,
                                                         const CharacterStore& store,
                                                         ChatBackend& backend,
                                                         const SimOptions& opts,
                                                         std::vector<SimEvent>& events) {
  RenderedPrompt prompt = render_query_prompt(templates, pair, store, backend.profile());
  const std::string pair_id =
      std::string(to_string(pair.language)) + "/" + pair.role_a + "x" + pair.role_b;
  if (prompt.wiki_truncated)
    events.push_back({"wiki-truncated", pair_id, "query prompt exceeded the context budget"});

  std::vector<SimulatedQuestion> pool;
  std::set<std::string> seen;
  for (int round = 1; round <= opts.query_rounds; ++round) {
    ChatResult completion = backend.chat({{"user", prompt.text}});
    ParsedQuestions parsed = parse_question_payload(completion.text);
    for (const auto& diag : parsed.diagnostics)
      events.push_back({"question-rejected", pair_id,
                        "round " + std::to_string(round) + ": " + diag});
    for (auto& text : parsed.questions) {
      if (!seen.insert(text).second) continue;  // drop exact duplicates across rounds
      SimulatedQuestion q;
      q.text = std::move(text);
      q.answerable_by = pair.role_a;
      q.unanswerable_by = pair.role_b;
      q.language = pair.language;
      q.generation_round = round;
      q.raw_source = completion.text;
      pool.push_back(std::move(q));
    }
  }
  if (pool.empty()) {
    events.push_back({"pair-dropped", pair_id, "no format-valid questions in any round"});
    return {};
  }
  const std::size_t keep = opts.single_question
                               ? 1
                               : static_cast<std::size_t>(opts.questions_per_pair);
  if (pool.size() <= keep) return pool;
  SeededRng rng(SeededRng::derive(pair.rng_seed, "question-select"));
  auto indices = rng.sample_indices(pool.size(), keep);
  std::sort(indices.begin(), indices.end());  // keep generation order in sessions
  std::vector<SimulatedQuestion> kept;
  kept.reserve(indices.size());
  for (auto i : indices) kept.push_back(pool[i]);
  return kept;
}

// One completion per reply. An empty completion is retried once, then the
// turn is marked failed by returning nullopt.
inline std::optional<std::string> chat_reply(ChatBackend& backend,
                                             const std::vector<ChatMessage>& conversation,
                                             const std::string& subject,
                                             std::vector<SimEvent>& events) {
  std::size_t total_cp = 0;
  for (const auto& m : conversation) total_cp += utf8_length(m.content);
  const auto& sampling = backend.profile().sampling;
  const std::size_t budget = sampling.context_budget - sampling.max_new_tokens;
  if (static_cast<std::size_t>(static_cast<double>(total_cp) /
                               backend.profile().chars_per_token) > budget)
    throw PreconditionError("prompt for " + subject + " exceeds the context budget");
  for (int attempt = 0; attempt < 2; ++attempt) {
    ChatResult completion = backend.chat(conversation);
    if (!trim(completion.text).empty()) return completion.text;
  }
  events.push_back({"turn-failed", subject, "empty completion twice in a row"});
  return std::nullopt;
}

inline std::optional<std::string> simulate_response(const CharacterRecord& rec,
                                                    const std::vector<ChatMessage>& conversation,
                                                    ChatBackend& backend,
                                                    std::vector<SimEvent>& events) {
  return chat_reply(backend, conversation, rec.id, events);
}

inline DialogueSession assemble_session(const CharacterRecord& role,
                                        const std::vector<SimulatedQuestion>& questions,
                                        const std::vector<std::string>& responses,
                                        const TemplateSet& templates,
                                        bool with_knowledge) {
  if (questions.empty()) throw PreconditionError("session for " + role.id + " has no questions");
  if (questions.size() != responses.size())
    throw PreconditionError("session for " + role.id + ": " +
                            std::to_string(questions.size()) + " questions vs " +
                            std::to_string(responses.size()) + " responses");
  DialogueSession s;
  s.role_id = role.id;
  s.role_label = role.label;
  s.language = role.language;
  s.system_full = render_response_prompt(templates, role, with_knowledge);
  s.system_identity = render_response_prompt(templates, role, /*with_knowledge=*/false);
  s.system_brief = render_brief_intro(templates, role);
  s.golden_knowledge = golden_knowledge_text(role);
  for (std::size_t i = 0; i < questions.size(); ++i) {
    DialogueTurn t;
    t.query = questions[i];
    t.response = responses[i];
    t.expects_rejection = questions[i].unanswerable_by == role.id;
    s.turns.push_back(std::move(t));
  }
  s.validate();
  return s;
}

struct SimulationResult {
  std::vector<DialogueSession> sessions;
  std::vector<SimEvent> events;
};

// Full dialogue simulation: pair roles, generate and select questions, then
// grow each session conversationally (every response sees the prior turns).
// Questions serve double duty: role-specific for role A, contrastive for
// role B of the same pair.
inline SimulationResult simulate_all(const CharacterStore& store,
                                     const TemplateSet& templates,
                                     ChatBackend& backend,
                                     const SimOptions& opts) {
  SimulationResult result;
  auto pairs = pair_characters(store, opts.seed);

  // Stage 1: questions per pair, in parallel; events merged in pair order.
  std::vector<std::vector<SimulatedQuestion>> per_pair(pairs.size());
  std::vector<std::vector<SimEvent>> pair_events(pairs.size());
  parallel_for(pairs.size(), opts.jobs, [&](std::size_t i) {
    per_pair[i] =
        simulate_questions(templates, pairs[i], store, backend, opts, pair_events[i]);
  });
  for (auto& ev : pair_events)
    result.events.insert(result.events.end(), ev.begin(), ev.end());

  // Stage 2: per-role question lists — own pair first, then contrastive
  // from every pair that drew this role as the partner, capped.
  std::map<StoreKey, std::vector<SimulatedQuestion>> per_role;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (const auto& q : per_pair[i]) {
      per_role[StoreKey{pairs[i].role_a, pairs[i].language}].push_back(q);
    }
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const StoreKey key{pairs[i].role_b, pairs[i].language};
    auto& list = per_role[key];
    for (const auto& q : per_pair[i]) {
      if (list.size() >= static_cast<std::size_t>(opts.turns_per_session)) break;
      list.push_back(q);
    }
  }
  for (auto& [key, list] : per_role)
    if (list.size() > static_cast<std::size_t>(opts.turns_per_session))
      list.resize(static_cast<std::size_t>(opts.turns_per_session));

  // Stage 3: responses, conversationally, one session per (language, role).
  std::vector<std::pair<StoreKey, std::vector<SimulatedQuestion>>> work(per_role.begin(),
                                                                        per_role.end());
  std::vector<std::optional<DialogueSession>> sessions(work.size());
  std::vector<std::vector<SimEvent>> session_events(work.size());
  parallel_for(work.size(), opts.jobs, [&](std::size_t i) {
    const auto& [key, questions] = work[i];
    if (questions.empty()) return;
    const CharacterRecord& role = store.require(key.id, key.language);
    std::string system_text =
        render_response_prompt(templates, role, opts.with_knowledge);
    std::vector<ChatMessage> conversation{{"system", system_text}};
    std::vector<SimulatedQuestion> answered;
    std::vector<std::string> responses;
    for (const auto& q : questions) {
      conversation.push_back({"user", q.text});
      auto response = simulate_response(role, conversation, backend, session_events[i]);
      if (!response) {
        conversation.pop_back();  // failed turn leaves no trace in the context
        continue;
      }
      conversation.push_back({"assistant", *response});
      answered.push_back(q);
      responses.push_back(*response);
    }
    if (answered.empty()) {
      session_events[i].push_back({"session-dropped",
                                   std::string(to_string(key.language)) + "/" + key.id,
                                   "every turn failed"});
      return;
    }
    sessions[i] = assemble_session(role, answered, responses, templates, opts.with_knowledge);
  });

  for (std::size_t i = 0; i < work.size(); ++i) {
    result.events.insert(result.events.end(), session_events[i].begin(), session_events[i].end());
    if (sessions[i]) result.sessions.push_back(std::move(*sessions[i]));
  }
  // work is map-ordered: (language, entity number) — already the stable order.
  return result;
}

}  // namespace ditto
