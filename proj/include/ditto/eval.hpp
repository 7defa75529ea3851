#pragma once

#include <algorithm>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ditto/simulate.hpp"

namespace ditto {

inline constexpr const char* kTranscriptSchema = "transcripts/1";
inline constexpr const char* kVerdictSchema = "verdicts/1";

// ---------------------------------------------------------------------------
// Transcripts: the dialogues that actually get judged
// ---------------------------------------------------------------------------

// recipe records which system prompt produced the responses:
//   brief-intro          concealed prompt (imitation / candidate models)
//   knowledge-augmented  full simulation prompt (supervision runs)
//   identity-only        ablation variant without claims or article
//   reference            responses taken verbatim from the session file
struct TranscriptTurn {
  std::string question;
  std::string response;
  bool expects_rejection = false;
};

struct Transcript {
  std::string session_id;
  std::string role_id;
  std::string role_label;
  Language language = Language::en;
  std::string recipe;
  std::vector<TranscriptTurn> turns;

  json to_json() const {
    json turns_json = json::array();
    for (const auto& t : turns)
      turns_json.push_back(json{{"question", t.question},
                                {"response", t.response},
                                {"expects_rejection", t.expects_rejection}});
    return json{{"session_id", session_id}, {"role_id", role_id},
                {"role_label", role_label}, {"language", to_string(language)},
                {"recipe", recipe},         {"turns", turns_json}};
  }

  static Transcript from_json(const json& j) {
    Transcript t;
    t.session_id = j.at("session_id").get<std::string>();
    t.role_id = j.at("role_id").get<std::string>();
    t.role_label = j.value("role_label", "");
    t.language = language_from_string(j.at("language").get<std::string>());
    t.recipe = j.value("recipe", "reference");
    for (const auto& turn : j.at("turns")) {
      TranscriptTurn tt;
      tt.question = turn.at("question").get<std::string>();
      tt.response = turn.at("response").get<std::string>();
      tt.expects_rejection = turn.value("expects_rejection", false);
      t.turns.push_back(std::move(tt));
    }
    return t;
  }
};

inline void save_transcripts(const std::filesystem::path& path,
                             const std::vector<Transcript>& transcripts) {
  std::vector<json> records;
  records.reserve(transcripts.size());
  for (const auto& t : transcripts) records.push_back(t.to_json());
  write_jsonl(path, kTranscriptSchema, records);
}

inline std::vector<Transcript> load_transcripts(const std::filesystem::path& path) {
  auto file = read_jsonl(path, kTranscriptSchema);
  std::vector<Transcript> out;
  std::size_t line_no = 1;
  for (const auto& rec : file.records) {
    ++line_no;
    try {
      out.push_back(Transcript::from_json(rec));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline Transcript reference_transcript(const DialogueSession& s) {
  Transcript t;
  t.session_id = s.session_id();
  t.role_id = s.role_id;
  t.role_label = s.role_label;
  t.language = s.language;
  t.recipe = "reference";
  for (const auto& turn : s.turns)
    t.turns.push_back({turn.query.text, turn.response, turn.expects_rejection});
  return t;
}

inline const std::string& system_for_recipe(const DialogueSession& s, const std::string& recipe) {
  if (recipe == "brief-intro") return s.system_brief;
  if (recipe == "knowledge-augmented") return s.system_full;
  if (recipe == "identity-only") return s.system_identity;
  throw ConfigError("unknown transcript recipe '" + recipe + "'");
}

// Re-answers every session question conversationally under the recipe's
// system prompt. Failed turns are dropped; an all-failed session yields no
// transcript.
inline std::vector<Transcript> generate_transcripts(const std::vector<DialogueSession>& sessions,
                                                    ChatBackend& backend,
                                                    const std::string& recipe,
                                                    int jobs,
                                                    std::vector<SimEvent>& events) {
  std::vector<std::optional<Transcript>> slots(sessions.size());
  std::vector<std::vector<SimEvent>> local(sessions.size());
  parallel_for(sessions.size(), jobs, [&](std::size_t i) {
    const DialogueSession& s = sessions[i];
    std::vector<ChatMessage> conversation{{"system", system_for_recipe(s, recipe)}};
    Transcript t;
    t.session_id = s.session_id();
    t.role_id = s.role_id;
    t.role_label = s.role_label;
    t.language = s.language;
    t.recipe = recipe;
    for (const auto& turn : s.turns) {
      conversation.push_back({"user", turn.query.text});
      auto reply = chat_reply(backend, conversation, s.session_id(), local[i]);
      if (!reply) {
        conversation.pop_back();
        continue;
      }
      conversation.push_back({"assistant", *reply});
      t.turns.push_back({turn.query.text, *reply, turn.expects_rejection});
    }
    if (t.turns.empty()) {
      local[i].push_back({"session-dropped", s.session_id(), "every candidate turn failed"});
      return;
    }
    slots[i] = std::move(t);
  });
  std::vector<Transcript> out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    events.insert(events.end(), local[i].begin(), local[i].end());
    if (slots[i]) out.push_back(std::move(*slots[i]));
  }
  return out;
}

// Judge-facing rendering. Deliberately free of role names and system prompts
// so the consistency judge sees nothing but the conversation itself.
inline std::string render_dialogue(const Transcript& t) {
  std::vector<std::string> blocks;
  blocks.reserve(t.turns.size());
  for (const auto& turn : t.turns)
    blocks.push_back("Q: " + turn.question + "\nA: " + turn.response);
  return join(blocks, "\n\n");
}

// ---------------------------------------------------------------------------
// Judge tasks
// ---------------------------------------------------------------------------

enum class JudgeKind { consistency, knowledge, rejection };

inline std::string to_string(JudgeKind k) {
  switch (k) {
    case JudgeKind::consistency: return "consistency";
    case JudgeKind::knowledge: return "knowledge";
    case JudgeKind::rejection: return "rejection";
  }
  throw PreconditionError("unreachable judge kind");
}

inline JudgeKind judge_kind_from_string(std::string_view s) {
  if (s == "consistency") return JudgeKind::consistency;
  if (s == "knowledge") return JudgeKind::knowledge;
  if (s == "rejection") return JudgeKind::rejection;
  throw ParseError("unknown judge kind: '" + std::string(s) + "'");
}

struct JudgeTask {
  JudgeKind kind = JudgeKind::consistency;
  std::string task_id;
  std::string session_id;
  std::string gold_label;
  Language language = Language::en;
  std::string dialogue;
  // consistency
  std::vector<std::string> options;
  int gold_index = -1;
  // knowledge
  std::string golden_knowledge;
  // rejection
  int turn_index = -1;
  std::string question;
  std::string response;
};

// Four shuffled candidates: the gold label plus three seeded same-language
// distractors. The pool must offer at least three distinct non-gold labels.
inline JudgeTask build_consistency_task(const Transcript& t,
                                        const std::vector<std::string>& distractor_pool,
                                        std::uint64_t seed) {
  std::vector<std::string> pool;
  std::set<std::string> seen;
  for (const auto& label : distractor_pool)
    if (label != t.role_label && seen.insert(label).second) pool.push_back(label);
  if (pool.size() < 3)
    throw PreconditionError("consistency task for " + t.session_id + " needs 3 distractors, pool has " +
                            std::to_string(pool.size()));
  SeededRng rng(SeededRng::derive(seed, "consistency/" + t.session_id));
  auto picks = rng.sample_indices(pool.size(), 3);
  JudgeTask task;
  task.kind = JudgeKind::consistency;
  task.task_id = "consistency/" + t.session_id;
  task.session_id = t.session_id;
  task.gold_label = t.role_label;
  task.language = t.language;
  task.dialogue = render_dialogue(t);
  task.options.push_back(t.role_label);
  for (auto i : picks) task.options.push_back(pool[i]);
  rng.shuffle(task.options);
  for (std::size_t i = 0; i < task.options.size(); ++i)
    if (task.options[i] == t.role_label) task.gold_index = static_cast<int>(i);
  return task;
}

inline JudgeTask build_knowledge_task(const Transcript& t, const std::string& golden_knowledge) {
  if (trim(golden_knowledge).empty())
    throw PreconditionError("knowledge task for " + t.session_id + " has no golden knowledge");
  JudgeTask task;
  task.kind = JudgeKind::knowledge;
  task.task_id = "knowledge/" + t.session_id;
  task.session_id = t.session_id;
  task.gold_label = t.role_label;
  task.language = t.language;
  task.dialogue = render_dialogue(t);
  task.golden_knowledge = golden_knowledge;
  return task;
}

// (session_id, turn_index) -> manually annotated out-of-boundary flag.
using BoundaryAnnotations = std::map<std::pair<std::string, int>, bool>;

inline BoundaryAnnotations load_annotations(const std::filesystem::path& path) {
  BoundaryAnnotations out;
  const std::string text = read_file(path);
  if (path.extension() == ".json") {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_array())
      throw ParseError(path.string() + ": annotations must be a JSON array");
    for (const auto& item : j) {
      out[{item.at("session_id").get<std::string>(), item.at("turn_index").get<int>()}] =
          item.at("out_of_boundary").get<bool>();
    }
    return out;
  }
  // CSV: header then session_id,turn_index,out_of_boundary rows.
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty()) continue;
    if (line_no == 1 && t == "session_id,turn_index,out_of_boundary") continue;
    auto first = t.find(',');
    auto second = t.find(',', first == std::string::npos ? first : first + 1);
    if (first == std::string::npos || second == std::string::npos)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
    std::string flag = trim(t.substr(second + 1));
    bool value;
    if (flag == "true" || flag == "1") value = true;
    else if (flag == "false" || flag == "0") value = false;
    else
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": out_of_boundary must be true/false");
    out[{trim(t.substr(0, first)), std::stoi(t.substr(first + 1, second - first - 1))}] = value;
  }
  return out;
}

// One task per out-of-boundary turn. A manual annotation overrides the
// pairing-derived expects_rejection flag.
inline std::vector<JudgeTask> build_rejection_tasks(const Transcript& t,
                                                    const BoundaryAnnotations& annotations) {
  std::vector<JudgeTask> tasks;
  for (std::size_t i = 0; i < t.turns.size(); ++i) {
    bool out_of_boundary = t.turns[i].expects_rejection;
    auto it = annotations.find({t.session_id, static_cast<int>(i)});
    if (it != annotations.end()) out_of_boundary = it->second;
    if (!out_of_boundary) continue;
    JudgeTask task;
    task.kind = JudgeKind::rejection;
    task.task_id = "rejection/" + t.session_id + "/turn" + std::to_string(i);
    task.session_id = t.session_id;
    task.gold_label = t.role_label;
    task.language = t.language;
    task.dialogue = render_dialogue(t);
    task.turn_index = static_cast<int>(i);
    task.question = t.turns[i].question;
    task.response = t.turns[i].response;
    tasks.push_back(std::move(task));
  }
  return tasks;
}

inline std::string options_text(const std::vector<std::string>& options) {
  static const char* letters = "ABCD";
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < options.size(); ++i)
    lines.push_back(std::string(1, letters[i]) + ". " + options[i]);
  return join(lines, "\n");
}

inline std::string render_judge_prompt(const JudgeTemplates& templates, const JudgeTask& task) {
  switch (task.kind) {
    case JudgeKind::consistency:
      return render_format(templates.consistency(),
                           {{"dialogue", task.dialogue}, {"options", options_text(task.options)}});
    case JudgeKind::knowledge:
      return render_format(templates.knowledge(),
                           {{"dialogue", task.dialogue}, {"knowledge", task.golden_knowledge}});
    case JudgeKind::rejection:
      return render_format(templates.rejection(), {{"role", task.gold_label},
                                                   {"question", task.question},
                                                   {"response", task.response}});
  }
  throw PreconditionError("unreachable judge kind");
}

// ---------------------------------------------------------------------------
// Vote parsing (total parsers: nullopt on anything unusable)
// ---------------------------------------------------------------------------

namespace detail {
inline bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}
}  // namespace detail

// First standalone option letter A-D (case-insensitive): "B", "b)", "(C)",
// "Answer: A", "选B".
inline std::optional<int> parse_option_vote(const std::string& text) {
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    char upper = (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
    if (upper < 'A' || upper > 'D') continue;
    bool left_ok = i == 0 || !detail::is_word_char(text[i - 1]);
    bool right_ok = i + 1 >= text.size() || !detail::is_word_char(text[i + 1]);
    if (left_ok && right_ok) return upper - 'A';
  }
  return std::nullopt;
}

// First standalone yes/no (or 是/否/不是); earliest occurrence wins when both
// appear. Word boundaries keep "know" from matching "no", and a "是" inside
// "不是" counts as a no.
inline std::optional<bool> parse_yes_no_vote(const std::string& text) {
  std::string lower = lowercase_ascii(text);
  auto find_word = [&](const std::string& word) -> std::size_t {
    std::size_t from = 0;
    while (true) {
      auto pos = lower.find(word, from);
      if (pos == std::string::npos) return std::string::npos;
      bool left_ok = pos == 0 || !detail::is_word_char(lower[pos - 1]);
      bool right_ok =
          pos + word.size() >= lower.size() || !detail::is_word_char(lower[pos + word.size()]);
      if (left_ok && right_ok) return pos;
      from = pos + 1;
    }
  };
  const std::string shi = "是", bu = "不";
  auto find_bare_shi = [&]() -> std::size_t {
    std::size_t from = 0;
    while (true) {
      auto pos = lower.find(shi, from);
      if (pos == std::string::npos) return std::string::npos;
      if (pos < bu.size() || lower.compare(pos - bu.size(), bu.size(), bu) != 0) return pos;
      from = pos + 1;
    }
  };
  std::size_t yes_at = std::min(find_word("yes"), find_bare_shi());
  std::size_t no_at = std::min({find_word("no"), lower.find("否"), lower.find(bu + shi)});
  if (yes_at == std::string::npos && no_at == std::string::npos) return std::nullopt;
  return yes_at < no_at;
}

// First integer in [1,10]; digit runs are consumed whole so "10" never reads
// as "1".
inline std::optional<int> parse_score_vote(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] >= '0' && text[i] <= '9') {
      std::size_t j = i;
      while (j < text.size() && text[j] >= '0' && text[j] <= '9') ++j;
      if (j - i <= 2) {
        int value = std::stoi(text.substr(i, j - i));
        if (value >= 1 && value <= 10) return value;
      }
      i = j;
    } else {
      ++i;
    }
  }
  return std::nullopt;
}

// Kind-dependent integer encoding: consistency -> option index 0-3;
// rejection -> 1 (refused) / 0 (answered); knowledge -> score 1-10.
inline std::optional<int> parse_vote(JudgeKind kind, const std::string& text) {
  switch (kind) {
    case JudgeKind::consistency: return parse_option_vote(text);
    case JudgeKind::rejection: {
      auto yn = parse_yes_no_vote(text);
      if (!yn) return std::nullopt;
      return *yn ? 1 : 0;
    }
    case JudgeKind::knowledge: return parse_score_vote(text);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Verdicts
// ---------------------------------------------------------------------------

struct JudgeRound {
  std::string raw;
  std::optional<int> parsed;
};

struct JudgeVerdict {
  std::string task_id;
  JudgeKind kind = JudgeKind::consistency;
  std::string session_id;
  Language language = Language::en;
  std::vector<JudgeRound> rounds;
  bool failed = false;      // no round parsed
  int aggregated = -1;      // categorical winner (kind encoding above)
  double score = 0;         // knowledge: median across rounds
  double mean_score = 0;    // knowledge: mean, kept for comparison
  double agreement = 0;     // winner votes / parsed votes
  bool correct = false;     // consistency: matches gold; rejection: refused
  int gold_index = -1;
  std::string judge_config_hash;

  json to_json() const {
    json rounds_json = json::array();
    for (const auto& r : rounds) {
      json rj{{"raw", r.raw}};
      if (r.parsed) rj["parsed"] = *r.parsed;
      rounds_json.push_back(std::move(rj));
    }
    json j{{"task_id", task_id},
           {"kind", to_string(kind)},
           {"session_id", session_id},
           {"language", to_string(language)},
           {"rounds", rounds_json},
           {"failed", failed},
           {"agreement", agreement},
           {"judge_config_hash", judge_config_hash}};
    if (kind == JudgeKind::knowledge) {
      j["score"] = score;
      j["mean_score"] = mean_score;
    } else {
      j["aggregated"] = aggregated;
      j["correct"] = correct;
      if (kind == JudgeKind::consistency) j["gold_index"] = gold_index;
    }
    return j;
  }

  static JudgeVerdict from_json(const json& j) {
    JudgeVerdict v;
    v.task_id = j.at("task_id").get<std::string>();
    v.kind = judge_kind_from_string(j.at("kind").get<std::string>());
    v.session_id = j.at("session_id").get<std::string>();
    v.language = language_from_string(j.at("language").get<std::string>());
    for (const auto& r : j.at("rounds")) {
      JudgeRound round;
      round.raw = r.at("raw").get<std::string>();
      if (r.contains("parsed")) round.parsed = r["parsed"].get<int>();
      v.rounds.push_back(std::move(round));
    }
    v.failed = j.at("failed").get<bool>();
    v.agreement = j.value("agreement", 0.0);
    v.judge_config_hash = j.value("judge_config_hash", "");
    v.aggregated = j.value("aggregated", -1);
    v.score = j.value("score", 0.0);
    v.mean_score = j.value("mean_score", 0.0);
    v.correct = j.value("correct", false);
    v.gold_index = j.value("gold_index", -1);
    return v;
  }
};

// Plurality winner over parsed votes; ties broken by a seeded uniform draw
// among the tied leaders (sorted, so the draw is stable).
inline int majority_vote(const std::vector<int>& votes, std::uint64_t seed,
                         const std::string& tag, double* agreement_out) {
  if (votes.empty()) throw PreconditionError("majority_vote on empty vote set");
  std::map<int, std::size_t> counts;
  for (int v : votes) ++counts[v];
  std::size_t best = 0;
  for (const auto& [value, count] : counts) best = std::max(best, count);
  std::vector<int> leaders;
  for (const auto& [value, count] : counts)
    if (count == best) leaders.push_back(value);  // map order: ascending
  int winner = leaders.size() == 1
                   ? leaders.front()
                   : leaders[SeededRng::derive(seed, "tiebreak/" + tag).below(leaders.size())];
  if (agreement_out)
    *agreement_out = static_cast<double>(best) / static_cast<double>(votes.size());
  return winner;
}

// Median; even counts average the middle two (robust "majority" analogue for
// the 1-10 scale).
inline double median_score(std::vector<int> scores) {
  if (scores.empty()) throw PreconditionError("median_score on empty score set");
  std::sort(scores.begin(), scores.end());
  std::size_t n = scores.size();
  if (n % 2 == 1) return scores[n / 2];
  return (scores[n / 2 - 1] + scores[n / 2]) / 2.0;
}

struct JudgeOptions {
  int rounds = 3;
  double temperature = 0.2;
  std::uint64_t seed = 0;
  int jobs = 1;
};

inline JudgeVerdict run_judge(const JudgeTemplates& templates, const JudgeTask& task,
                              ChatBackend& backend, const JudgeOptions& opts) {
  if (opts.rounds < 1) throw PreconditionError("judging needs at least 1 round");
  const std::string prompt = render_judge_prompt(templates, task);
  JudgeVerdict v;
  v.task_id = task.task_id;
  v.kind = task.kind;
  v.session_id = task.session_id;
  v.language = task.language;
  v.gold_index = task.gold_index;
  v.judge_config_hash = templates.content_hash();
  SamplingOverrides overrides;
  overrides.temperature = opts.temperature;
  std::vector<int> votes;
  for (int round = 0; round < opts.rounds; ++round) {
    ChatResult completion = backend.chat({{"user", prompt}}, overrides);
    JudgeRound r;
    r.raw = completion.text;
    r.parsed = parse_vote(task.kind, completion.text);
    if (r.parsed) votes.push_back(*r.parsed);
    v.rounds.push_back(std::move(r));
  }
  if (votes.empty()) {
    v.failed = true;
    return v;
  }
  if (task.kind == JudgeKind::knowledge) {
    v.score = median_score(votes);
    double sum = 0;
    for (int s : votes) sum += s;
    v.mean_score = sum / static_cast<double>(votes.size());
    std::size_t at_median = 0;
    for (int s : votes)
      if (s == v.score) ++at_median;
    v.agreement = static_cast<double>(at_median) / static_cast<double>(votes.size());
  } else {
    v.aggregated = majority_vote(votes, opts.seed, task.task_id, &v.agreement);
    v.correct = task.kind == JudgeKind::consistency ? v.aggregated == task.gold_index
                                                    : v.aggregated == 1;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Aggregation and reports
// ---------------------------------------------------------------------------

struct MetricAggregate {
  bool present = false;
  double value = 0;
  std::uint64_t judged = 0;
  std::uint64_t failed = 0;

  json to_json() const {
    json j{{"judged", judged}, {"failed", failed}};
    if (present) j["value"] = value;
    return j;
  }

  static MetricAggregate from_json(const json& j) {
    MetricAggregate m;
    m.judged = j.value("judged", 0ull);
    m.failed = j.value("failed", 0ull);
    if (j.contains("value")) {
      m.present = true;
      m.value = j["value"].get<double>();
    }
    return m;
  }
};

struct MetricTriple {
  MetricAggregate cons, know, rej;

  json to_json() const {
    return json{{"cons", cons.to_json()}, {"know", know.to_json()}, {"rej", rej.to_json()}};
  }
  static MetricTriple from_json(const json& j) {
    MetricTriple t;
    t.cons = MetricAggregate::from_json(j.at("cons"));
    t.know = MetricAggregate::from_json(j.at("know"));
    t.rej = MetricAggregate::from_json(j.at("rej"));
    return t;
  }
};

struct EvalReport {
  std::map<std::string, MetricTriple> by_language;  // keyed "en"/"zh"
  MetricTriple all;             // sample-weighted across languages
  MetricTriple all_unweighted;  // plain mean of per-language values
  std::uint64_t sessions = 0;
  std::string judge_config_hash;
  std::string recipe;

  json to_json() const {
    json langs = json::object();
    for (const auto& [lang, t] : by_language) langs[lang] = t.to_json();
    return json{{"languages", langs},
                {"all", all.to_json()},
                {"all_unweighted", all_unweighted.to_json()},
                {"sessions", sessions},
                {"judge_config_hash", judge_config_hash},
                {"recipe", recipe}};
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    for (const auto& [lang, t] : j.at("languages").items())
      r.by_language[lang] = MetricTriple::from_json(t);
    r.all = MetricTriple::from_json(j.at("all"));
    if (j.contains("all_unweighted"))
      r.all_unweighted = MetricTriple::from_json(j["all_unweighted"]);
    r.sessions = j.value("sessions", 0ull);
    r.judge_config_hash = j.value("judge_config_hash", "");
    r.recipe = j.value("recipe", "");
    return r;
  }
};

namespace detail {

struct MetricTally {
  std::uint64_t judged = 0, failed = 0;
  double numerator = 0;  // correct count or score sum

  MetricAggregate finish() const {
    MetricAggregate m;
    m.judged = judged;
    m.failed = failed;
    if (judged > 0) {
      m.present = true;
      m.value = numerator / static_cast<double>(judged);
    }
    return m;
  }
};

inline MetricAggregate unweighted_mean(const std::vector<const MetricAggregate*>& parts) {
  MetricAggregate m;
  double sum = 0;
  std::size_t n = 0;
  for (const auto* p : parts) {
    m.judged += p->judged;
    m.failed += p->failed;
    if (p->present) {
      sum += p->value;
      ++n;
    }
  }
  if (n > 0) {
    m.present = true;
    m.value = sum / static_cast<double>(n);
  }
  return m;
}

}  // namespace detail

// Accuracy = correct / judged (consistency, rejection); knowledge = mean of
// per-session median scores. The sample-weighted "all" pools counts across
// languages; the unweighted variant averages the per-language values.
inline EvalReport aggregate(const std::vector<JudgeVerdict>& verdicts) {
  EvalReport report;
  std::map<std::string, detail::MetricTally> cons, know, rej;
  std::map<std::string, std::set<std::string>> sessions_by_lang;
  std::set<std::string> all_sessions;
  for (const auto& v : verdicts) {
    if (report.judge_config_hash.empty()) report.judge_config_hash = v.judge_config_hash;
    const std::string lang{to_string(v.language)};
    sessions_by_lang[lang].insert(v.session_id);
    all_sessions.insert(v.session_id);
    auto& tally = v.kind == JudgeKind::consistency ? cons[lang]
                  : v.kind == JudgeKind::knowledge ? know[lang]
                                                   : rej[lang];
    if (v.failed) {
      ++tally.failed;
      continue;
    }
    ++tally.judged;
    tally.numerator += v.kind == JudgeKind::knowledge ? v.score : (v.correct ? 1.0 : 0.0);
  }

  detail::MetricTally cons_all, know_all, rej_all;
  std::set<std::string> langs;
  for (const auto& entry : sessions_by_lang) langs.insert(entry.first);
  for (const auto& lang : langs) {
    MetricTriple t;
    t.cons = cons[lang].finish();
    t.know = know[lang].finish();
    t.rej = rej[lang].finish();
    report.by_language[lang] = t;
  }
  for (const auto& lang : langs) {
    cons_all.judged += cons[lang].judged;
    cons_all.failed += cons[lang].failed;
    cons_all.numerator += cons[lang].numerator;
    know_all.judged += know[lang].judged;
    know_all.failed += know[lang].failed;
    know_all.numerator += know[lang].numerator;
    rej_all.judged += rej[lang].judged;
    rej_all.failed += rej[lang].failed;
    rej_all.numerator += rej[lang].numerator;
  }
  report.all.cons = cons_all.finish();
  report.all.know = know_all.finish();
  report.all.rej = rej_all.finish();

  std::vector<const MetricAggregate*> cons_parts, know_parts, rej_parts;
  for (const auto& [lang, t] : report.by_language) {
    cons_parts.push_back(&t.cons);
    know_parts.push_back(&t.know);
    rej_parts.push_back(&t.rej);
  }
  report.all_unweighted.cons = detail::unweighted_mean(cons_parts);
  report.all_unweighted.know = detail::unweighted_mean(know_parts);
  report.all_unweighted.rej = detail::unweighted_mean(rej_parts);
  report.sessions = all_sessions.size();
  return report;
}

inline std::string format_metric(const MetricAggregate& m) {
  if (!m.present) return "—";
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << m.value;
  return out.str();
}

// Table 2-style rendering: one row per language plus the pooled "All" row.
inline std::string render_report_table(const std::string& title, const EvalReport& report) {
  std::ostringstream out;
  out << title << "\n";
  out << std::left << std::setw(8) << "Split" << std::right << std::setw(8) << "Cons."
      << std::setw(8) << "Know." << std::setw(8) << "Rej." << std::setw(10) << "Sessions"
      << "\n";
  auto row = [&](const std::string& name, const MetricTriple& t,
                 std::optional<std::uint64_t> sessions) {
    out << std::left << std::setw(8) << name << std::right << std::setw(8)
        << format_metric(t.cons) << std::setw(8) << format_metric(t.know) << std::setw(8)
        << format_metric(t.rej) << std::setw(10)
        << (sessions ? std::to_string(*sessions) : std::string("")) << "\n";
  };
  for (const auto& [lang, t] : report.by_language) {
    std::string name = lang;
    if (!name.empty()) name[0] = static_cast<char>(std::toupper(name[0]));
    row(name, t, std::nullopt);
  }
  row("All", report.all, report.sessions);
  return out.str();
}

// Side-by-side comparison used by the knowledge-injection ablation readout.
inline json compare_reports(const std::string& name_a, const EvalReport& a,
                            const std::string& name_b, const EvalReport& b) {
  auto entry = [](const MetricAggregate& ma, const MetricAggregate& mb) {
    json j = json::object();
    if (ma.present) j["a"] = ma.value;
    if (mb.present) j["b"] = mb.value;
    if (ma.present && mb.present) j["delta"] = ma.value - mb.value;
    return j;
  };
  return json{{"a", name_a},
              {"b", name_b},
              {"metrics",
               {{"cons", entry(a.all.cons, b.all.cons)},
                {"know", entry(a.all.know, b.all.know)},
                {"rej", entry(a.all.rej, b.all.rej)}}}};
}

inline std::string render_comparison_table(const json& comparison) {
  std::ostringstream out;
  const std::string a = comparison.at("a").get<std::string>();
  const std::string b = comparison.at("b").get<std::string>();
  out << std::left << std::setw(8) << "Metric" << std::right << std::setw(22) << a
      << std::setw(22) << b << std::setw(10) << "Delta" << "\n";
  for (const auto& name : {"cons", "know", "rej"}) {
    const json& m = comparison.at("metrics").at(name);
    auto cell = [&](const char* key) -> std::string {
      if (!m.contains(key)) return "—";
      std::ostringstream v;
      v << std::fixed << std::setprecision(2) << m[key].get<double>();
      return v.str();
    };
    out << std::left << std::setw(8) << name << std::right << std::setw(22) << cell("a")
        << std::setw(22) << cell("b") << std::setw(10) << cell("delta") << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Evaluation orchestration
// ---------------------------------------------------------------------------

struct EvalRun {
  std::vector<Transcript> transcripts;
  std::vector<JudgeVerdict> verdicts;
  EvalReport report;
  std::vector<SimEvent> events;
};

// Builds all three task families over the transcripts and judges them.
// Distractors come from the evaluated set's own labels plus any supplement.
inline EvalRun judge_transcripts(const std::vector<DialogueSession>& sessions,
                                 std::vector<Transcript> transcripts,
                                 const JudgeTemplates& judge_templates,
                                 ChatBackend& judge_backend,
                                 const std::vector<std::string>& extra_distractors,
                                 const BoundaryAnnotations& annotations,
                                 const JudgeOptions& opts,
                                 const std::string& recipe) {
  std::map<std::string, const DialogueSession*> by_id;
  for (const auto& s : sessions) by_id[s.session_id()] = &s;

  std::map<Language, std::vector<std::string>> pools;
  for (const auto& t : transcripts) pools[t.language].push_back(t.role_label);
  for (const auto& label : extra_distractors)
    for (auto& [lang, pool] : pools) pool.push_back(label);

  std::vector<JudgeTask> tasks;
  for (const auto& t : transcripts) {
    auto it = by_id.find(t.session_id);
    if (it == by_id.end())
      throw PreconditionError("transcript " + t.session_id + " has no matching session");
    tasks.push_back(build_consistency_task(t, pools[t.language], opts.seed));
    tasks.push_back(build_knowledge_task(t, it->second->golden_knowledge));
    for (auto& task : build_rejection_tasks(t, annotations)) tasks.push_back(std::move(task));
  }

  EvalRun run;
  run.transcripts = std::move(transcripts);
  run.verdicts.resize(tasks.size());
  parallel_for(tasks.size(), opts.jobs, [&](std::size_t i) {
    run.verdicts[i] = run_judge(judge_templates, tasks[i], judge_backend, opts);
  });
  run.report = aggregate(run.verdicts);
  run.report.recipe = recipe;
  return run;
}

}  // namespace ditto
