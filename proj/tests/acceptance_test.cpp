// Acceptance gate: exercises every advertised guarantee end to end and prints
// one pass/fail line per criterion. Exits nonzero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "ditto/ditto.hpp"
#include "test_paths.hpp"

using namespace ditto;

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const fs::path kFixtures(kFixturesDir);
int g_failures = 0;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename Body>
void criterion(int index, const char* name, Body&& body) {
  std::string note;
  bool ok = false;
  try {
    ok = body(note);
  } catch (const std::exception& e) {
    ok = false;
    note = std::string("exception: ") + e.what();
  }
  std::printf("[%s] %02d %s%s%s\n", ok ? "PASS" : "FAIL", index, name,
              note.empty() ? "" : " — ", note.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

// --- shared helpers --------------------------------------------------------

CharacterRecord load_profile(const std::string& file) {
  return CharacterRecord::from_json(json::parse(read_file(kFixtures / "profiles" / file)));
}

fs::path cli_binary() {
  const char* env = std::getenv("DITTO_BIN_DIR");
  return fs::path(env && *env ? env : kBinDir) / "ditto";
}

int shell(const std::string& cmd) {
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::vector<std::string> kDistractors = {
    "Sherlock Holmes", "Hermione Granger", "Napoleon Bonaparte",
    "林黛玉",           "诸葛亮",           "白素贞"};

JudgeOptions fixture_judge_options() {
  JudgeOptions opts;
  opts.rounds = 3;
  opts.temperature = 0.2;
  opts.seed = 42;
  opts.jobs = 1;
  return opts;
}

// --- criterion bodies ------------------------------------------------------

bool sparql_goldens(std::string& note) {
  auto start = Clock::now();
  bool ok = sparql_query_text(CharacterKind::human, Language::zh, 5000) ==
                read_file(kFixtures / "sparql" / "human_zh.rq") &&
            sparql_query_text(CharacterKind::fictional, Language::zh, 5000) ==
                read_file(kFixtures / "sparql" / "fictional_zh.rq");
  double ms = ms_since(start);
  note = fmt(ms) + " ms";
  return ok && ms < 1000;
}

bool prompt_goldens(std::string& note) {
  auto start = Clock::now();
  GlobalConfig config = GlobalConfig::load(kFixtures / "e2e" / "config.json");
  TemplateSet templates = TemplateSet::load(config.template_dir);
  const BackendProfile& sim = config.backend("sim");

  CharacterStore store;
  store.upsert(load_profile("alice.json"));
  store.upsert(load_profile("peter_griffin.json"));
  store.upsert(load_profile("sun_wukong.json"));
  store.upsert(load_profile("li_bai.json"));

  auto golden = [&](const char* file) { return read_file(kFixtures / "goldens" / file); };
  CharacterPair en_pair{"Q100000001", "Q100000002", Language::en, 0};
  CharacterPair zh_pair{"Q100000011", "Q100000012", Language::zh, 0};
  bool ok = render_query_prompt(templates, en_pair, store, sim).text == golden("query_sim_en.txt") &&
            render_query_prompt(templates, zh_pair, store, sim).text == golden("query_sim_zh.txt");

  CharacterRecord edward = load_profile("edward_iii.json");
  CharacterRecord libai = load_profile("li_bai.json");
  ok = ok && render_response_prompt(templates, edward, true) == golden("response_sim_en.txt") &&
       render_response_prompt(templates, edward, false) == golden("response_sim_noknow_en.txt") &&
       render_response_prompt(templates, libai, true) == golden("response_sim_zh.txt") &&
       render_response_prompt(templates, libai, false) == golden("response_sim_noknow_zh.txt") &&
       render_brief_intro(templates, edward) == golden("brief_intro_en.txt") &&
       render_brief_intro(templates, libai) == golden("brief_intro_zh.txt");

  double ms = ms_since(start);
  note = fmt(ms) + " ms";
  return ok && ms < 1000;
}

bool e2e_replay(std::string& note) {
  const std::string bin = cli_binary().string();
  const std::string config = (kFixtures / "e2e" / "config.json").string();
  const std::string test_roles = (kFixtures / "e2e" / "test-roles.txt").string();
  const std::string distractors = (kFixtures / "e2e" / "distractors.txt").string();

  auto pipeline = [&](const fs::path& dir) -> bool {
    fs::create_directories(dir);
    const std::string log = " >>" + (dir / "cli.log").string() + " 2>&1";
    const std::string store = (dir / "store.jsonl").string();
    const std::string sessions = (dir / "sessions.jsonl").string();
    bool first = true;
    for (const char* pass : {"--kind human --lang en", "--kind fictional --lang en",
                             "--kind human --lang zh", "--kind fictional --lang zh"}) {
      if (shell(bin + " --config " + config + " collect " + pass + " --limit 5 --out " +
                store + (first ? "" : " --merge") + log) != 0)
        return false;
      first = false;
    }
    if (shell(bin + " --config " + config + " simulate --store " + store +
              " --backend sim --seed 42 --out " + sessions + log) != 0)
      return false;
    if (shell(bin + " build-sft --sessions " + sessions + " --test-roles " + test_roles +
              " --store " + store + " --out-dir " + (dir / "sft").string() + log) != 0)
      return false;
    return shell(bin + " --config " + config + " evaluate --sessions " + sessions +
                 " --candidate-backend candidate --judge-backend judge --seed 42 "
                 "--distractor-labels " + distractors + " --out " + (dir / "eval").string() +
                 log) == 0;
  };

  const fs::path root = fs::temp_directory_path() / "ditto_acceptance_e2e";
  fs::remove_all(root);
  auto start = Clock::now();
  if (!pipeline(root / "a") || !pipeline(root / "b")) {
    note = "pipeline step failed (see " + (root / "a" / "cli.log").string() + ")";
    return false;
  }
  double ms = ms_since(start);

  // Byte-reproducibility across the two runs: every data artifact matches
  // (manifests are excluded — they carry wall-clock timestamps).
  bool ok = true;
  for (const char* file :
       {"store.jsonl", "sessions.jsonl", "sft/train.jsonl", "sft/test.jsonl", "sft/stats.json",
        "sft/training_config.json", "eval/transcripts.jsonl", "eval/verdicts.jsonl",
        "eval/report.json", "eval/report.txt"}) {
    if (read_file(root / "a" / file) != read_file(root / "b" / file)) {
      ok = false;
      note = std::string(file) + " differs between runs; ";
    }
  }

  // Concealment invariant holds on 100% of emitted SFT records.
  CharacterStore store = load_store(root / "a" / "store.jsonl");
  std::size_t checked = 0;
  for (const char* split : {"sft/train.jsonl", "sft/test.jsonl"}) {
    for (const auto& rec : load_sft(root / "a" / split)) {
      const CharacterRecord* c = store.find(rec.character_id, rec.language);
      if (!c || !concealment_violations(rec.messages.front().content, c->wiki_article,
                                        c->description)
                     .empty()) {
        ok = false;
        note += "concealment violated for " + rec.session_id + "; ";
      }
      ++checked;
    }
  }
  ok = ok && checked > 0;

  note += fmt(ms) + " ms, " + std::to_string(checked) + " records concealed";
  if (ms >= 30000) ok = false;
  if (ok) fs::remove_all(root);
  return ok;
}

bool dataset_stats(std::string& note) {
  std::vector<SftRecord> records;
  for (int i = 1; i <= 100; ++i) {
    SftRecord r;
    r.character_id = "Q" + std::to_string(200000 + i);
    r.session_id = "en/" + r.character_id;
    r.language = Language::en;
    r.messages.push_back({"system", "You are a synthetic role."});
    const int exchanges = i <= 98 ? 5 : 4;  // 98*5 + 2*4 = 498
    for (int t = 0; t < exchanges; ++t) {
      r.messages.push_back({"user", "q" + std::to_string(t)});
      r.messages.push_back({"assistant", "a" + std::to_string(t)});
      r.expects_rejection.push_back(false);
    }
    r.validate();
    records.push_back(std::move(r));
  }
  DatasetStats s = stats(records);
  note = std::to_string(s.all.roles) + " roles / " + std::to_string(s.all.sessions) +
         " sessions / " + std::to_string(s.all.turns_exchange) + " exchanges";
  return s.all.roles == 100 && s.all.sessions == 100 && s.all.turns_exchange == 498 &&
         s.all.turns_message == 996 && s.roles_distinct == 100;
}

bool majority_voting(std::string& note) {
  SeededRng rng(SeededRng::derive(42, "acceptance/majority"));
  for (int i = 0; i < 10000; ++i) {
    std::vector<int> votes = {static_cast<int>(rng.below(4)), static_cast<int>(rng.below(4)),
                              static_cast<int>(rng.below(4))};
    std::map<int, int> counts;
    for (int v : votes) ++counts[v];
    int best = 0;
    for (const auto& [_, n] : counts) best = std::max(best, n);
    std::vector<int> leaders;
    for (const auto& [v, n] : counts)
      if (n == best) leaders.push_back(v);

    const std::string tag = "case/" + std::to_string(i);
    double agreement = 0;
    int winner = majority_vote(votes, 7, tag, &agreement);
    if (counts[winner] != best) {
      note = "non-plurality winner in case " + std::to_string(i);
      return false;
    }
    if (leaders.size() == 1 && winner != leaders.front()) {
      note = "strict plurality ignored in case " + std::to_string(i);
      return false;
    }
    if (agreement != static_cast<double>(best) / 3.0) {
      note = "agreement ratio wrong in case " + std::to_string(i);
      return false;
    }
    double again = 0;
    if (majority_vote(votes, 7, tag, &again) != winner) {
      note = "tiebreak not deterministic in case " + std::to_string(i);
      return false;
    }

    std::vector<int> scores = {1 + static_cast<int>(rng.below(10)),
                               1 + static_cast<int>(rng.below(10)),
                               1 + static_cast<int>(rng.below(10))};
    std::vector<int> sorted = scores;
    std::sort(sorted.begin(), sorted.end());
    if (median_score(scores) != static_cast<double>(sorted[1])) {
      note = "median wrong in case " + std::to_string(i);
      return false;
    }
  }
  note = "10000 multisets";
  return true;
}

bool consistency_distribution(std::string& note) {
  Transcript t;
  t.role_id = "Q1";
  t.role_label = "Gold";
  t.language = Language::en;
  t.turns.push_back({"Who are you?", "The gold role.", false});
  const std::vector<std::string> pool = {"D1", "D2", "D3", "D4", "D5",
                                         "D6", "D7", "D8", "D9"};
  std::array<int, 4> positions{};
  for (int i = 0; i < 10000; ++i) {
    t.session_id = "en/Q" + std::to_string(i);
    JudgeTask task = build_consistency_task(t, pool, 42);
    if (task.options.size() != 4 ||
        std::set<std::string>(task.options.begin(), task.options.end()).size() != 4 ||
        task.gold_index < 0 || task.options[task.gold_index] != "Gold") {
      note = "malformed option set in draw " + std::to_string(i);
      return false;
    }
    ++positions[static_cast<std::size_t>(task.gold_index)];
  }
  // Binomial(10000, 1/4): 3 sigma = 3 * sqrt(10000 * 0.25 * 0.75) ~= 129.9.
  const double three_sigma = 3.0 * std::sqrt(10000 * 0.25 * 0.75);
  note = "gold positions";
  bool ok = true;
  for (int c : positions) {
    note += " " + std::to_string(c);
    if (std::abs(c - 2500) >= three_sigma) ok = false;
  }
  return ok;
}

bool report_arithmetic(std::string& note) {
  std::vector<JudgeVerdict> verdicts;
  auto add = [&](int i, JudgeKind kind) {
    JudgeVerdict v;
    v.kind = kind;
    v.session_id = "en/Q" + std::to_string(300000 + i);
    v.task_id = to_string(kind) + "/" + v.session_id;
    v.language = Language::en;
    v.judge_config_hash = "synthetic-judge";
    v.rounds = {{"vote", 1}};
    if (kind == JudgeKind::knowledge) {
      v.score = i < 64 ? 7 : 6;  // 64*7 + 36*6 = 664 -> mean 6.64
      v.mean_score = v.score;
    } else if (kind == JudgeKind::consistency) {
      v.correct = i < 90;  // 90 / 100
    } else {
      v.correct = i < 82;  // 82 / 100
    }
    verdicts.push_back(std::move(v));
  };
  for (int i = 0; i < 100; ++i) {
    add(i, JudgeKind::consistency);
    add(i, JudgeKind::knowledge);
    add(i, JudgeKind::rejection);
  }
  EvalReport report = aggregate(verdicts);
  std::string table = render_report_table("WikiRoleEval (synthetic)", report);
  note = "cons " + format_metric(report.all.cons) + ", know " + format_metric(report.all.know) +
         ", rej " + format_metric(report.all.rej);
  return report.sessions == 100 && format_metric(report.all.cons) == "0.90" &&
         format_metric(report.all.know) == "6.64" && format_metric(report.all.rej) == "0.82" &&
         table.find("0.90") != std::string::npos && table.find("6.64") != std::string::npos &&
         table.find("0.82") != std::string::npos;
}

bool knowledge_ablation(std::string& note) {
  GlobalConfig config = GlobalConfig::load(kFixtures / "e2e" / "config.json");
  auto sessions = load_sessions(kFixtures / "e2e" / "sessions.jsonl");
  JudgeTemplates judge_templates = JudgeTemplates::load(config.judge_dir);
  auto supervision = open_backend(config.backend("supervision"));
  auto judge = open_backend(config.backend("judge"));
  JudgeOptions opts = fixture_judge_options();

  EvalRun with = supervision_performance(sessions, *supervision, judge_templates, *judge,
                                         kDistractors, {}, opts, true);
  EvalRun without = supervision_performance(sessions, *supervision, judge_templates, *judge,
                                            kDistractors, {}, opts, false);
  if (with.report.recipe == without.report.recipe) {
    note = "recipes not distinct";
    return false;
  }
  json comparison = compare_reports("with-knowledge", with.report, "without-knowledge",
                                    without.report);
  const json& know = comparison.at("metrics").at("know");
  if (!know.contains("delta")) {
    note = "comparison table lists no knowledge delta";
    return false;
  }
  const double delta = know["delta"].get<double>();
  std::string table = render_comparison_table(comparison);
  note = "know " + format_metric(with.report.all.know) + " vs " +
         format_metric(without.report.all.know) + ", delta " + fmt(delta);
  return delta > 0 && table.find("know") != std::string::npos;
}

bool crosssup_oracle(std::string& note) {
  auto make_report = [](const std::string& recipe, double cons, double know, double rej) {
    EvalReport r;
    r.recipe = recipe;
    r.judge_config_hash = "judge-h";
    r.sessions = 2;
    for (MetricAggregate* m : {&r.all.cons, &r.all.know, &r.all.rej}) {
      m->present = true;
      m->judged = 2;
    }
    r.all.cons.value = cons;
    r.all.know.value = know;
    r.all.rej.value = rej;
    return r;
  };
  // Dyadic values keep every OLS quantity exactly representable, so the
  // hand-computed slopes and intercepts can be compared with ==.
  const double offset[4] = {0.125, -0.125, 0.0, 0.25};
  std::vector<MatrixCell> cells;
  for (int i = 4; i >= 1; --i) {  // reversed insertion: analysis must sort
    for (int j = 4; j >= 1; --j) {
      const double cons = 0.125 * i, know = 2.0 * i, rej = 0.125 * i;
      MatrixCell cell;
      cell.supervision_model = "sup-" + std::to_string(i);
      cell.seed_model = "seed-" + std::to_string(j);
      cell.dataset_hash = "d41d8";
      cell.supervision_perf = make_report("knowledge-augmented", cons, know, rej);
      attach_imitation(cell, make_report("brief-intro", cons + offset[j - 1],
                                         0.5 * know + 2.0, 1.0 - rej));
      cells.push_back(std::move(cell));
    }
  }

  // Round-trip through the JSONL form before analyzing.
  const fs::path tmp = fs::temp_directory_path() / "ditto_acceptance_cells.jsonl";
  save_cells(tmp, cells);
  MatrixAnalysis analysis = build_matrix(load_cells(tmp));
  fs::remove(tmp);

  auto trend_is = [&](const MetricAnalysis& m, const std::string& seed, double slope,
                      double intercept) {
    auto it = m.trends.find(seed);
    return it != m.trends.end() && it->second.slope == slope &&
           it->second.intercept == intercept && it->second.n == 4;
  };
  const MetricAnalysis& cons = analysis.metrics.at("cons");
  const MetricAnalysis& know = analysis.metrics.at("know");
  const MetricAnalysis& rej = analysis.metrics.at("rej");

  bool ok = analysis.cells == 16;
  ok = ok && cons.points.size() == 16 && cons.above == 8 && cons.below == 4 && cons.on == 4 &&
       cons.excluded == 0;
  ok = ok && trend_is(cons, "seed-1", 1.0, 0.125) && trend_is(cons, "seed-2", 1.0, -0.125) &&
       trend_is(cons, "seed-3", 1.0, 0.0) && trend_is(cons, "seed-4", 1.0, 0.25);
  ok = ok && know.points.size() == 16 && know.above == 4 && know.on == 4 && know.below == 8;
  for (const char* seed : {"seed-1", "seed-2", "seed-3", "seed-4"})
    ok = ok && trend_is(know, seed, 0.5, 2.0) && trend_is(rej, seed, -1.0, 1.0);
  ok = ok && rej.points.size() == 16 && rej.above == 12 && rej.on == 4 && rej.below == 0;
  ok = ok && cons.points.front().supervision == "sup-1" && cons.points.front().seed == "seed-1" &&
       cons.points.back().supervision == "sup-4" && cons.points.back().seed == "seed-4";
  note = "16 cells, 3 metrics, 12 trend lines";
  return ok;
}

bool parser_fuzz(std::string& note) {
  const std::vector<std::string> fragments = {
      "{",     "}",        "[",          "]",       "\"question\"", "\"问题\"", ":",
      ",",     " ",        "\n",         "```json\n", "```",        "null",     "42",
      "\"",    "question", "\\",         "\xe4\xb8", "\xff",        "true",     "-",
      "0.5e",  "answer: B", "yes",       "10",      "{\"question\": \"\"}",
      "[{\"question\"", "这不是", "A.", "out of 10"};
  SeededRng rng(SeededRng::derive(42, "acceptance/fuzz"));
  std::size_t parsed = 0, diagnosed = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string input;
    const std::size_t pieces = 1 + rng.below(12);
    for (std::size_t p = 0; p < pieces; ++p)
      input += fragments[rng.below(fragments.size())];

    ParsedQuestions qs = parse_question_payload(input);  // must never abort
    if (!qs.questions.empty()) ++parsed;
    if (!qs.diagnostics.empty()) ++diagnosed;
    if (qs.questions.empty() && qs.diagnostics.empty()) {
      // Only a genuinely empty JSON array may parse to nothing silently.
      json j = json::parse(input, nullptr, false);
      if (j.is_discarded())
        j = json::parse(detail::isolate_json_array(input), nullptr, false);
      if (!j.is_array() || !j.empty()) {
        note = "empty result without diagnostics for case " + std::to_string(i);
        return false;
      }
    }

    for (JudgeKind kind :
         {JudgeKind::consistency, JudgeKind::knowledge, JudgeKind::rejection})
      (void)parse_vote(kind, input);  // optional-returning, must never abort
    (void)parse_option_vote(input);
    (void)parse_yes_no_vote(input);
    (void)parse_score_vote(input);
  }
  note = "1000 cases, " + std::to_string(diagnosed) + " diagnosed, " + std::to_string(parsed) +
         " accidentally well-formed";
  return true;
}

bool live_smoke(std::string& note) {
  const char* live_config = std::getenv("DITTO_LIVE_SMOKE");
  if (!live_config || !*live_config) {
    note = "skipped (set DITTO_LIVE_SMOKE=<config.json> with live 'sim' and 'judge' backends)";
    return true;
  }
  GlobalConfig config = GlobalConfig::load(live_config);
  TemplateSet templates = TemplateSet::load(config.template_dir);
  JudgeTemplates judge_templates = JudgeTemplates::load(config.judge_dir);

  CharacterStore store;
  for (const char* name : {"alice.json", "peter_griffin.json"}) store.upsert(load_profile(name));

  auto sim = open_backend(config.backend("sim"));
  SimOptions sim_opts;
  sim_opts.seed = 1;
  sim_opts.query_rounds = 1;
  sim_opts.questions_per_pair = 1;
  sim_opts.single_question = true;
  sim_opts.turns_per_session = 2;
  sim_opts.jobs = 1;
  SimulationResult result = simulate_all(store, templates, *sim, sim_opts);
  if (result.sessions.empty()) {
    note = "live simulation produced no sessions";
    return false;
  }
  const fs::path tmp = fs::temp_directory_path() / "ditto_acceptance_live.jsonl";
  save_sessions(tmp, result.sessions);
  auto reloaded = load_sessions(tmp);  // schema-validating round trip
  fs::remove(tmp);

  auto judge = open_backend(config.backend("judge"));
  JudgeOptions judge_opts;
  judge_opts.rounds = 1;
  judge_opts.seed = 1;
  judge_opts.jobs = 1;
  std::vector<DialogueSession> one = {reloaded.front()};
  std::vector<Transcript> transcripts = {reference_transcript(one.front())};
  EvalRun run = judge_transcripts(one, transcripts, judge_templates, *judge,
                                  {"Gamma", "Delta", "Epsilon"}, {}, judge_opts, "brief-intro");
  if (run.verdicts.empty()) {
    note = "live judging produced no verdicts";
    return false;
  }
  for (const auto& v : run.verdicts) (void)JudgeVerdict::from_json(v.to_json());
  note = std::to_string(one.front().turns.size()) + " turns simulated, " +
         std::to_string(run.verdicts.size()) + " verdicts judged live";
  return true;
}

}  // namespace

int main() {
  criterion(1, "sparql-goldens", sparql_goldens);
  criterion(2, "prompt-goldens", prompt_goldens);
  criterion(3, "e2e-replay", e2e_replay);
  criterion(4, "dataset-stats", dataset_stats);
  criterion(5, "majority-voting", majority_voting);
  criterion(6, "consistency-distribution", consistency_distribution);
  criterion(7, "report-arithmetic", report_arithmetic);
  criterion(8, "knowledge-ablation", knowledge_ablation);
  criterion(9, "crosssup-oracle", crosssup_oracle);
  criterion(10, "parser-fuzz", parser_fuzz);
  criterion(11, "live-smoke", live_smoke);

  std::printf("%d/11 criteria passed\n", 11 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
