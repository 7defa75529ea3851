// Command-line front end: collect -> simulate -> build-sft -> evaluate, plus
// the cross-supervision matrix and report rendering. Every run writes a
// manifest recording inputs, outputs, and the seed.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ditto/ditto.hpp"

namespace {

using namespace ditto;

struct GlobalArgs {
  std::string config_path;
  int jobs = 0;  // 0: take the config's value
  bool verbose = false;
};

GlobalConfig load_config(const GlobalArgs& args) {
  GlobalConfig config;
  if (!args.config_path.empty()) config = GlobalConfig::load(args.config_path);
  if (args.jobs > 0) config.jobs = args.jobs;
  return config;
}

std::string joined_command(int argc, char** argv) {
  std::vector<std::string> parts(argv, argv + argc);
  return join(parts, " ");
}

void log_events(const std::vector<SimEvent>& events, bool verbose) {
  if (!verbose) return;
  for (const auto& e : events)
    std::cerr << "[" << e.kind << "] " << e.subject << ": " << e.detail << "\n";
}

std::unique_ptr<ChatBackend> open_named_backend(const GlobalConfig& config,
                                                const std::string& name) {
  return open_backend(config.backend(name));
}

// --- collect ---------------------------------------------------------------

int run_collect(const GlobalArgs& global, const std::string& kind_str,
                const std::string& lang_str, std::uint64_t limit, const std::string& out,
                bool merge, const std::string& command) {
  GlobalConfig config = load_config(global);
  CharacterKind kind = kind_from_string(kind_str);
  Language lang = language_from_string(lang_str);
  if (limit < 1) throw PreconditionError("--limit must be >= 1");

  auto fetcher = config.make_fetcher();
  WikiClientOptions wiki_opts;
  wiki_opts.article_budget = config.article_budget;
  WikiClient client(&fetcher, config.endpoints, wiki_opts);

  RunManifest manifest;
  manifest.command = command;
  manifest.config_hash = config.config_hash;
  manifest.started_at = now_iso8601();

  CollectResult result = collect_characters(client, fetcher, kind, lang, limit, config.jobs);
  if (merge && std::filesystem::exists(out)) {
    CharacterStore existing = load_store(out);
    existing.merge(result.store);
    result.store = std::move(existing);
  }
  save_store(result.store, out);

  manifest.counters["records"] = result.store.size();
  manifest.counters["skipped"] = result.skipped.size();
  manifest.add_output(out);
  manifest.write_sidecar(out);
  if (global.verbose)
    for (const auto& s : result.skipped)
      std::cerr << "[skipped] " << s.id << ": " << s.detail << "\n";
  std::cout << "collected " << result.store.size() << " records (" << result.skipped.size()
            << " skipped) -> " << out << "\n";
  return 0;
}

// --- simulate --------------------------------------------------------------

int run_simulate(const GlobalArgs& global, const std::string& store_path,
                 const std::string& backend_name, std::uint64_t seed, int turns_per_session,
                 bool no_knowledge, int query_rounds, int questions_per_pair,
                 bool single_question, const std::string& out, const std::string& command) {
  GlobalConfig config = load_config(global);
  CharacterStore store = load_store(store_path);
  TemplateSet templates = TemplateSet::load(config.template_dir);
  auto backend = open_named_backend(config, backend_name);

  SimOptions opts;
  opts.seed = seed;
  opts.turns_per_session = turns_per_session;
  opts.with_knowledge = !no_knowledge;
  opts.query_rounds = query_rounds;
  opts.questions_per_pair = questions_per_pair;
  opts.single_question = single_question;
  opts.jobs = config.jobs;

  RunManifest manifest;
  manifest.command = command;
  manifest.config_hash = config.config_hash;
  manifest.seed = seed;
  manifest.backends = {backend_name};
  manifest.started_at = now_iso8601();
  manifest.add_input(store_path);

  SimulationResult result = simulate_all(store, templates, *backend, opts);
  save_sessions(out, result.sessions);
  log_events(result.events, global.verbose);

  manifest.counters["sessions"] = result.sessions.size();
  manifest.counters["events"] = result.events.size();
  manifest.add_output(out);
  manifest.write_sidecar(out);
  std::cout << "simulated " << result.sessions.size() << " sessions -> " << out << "\n";
  return 0;
}

// --- build-sft -------------------------------------------------------------

int run_build_sft(const GlobalArgs& global, const std::string& sessions_path,
                  const std::string& test_roles_path, const std::string& out_dir,
                  const std::string& preset, const std::string& store_path,
                  const std::string& command) {
  GlobalConfig config = load_config(global);
  auto sessions = load_sessions(sessions_path);
  auto test_roles = load_role_list(test_roles_path);
  std::optional<CharacterStore> store;
  if (!store_path.empty()) store = load_store(store_path);

  RunManifest manifest;
  manifest.command = command;
  manifest.config_hash = config.config_hash;
  manifest.started_at = now_iso8601();
  manifest.add_input(sessions_path);
  manifest.add_input(test_roles_path);
  if (!store_path.empty()) manifest.add_input(store_path);

  SftBuildResult result =
      build_sft(std::move(sessions), test_roles, store ? &*store : nullptr);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  save_sft(dir / "train.jsonl", result.train);
  save_sft(dir / "test.jsonl", result.test);
  json stats_json{{"train", result.train_stats.to_json()},
                  {"test", result.test_stats.to_json()}};
  write_file(dir / "stats.json", canonical_dump(stats_json) + "\n");
  emit_training_sidecar(dir / "training_config.json", preset);

  manifest.counters["train_records"] = result.train.size();
  manifest.counters["test_records"] = result.test.size();
  manifest.counters["concealment_checked"] = result.concealment_checked;
  for (const char* name : {"train.jsonl", "test.jsonl", "stats.json", "training_config.json"})
    manifest.add_output(dir / name);
  manifest.write(dir);
  std::cout << "emitted " << result.train.size() << " train / " << result.test.size()
            << " test records -> " << out_dir << "\n";
  return 0;
}

// --- evaluate --------------------------------------------------------------

std::vector<std::string> load_label_lines(const std::string& path) {
  std::vector<std::string> labels;
  if (path.empty()) return labels;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (!t.empty() && t[0] != '#') labels.push_back(t);
  }
  return labels;
}

int run_evaluate(const GlobalArgs& global, const std::string& sessions_path,
                 const std::string& candidate_backend, const std::string& transcripts_path,
                 const std::string& judge_backend, int rounds, double temperature,
                 std::uint64_t seed, const std::string& out_dir,
                 const std::string& distractor_path, const std::string& annotations_path,
                 const std::string& command) {
  GlobalConfig config = load_config(global);
  auto sessions = load_sessions(sessions_path);
  JudgeTemplates judge_templates = JudgeTemplates::load(config.judge_dir);
  auto judge = open_named_backend(config, judge_backend);

  RunManifest manifest;
  manifest.command = command;
  manifest.config_hash = config.config_hash;
  manifest.seed = seed;
  manifest.backends = {judge_backend};
  manifest.started_at = now_iso8601();
  manifest.add_input(sessions_path);

  std::vector<SimEvent> events;
  std::vector<Transcript> transcripts;
  if (!transcripts_path.empty()) {
    transcripts = load_transcripts(transcripts_path);
    manifest.add_input(transcripts_path);
  } else if (!candidate_backend.empty()) {
    auto candidate = open_named_backend(config, candidate_backend);
    manifest.backends.push_back(candidate_backend);
    transcripts =
        generate_transcripts(sessions, *candidate, "brief-intro", config.jobs, events);
  } else {
    for (const auto& s : sessions) transcripts.push_back(reference_transcript(s));
  }

  BoundaryAnnotations annotations;
  if (!annotations_path.empty()) {
    annotations = load_annotations(annotations_path);
    manifest.add_input(annotations_path);
  }
  auto distractors = load_label_lines(distractor_path);
  if (!distractor_path.empty()) manifest.add_input(distractor_path);

  JudgeOptions opts;
  opts.rounds = rounds;
  opts.temperature = temperature;
  opts.seed = seed;
  opts.jobs = config.jobs;

  const std::string recipe = transcripts.empty() ? "reference" : transcripts.front().recipe;
  EvalRun run = judge_transcripts(sessions, std::move(transcripts), judge_templates, *judge,
                                  distractors, annotations, opts, recipe);
  run.events.insert(run.events.end(), events.begin(), events.end());
  log_events(run.events, global.verbose);

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  save_transcripts(dir / "transcripts.jsonl", run.transcripts);
  std::vector<json> verdicts_json;
  for (const auto& v : run.verdicts) verdicts_json.push_back(v.to_json());
  write_jsonl(dir / "verdicts.jsonl", kVerdictSchema, verdicts_json);
  write_file(dir / "report.json", canonical_dump(run.report.to_json()) + "\n");
  write_file(dir / "report.txt", render_report_table("WikiRoleEval", run.report));

  std::uint64_t failures = 0;
  for (const auto& v : run.verdicts) failures += v.failed ? 1 : 0;
  manifest.counters["transcripts"] = run.transcripts.size();
  manifest.counters["verdicts"] = run.verdicts.size();
  manifest.counters["judge_failures"] = failures;
  for (const char* name : {"transcripts.jsonl", "verdicts.jsonl", "report.json", "report.txt"})
    manifest.add_output(dir / name);
  manifest.write(dir);
  std::cout << render_report_table("WikiRoleEval (" + run.report.recipe + ")", run.report);
  return 0;
}

// --- crosssup --------------------------------------------------------------

int run_crosssup_run(const GlobalArgs& global, const std::string& test_path,
                     const std::string& supervision_backend, const std::string& judge_backend,
                     std::uint64_t seed, int rounds, double temperature, bool no_knowledge,
                     const std::string& seed_model, const std::string& imitation_report_path,
                     const std::string& distractor_path, const std::string& annotations_path,
                     const std::string& out_dir, const std::string& command) {
  GlobalConfig config = load_config(global);
  auto sessions = load_sessions(test_path);
  JudgeTemplates judge_templates = JudgeTemplates::load(config.judge_dir);
  auto sup = open_named_backend(config, supervision_backend);
  auto judge = open_named_backend(config, judge_backend);

  RunManifest manifest;
  manifest.command = command;
  manifest.config_hash = config.config_hash;
  manifest.seed = seed;
  manifest.backends = {supervision_backend, judge_backend};
  manifest.started_at = now_iso8601();
  manifest.add_input(test_path);

  BoundaryAnnotations annotations;
  if (!annotations_path.empty()) {
    annotations = load_annotations(annotations_path);
    manifest.add_input(annotations_path);
  }
  auto distractors = load_label_lines(distractor_path);
  if (!distractor_path.empty()) manifest.add_input(distractor_path);

  JudgeOptions opts;
  opts.rounds = rounds;
  opts.temperature = temperature;
  opts.seed = seed;
  opts.jobs = config.jobs;

  EvalRun run = supervision_performance(sessions, *sup, judge_templates, *judge, distractors,
                                        annotations, opts, !no_knowledge);
  log_events(run.events, global.verbose);

  MatrixCell cell;
  cell.supervision_model = supervision_backend;
  cell.seed_model = seed_model;
  cell.supervision_perf = run.report;
  cell.dataset_hash = sha256_file(test_path);
  if (!imitation_report_path.empty()) {
    json j = json::parse(read_file(imitation_report_path), nullptr, false);
    if (j.is_discarded())
      throw ParseError(imitation_report_path + ": imitation report is not JSON");
    attach_imitation(cell, EvalReport::from_json(j));
    manifest.add_input(imitation_report_path);
  }
  cell.validate();

  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  save_transcripts(dir / "transcripts.jsonl", run.transcripts);
  std::vector<json> verdicts_json;
  for (const auto& v : run.verdicts) verdicts_json.push_back(v.to_json());
  write_jsonl(dir / "verdicts.jsonl", kVerdictSchema, verdicts_json);
  write_file(dir / "report.json", canonical_dump(run.report.to_json()) + "\n");
  write_file(dir / "report.txt",
             render_report_table("Supervision (" + run.report.recipe + ")", run.report));
  save_cells(dir / "cells.jsonl", {cell});

  manifest.counters["transcripts"] = run.transcripts.size();
  manifest.counters["verdicts"] = run.verdicts.size();
  for (const char* name :
       {"transcripts.jsonl", "verdicts.jsonl", "report.json", "report.txt", "cells.jsonl"})
    manifest.add_output(dir / name);
  manifest.write(dir);
  std::cout << render_report_table("Supervision (" + run.report.recipe + ")", run.report);
  return 0;
}

int run_crosssup_analyze(const GlobalArgs& global, const std::string& cells_path,
                         const std::string& out_dir, const std::string& command) {
  GlobalConfig config = load_config(global);
  auto cells = load_cells(cells_path);

  RunManifest manifest;
  manifest.command = command;
  manifest.config_hash = config.config_hash;
  manifest.started_at = now_iso8601();
  manifest.add_input(cells_path);

  MatrixAnalysis analysis = build_matrix(cells);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  write_file(dir / "analysis.json", canonical_dump(analysis.to_json()) + "\n");
  write_file(dir / "plot.csv", render_plot_csv(analysis));

  manifest.counters["cells"] = analysis.cells;
  manifest.add_output(dir / "analysis.json");
  manifest.add_output(dir / "plot.csv");
  manifest.write(dir);
  std::cout << "analyzed " << analysis.cells << " cells -> " << out_dir << "\n";
  return 0;
}

// --- report ----------------------------------------------------------------

int run_report(const std::string& eval_path, const std::vector<std::string>& compare_paths,
               const std::string& stats_path) {
  if (!eval_path.empty()) {
    json j = json::parse(read_file(eval_path), nullptr, false);
    if (j.is_discarded()) throw ParseError(eval_path + ": report is not JSON");
    std::cout << render_report_table("WikiRoleEval", EvalReport::from_json(j));
  }
  if (compare_paths.size() == 2) {
    auto load = [](const std::string& p) {
      json j = json::parse(read_file(p), nullptr, false);
      if (j.is_discarded()) throw ParseError(p + ": report is not JSON");
      return EvalReport::from_json(j);
    };
    EvalReport a = load(compare_paths[0]);
    EvalReport b = load(compare_paths[1]);
    json cmp = compare_reports(compare_paths[0], a, compare_paths[1], b);
    std::cout << render_comparison_table(cmp);
  } else if (!compare_paths.empty()) {
    throw PreconditionError("--compare takes exactly two report paths");
  }
  if (!stats_path.empty()) {
    json j = json::parse(read_file(stats_path), nullptr, false);
    if (j.is_discarded()) throw ParseError(stats_path + ": stats file is not JSON");
    std::cout << j.dump(2) << "\n";
  }
  return 0;
}

void print_error(const std::string& kind, const std::string& message) {
  json err{{"error", {{"kind", kind}, {"message", message}}}};
  std::cerr << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Role-play self-alignment pipeline: character knowledge collection, "
               "dialogue simulation, SFT dataset emission, and LLM-as-judge evaluation"};
  app.require_subcommand(1);

  GlobalArgs global;
  app.add_option("--config", global.config_path, "Global JSON config file");
  app.add_option("--jobs", global.jobs, "Worker pool size (overrides config)");
  app.add_flag("--verbose", global.verbose, "Log per-item events to stderr");

  const std::string command = joined_command(argc, argv);

  // collect
  auto* collect = app.add_subcommand("collect", "Harvest characters from Wikidata/Wikipedia");
  std::string kind_str, lang_str, collect_out;
  std::uint64_t limit = 5000;
  bool merge = false;
  collect->add_option("--kind", kind_str, "human|fictional")->required();
  collect->add_option("--lang", lang_str, "en|zh")->required();
  collect->add_option("--limit", limit, "Max entities to list")->capture_default_str();
  collect->add_option("--out", collect_out, "Character store path")->required();
  collect->add_flag("--merge", merge, "Merge into an existing store at --out");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Self-simulate role-play dialogue sessions");
  std::string sim_store, sim_backend, sim_out;
  std::uint64_t sim_seed = 0;
  int turns_per_session = 6, query_rounds = 3, questions_per_pair = 3;
  bool no_knowledge = false, single_question = false;
  simulate->add_option("--store", sim_store, "Character store path")->required();
  simulate->add_option("--backend", sim_backend, "Backend profile name")->required();
  simulate->add_option("--seed", sim_seed, "Random seed")->capture_default_str();
  simulate->add_option("--turns-per-session", turns_per_session, "Exchange cap per session")
      ->capture_default_str();
  simulate->add_flag("--no-knowledge", no_knowledge,
                     "Ablation: simulate without injected knowledge");
  simulate->add_option("--query-rounds", query_rounds, "Query-simulation rounds per pair")
      ->capture_default_str();
  simulate->add_option("--questions-per-pair", questions_per_pair,
                       "Questions kept per pair")
      ->capture_default_str();
  simulate->add_flag("--single-question", single_question,
                     "Keep exactly one pooled question per pair");
  simulate->add_option("--out", sim_out, "Session file path")->required();

  // build-sft
  auto* build = app.add_subcommand("build-sft", "Emit the knowledge-concealed SFT corpus");
  std::string sft_sessions, sft_roles, sft_out_dir, sft_store;
  std::string preset = "steps-300";
  build->add_option("--sessions", sft_sessions, "Session file")->required();
  build->add_option("--test-roles", sft_roles, "Reserved test role ids, one per line")
      ->required();
  build->add_option("--out-dir", sft_out_dir, "Output directory")->required();
  build->add_option("--preset", preset, "Training preset: steps-300|epochs-5")
      ->capture_default_str();
  build->add_option("--store", sft_store,
                    "Character store (strengthens the concealment check)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Judge transcripts on the three metrics");
  std::string ev_sessions, ev_candidate, ev_transcripts, ev_judge, ev_out, ev_distractors,
      ev_annotations;
  int ev_rounds = 3;
  double ev_temp = 0.2;
  std::uint64_t ev_seed = 0;
  evaluate->add_option("--sessions", ev_sessions, "Test session file")->required();
  evaluate->add_option("--candidate-backend", ev_candidate,
                       "Backend that answers under the brief intro");
  evaluate->add_option("--transcripts", ev_transcripts, "Pre-generated transcript file");
  evaluate->add_option("--judge-backend", ev_judge, "Judge backend profile name")->required();
  evaluate->add_option("--rounds", ev_rounds, "Judge rounds per task")->capture_default_str();
  evaluate->add_option("--temp", ev_temp, "Judge temperature")->capture_default_str();
  evaluate->add_option("--seed", ev_seed, "Random seed")->capture_default_str();
  evaluate->add_option("--out", ev_out, "Output directory")->required();
  evaluate->add_option("--distractor-labels", ev_distractors,
                       "Extra consistency distractor labels, one per line");
  evaluate->add_option("--annotations", ev_annotations,
                       "Boundary annotations (CSV or JSON)");

  // crosssup
  auto* crosssup = app.add_subcommand("crosssup", "Cross-supervision matrix");
  crosssup->require_subcommand(1);
  auto* cs_run = crosssup->add_subcommand("run", "Measure supervision performance");
  std::string cs_test, cs_sup, cs_judge, cs_seed_model = "unpaired", cs_imitation,
                               cs_distractors, cs_annotations, cs_out;
  std::uint64_t cs_seed = 0;
  int cs_rounds = 3;
  double cs_temp = 0.2;
  bool cs_no_knowledge = false;
  cs_run->add_option("--test", cs_test, "Test session file")->required();
  cs_run->add_option("--supervision", cs_sup, "Supervision backend profile")->required();
  cs_run->add_option("--judge", cs_judge, "Judge backend profile")->required();
  cs_run->add_option("--seed", cs_seed, "Random seed")->capture_default_str();
  cs_run->add_option("--rounds", cs_rounds, "Judge rounds per task")->capture_default_str();
  cs_run->add_option("--temp", cs_temp, "Judge temperature")->capture_default_str();
  cs_run->add_flag("--no-knowledge", cs_no_knowledge,
                   "Use the identity-only recipe (ablation)");
  cs_run->add_option("--seed-model", cs_seed_model, "Trainee label for the matrix cell")
      ->capture_default_str();
  cs_run->add_option("--imitation-report", cs_imitation,
                     "Imported imitation report JSON to attach");
  cs_run->add_option("--distractor-labels", cs_distractors,
                     "Extra consistency distractor labels");
  cs_run->add_option("--annotations", cs_annotations, "Boundary annotations (CSV or JSON)");
  cs_run->add_option("--out", cs_out, "Output directory")->required();

  auto* cs_analyze = crosssup->add_subcommand("analyze", "Diagonal and trend analysis");
  std::string csa_cells, csa_out;
  cs_analyze->add_option("--cells", csa_cells, "Cell store (JSONL)")->required();
  cs_analyze->add_option("--out", csa_out, "Output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "Render stored reports as tables");
  std::string rp_eval, rp_stats;
  std::vector<std::string> rp_compare;
  report->add_option("--eval", rp_eval, "Evaluation report JSON");
  report->add_option("--compare", rp_compare, "Two report JSONs to diff")->expected(0, 2);
  report->add_option("--stats", rp_stats, "Dataset stats JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    if (collect->parsed())
      return run_collect(global, kind_str, lang_str, limit, collect_out, merge, command);
    if (simulate->parsed())
      return run_simulate(global, sim_store, sim_backend, sim_seed, turns_per_session,
                          no_knowledge, query_rounds, questions_per_pair, single_question,
                          sim_out, command);
    if (build->parsed())
      return run_build_sft(global, sft_sessions, sft_roles, sft_out_dir, preset, sft_store,
                           command);
    if (evaluate->parsed())
      return run_evaluate(global, ev_sessions, ev_candidate, ev_transcripts, ev_judge,
                          ev_rounds, ev_temp, ev_seed, ev_out, ev_distractors, ev_annotations,
                          command);
    if (crosssup->parsed()) {
      if (cs_run->parsed())
        return run_crosssup_run(global, cs_test, cs_sup, cs_judge, cs_seed, cs_rounds, cs_temp,
                                cs_no_knowledge, cs_seed_model, cs_imitation, cs_distractors,
                                cs_annotations, cs_out, command);
      if (cs_analyze->parsed()) return run_crosssup_analyze(global, csa_cells, csa_out, command);
    }
    if (report->parsed()) return run_report(rp_eval, rp_compare, rp_stats);
    print_error("usage", "no subcommand given");
    return 2;
  } catch (const ConfigError& e) {
    print_error(e.kind(), e.what());
    return 3;
  } catch (const DittoError& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
}
