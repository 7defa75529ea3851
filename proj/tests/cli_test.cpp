#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "ditto/ditto.hpp"
#include "test_paths.hpp"

using namespace ditto;

namespace {

namespace fs = std::filesystem;

fs::path ditto_bin() {
  const char* env = std::getenv("DITTO_BIN_DIR");
  return fs::path(env && *env ? env : kBinDir) / "ditto";
}

const fs::path kFixtures(kFixturesDir);
const std::string kConfig = (kFixtures / "e2e" / "config.json").string();

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
  fs::create_directories(scratch);
  const fs::path out_file = scratch / "stdout.txt";
  const fs::path err_file = scratch / "stderr.txt";
  const std::string cmd = ditto_bin().string() + " " + args + " >" + out_file.string() +
                          " 2>" + err_file.string();
  int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = fs::exists(out_file) ? read_file(out_file) : "";
  r.err = fs::exists(err_file) ? read_file(err_file) : "";
  return r;
}

json read_json(const fs::path& path) { return json::parse(read_file(path)); }

}  // namespace

TEST_CASE("the binary self-documents and flags bad usage") {
  fs::path tmp = fs::temp_directory_path() / "ditto_cli_usage";
  fs::remove_all(tmp);

  CliResult help = run_cli("--help", tmp);
  CHECK(help.code == 0);
  CHECK(help.out.find("collect") != std::string::npos);
  CHECK(help.out.find("evaluate") != std::string::npos);
  CHECK(help.out.find("crosssup") != std::string::npos);

  CliResult bare = run_cli("", tmp);
  CHECK(bare.code == 2);
  CHECK(bare.err.find("\"kind\":\"usage\"") != std::string::npos);

  CliResult unknown = run_cli("collect --nonsense", tmp);
  CHECK(unknown.code == 2);

  fs::remove_all(tmp);
}

TEST_CASE("io and configuration failures use distinct exit codes") {
  fs::path tmp = fs::temp_directory_path() / "ditto_cli_errors";
  fs::remove_all(tmp);

  CliResult missing = run_cli("--config /nonexistent/ditto.json simulate --store s "
                              "--backend sim --out " + (tmp / "o.jsonl").string(),
                              tmp);
  CHECK(missing.code == 3);
  CHECK(missing.err.find("\"kind\":\"config\"") != std::string::npos);

  CliResult no_sessions = run_cli(
      "--config " + kConfig + " evaluate --sessions /nonexistent/sessions.jsonl "
      "--judge-backend judge --out " + (tmp / "eval").string(),
      tmp);
  CHECK(no_sessions.code == 1);
  CHECK(no_sessions.err.find("\"kind\":\"io\"") != std::string::npos);

  CliResult badback = run_cli(
      "--config " + kConfig + " evaluate --sessions " +
          (kFixtures / "e2e" / "sessions.jsonl").string() +
          " --judge-backend nope --out " + (tmp / "eval").string(),
      tmp);
  CHECK(badback.code == 3);
  CHECK(badback.err.find("\"kind\":\"config\"") != std::string::npos);
  CHECK(badback.err.find("nope") != std::string::npos);

  fs::remove_all(tmp);
}

TEST_CASE("the recorded pipeline replays end to end through the cli") {
  fs::path tmp = fs::temp_directory_path() / "ditto_cli_e2e";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  const std::string store = (tmp / "store.jsonl").string();
  const std::string sessions = (tmp / "sessions.jsonl").string();
  const std::string distractors = (kFixtures / "e2e" / "distractors.txt").string();
  const std::string test_roles = (kFixtures / "e2e" / "test-roles.txt").string();

  // --- collect: four kind/language passes merged into one store -------------
  struct Pass { const char* kind; const char* lang; };
  bool first = true;
  for (Pass p : {Pass{"human", "en"}, Pass{"fictional", "en"}, Pass{"human", "zh"},
                 Pass{"fictional", "zh"}}) {
    CliResult r = run_cli("--config " + kConfig + " collect --kind " + p.kind + " --lang " +
                              p.lang + " --limit 5 --out " + store +
                              (first ? "" : " --merge"),
                          tmp);
    REQUIRE(r.code == 0);
    first = false;
  }
  CharacterStore loaded = load_store(store);
  CHECK(loaded.size() == 4);
  CHECK(loaded.find("Q100000001", Language::en) != nullptr);
  CHECK(loaded.find("Q100000003", Language::en) != nullptr);
  CHECK(loaded.find("Q100000011", Language::zh) != nullptr);
  CHECK(loaded.find("Q100000012", Language::zh) != nullptr);
  CHECK(loaded.provenance().snapshot.rfind("2024-01-15T08:30:", 0) == 0);
  CHECK(fs::exists(store + ".manifest.json"));

  // --- simulate: byte-identical to the checked-in session fixture -----------
  CliResult sim = run_cli("--config " + kConfig + " simulate --store " + store +
                              " --backend sim --seed 42 --out " + sessions,
                          tmp);
  REQUIRE(sim.code == 0);
  CHECK(sim.out.find("simulated 4 sessions") != std::string::npos);
  CHECK(read_file(sessions) == read_file(kFixtures / "e2e" / "sessions.jsonl"));
  json sim_manifest = read_json(sessions + ".manifest.json");
  CHECK(sim_manifest.at("counters").at("sessions") == 4);
  CHECK(sim_manifest.at("seed") == 42);

  // A second simulate run replays to the same bytes.
  CliResult sim2 = run_cli("--config " + kConfig + " simulate --store " + store +
                               " --backend sim --seed 42 --out " + (tmp / "sessions2.jsonl").string(),
                           tmp);
  REQUIRE(sim2.code == 0);
  CHECK(read_file(tmp / "sessions2.jsonl") == read_file(sessions));

  // --- build-sft -------------------------------------------------------------
  const fs::path sft = tmp / "sft";
  CliResult built = run_cli("build-sft --sessions " + sessions + " --test-roles " + test_roles +
                                " --out-dir " + sft.string() + " --store " + store,
                            tmp);
  REQUIRE(built.code == 0);
  CHECK(built.out.find("emitted 2 train / 2 test records") != std::string::npos);
  CHECK(load_sft(sft / "train.jsonl").size() == 2);
  CHECK(load_sft(sft / "test.jsonl").size() == 2);
  json stats = read_json(sft / "stats.json");
  CHECK(stats.at("train").at("all").at("sessions") == 2);
  CHECK(stats.at("test").at("all").at("turns_exchange") == 12);
  CHECK(read_json(sft / "training_config.json").at("selected") == "appendix-c");
  CHECK(fs::exists(sft / "manifest.json"));

  // --- evaluate: candidate answers under the brief intro, judge replays ------
  const fs::path eval_dir = tmp / "eval";
  CliResult ev = run_cli("--config " + kConfig + " evaluate --sessions " + sessions +
                             " --candidate-backend candidate --judge-backend judge --seed 42 "
                             "--distractor-labels " + distractors + " --out " + eval_dir.string(),
                         tmp);
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("WikiRoleEval (brief-intro)") != std::string::npos);
  json report = read_json(eval_dir / "report.json");
  CHECK(report.at("recipe") == "brief-intro");
  CHECK(report.at("sessions") == 4);
  CHECK(report.at("all").at("cons").at("value").get<double>() == Catch::Approx(1.0));
  CHECK(report.at("all").at("know").at("value").get<double>() == Catch::Approx(8.0));
  CHECK(report.at("all").at("rej").at("value").get<double>() == Catch::Approx(11.0 / 12.0));
  CHECK(report.at("languages").at("en").at("rej").at("value").get<double>() ==
        Catch::Approx(5.0 / 6.0));
  CHECK(read_json(eval_dir / "manifest.json").at("counters").at("verdicts") == 20);

  // Feeding the produced transcripts back reproduces the verdicts bit-exactly.
  const fs::path eval2 = tmp / "eval2";
  CliResult ev2 = run_cli("--config " + kConfig + " evaluate --sessions " + sessions +
                              " --transcripts " + (eval_dir / "transcripts.jsonl").string() +
                              " --judge-backend judge --seed 42 --distractor-labels " +
                              distractors + " --out " + eval2.string(),
                          tmp);
  REQUIRE(ev2.code == 0);
  CHECK(read_file(eval2 / "report.json") == read_file(eval_dir / "report.json"));
  CHECK(read_file(eval2 / "verdicts.jsonl") == read_file(eval_dir / "verdicts.jsonl"));
  CHECK(read_file(eval2 / "transcripts.jsonl") == read_file(eval_dir / "transcripts.jsonl"));

  // Boundary annotations swap which turns get rejection-judged.
  const fs::path eval_ann = tmp / "eval_ann";
  CliResult ann = run_cli("--config " + kConfig + " evaluate --sessions " + sessions +
                              " --transcripts " + (eval_dir / "transcripts.jsonl").string() +
                              " --judge-backend judge --seed 42 --distractor-labels " +
                              distractors + " --annotations " +
                              (kFixtures / "e2e" / "annotations.csv").string() + " --out " +
                              eval_ann.string(),
                          tmp);
  REQUIRE(ann.code == 0);
  std::string ann_verdicts = read_file(eval_ann / "verdicts.jsonl");
  CHECK(ann_verdicts.find("rejection/en/Q100000001/turn0") != std::string::npos);
  CHECK(ann_verdicts.find("rejection/en/Q100000001/turn3") == std::string::npos);

  // --- crosssup: with vs without knowledge, then the matrix ------------------
  const fs::path cs_with = tmp / "cs_with";
  CliResult cw = run_cli("--config " + kConfig + " crosssup run --test " + sessions +
                             " --supervision supervision --judge judge --seed 42 "
                             "--distractor-labels " + distractors + " --out " + cs_with.string(),
                         tmp);
  REQUIRE(cw.code == 0);
  json with_report = read_json(cs_with / "report.json");
  CHECK(with_report.at("recipe") == "knowledge-augmented");
  CHECK(with_report.at("all").at("know").at("value").get<double>() == Catch::Approx(8.0));

  const fs::path cs_without = tmp / "cs_without";
  CliResult co = run_cli("--config " + kConfig + " crosssup run --test " + sessions +
                             " --supervision supervision --judge judge --seed 42 --no-knowledge "
                             "--distractor-labels " + distractors + " --out " +
                             cs_without.string(),
                         tmp);
  REQUIRE(co.code == 0);
  json without_report = read_json(cs_without / "report.json");
  CHECK(without_report.at("recipe") == "identity-only");
  CHECK(without_report.at("all").at("know").at("value").get<double>() == Catch::Approx(4.0));

  auto cells = load_cells(cs_with / "cells.jsonl");
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].supervision_model == "supervision");
  CHECK(cells[0].seed_model == "unpaired");
  CHECK(cells[0].dataset_hash == sha256_file(sessions));
  CHECK_FALSE(cells[0].imitation_perf.has_value());

  // Attaching the imitation report completes a cell for analysis.
  const fs::path cs_imit = tmp / "cs_imit";
  CliResult ci = run_cli("--config " + kConfig + " crosssup run --test " + sessions +
                             " --supervision supervision --judge judge --seed 42 "
                             "--seed-model cand-7b --imitation-report " +
                             (eval_dir / "report.json").string() + " --distractor-labels " +
                             distractors + " --out " + cs_imit.string(),
                         tmp);
  REQUIRE(ci.code == 0);
  auto imit_cells = load_cells(cs_imit / "cells.jsonl");
  REQUIRE(imit_cells.size() == 1);
  CHECK(imit_cells[0].seed_model == "cand-7b");
  REQUIRE(imit_cells[0].imitation_perf.has_value());
  CHECK(imit_cells[0].imitation_perf->recipe == "brief-intro");

  const fs::path analysis_dir = tmp / "analysis";
  CliResult an = run_cli("crosssup analyze --cells " + (cs_imit / "cells.jsonl").string() +
                             " --out " + analysis_dir.string(),
                         tmp);
  REQUIRE(an.code == 0);
  json analysis = read_json(analysis_dir / "analysis.json");
  CHECK(analysis.at("cells") == 1);
  CHECK(analysis.at("metrics").at("cons").at("points").size() == 1);
  CHECK(analysis.at("metrics").at("know").at("points")[0].at("sup_score").get<double>() ==
        Catch::Approx(8.0));
  CHECK(analysis.at("metrics").at("know").at("points")[0].at("imit_score").get<double>() ==
        Catch::Approx(8.0));
  std::string plot = read_file(analysis_dir / "plot.csv");
  CHECK(plot.rfind("supervision,seed,metric,sup_score,imit_score\n", 0) == 0);
  CHECK(std::count(plot.begin(), plot.end(), '\n') == 4);

  // --- report rendering ------------------------------------------------------
  CliResult rp = run_cli("report --eval " + (eval_dir / "report.json").string(), tmp);
  REQUIRE(rp.code == 0);
  CHECK(rp.out.find("WikiRoleEval") != std::string::npos);
  CHECK(rp.out.find("All") != std::string::npos);
  CHECK(rp.out.find("8.00") != std::string::npos);

  CliResult cmp = run_cli("report --compare " + (cs_with / "report.json").string() + " " +
                              (cs_without / "report.json").string(),
                          tmp);
  REQUIRE(cmp.code == 0);
  CHECK(cmp.out.find("know") != std::string::npos);
  CHECK(cmp.out.find("4.00") != std::string::npos);  // knowledge delta: 8 - 4

  CliResult st = run_cli("report --stats " + (sft / "stats.json").string(), tmp);
  REQUIRE(st.code == 0);
  CHECK(st.out.find("turns_exchange") != std::string::npos);

  CliResult one_sided = run_cli("report --compare " + (cs_with / "report.json").string(), tmp);
  CHECK(one_sided.code == 1);  // --compare takes exactly two

  fs::remove_all(tmp);
}
