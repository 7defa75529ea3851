#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ditto/eval.hpp"

namespace ditto {

inline constexpr const char* kCellSchema = "crosssup-cells/1";
inline constexpr const char* kPlotCsvHeader = "supervision,seed,metric,sup_score,imit_score";

// One supervision-model / seed-model pairing. Supervision performance is
// computed here; imitation performance (the fine-tuned seed model's score)
// is imported from an external training run and validated for comparability.
struct MatrixCell {
  std::string supervision_model;
  std::string seed_model;
  EvalReport supervision_perf;
  std::optional<EvalReport> imitation_perf;
  std::string dataset_hash;

  void validate() const {
    if (supervision_model.empty()) throw PreconditionError("cell without a supervision model");
    if (seed_model.empty()) throw PreconditionError("cell without a seed model");
    if (supervision_perf.recipe != "knowledge-augmented" &&
        supervision_perf.recipe != "identity-only")
      throw PreconditionError("cell " + supervision_model + "/" + seed_model +
                              ": supervision report has recipe '" + supervision_perf.recipe +
                              "', expected a knowledge recipe");
    if (imitation_perf) {
      if (imitation_perf->recipe != "brief-intro")
        throw PreconditionError("cell " + supervision_model + "/" + seed_model +
                                ": imitation report has recipe '" + imitation_perf->recipe +
                                "', expected brief-intro");
      if (!imitation_perf->judge_config_hash.empty() &&
          !supervision_perf.judge_config_hash.empty() &&
          imitation_perf->judge_config_hash != supervision_perf.judge_config_hash)
        throw PreconditionError("cell " + supervision_model + "/" + seed_model +
                                ": judge config hashes differ; scores are not comparable");
    }
  }

  json to_json() const {
    json j{{"supervision_model", supervision_model},
           {"seed_model", seed_model},
           {"supervision_perf", supervision_perf.to_json()},
           {"dataset_hash", dataset_hash}};
    if (imitation_perf) j["imitation_perf"] = imitation_perf->to_json();
    return j;
  }

  static MatrixCell from_json(const json& j) {
    MatrixCell c;
    c.supervision_model = j.at("supervision_model").get<std::string>();
    c.seed_model = j.at("seed_model").get<std::string>();
    c.supervision_perf = EvalReport::from_json(j.at("supervision_perf"));
    if (j.contains("imitation_perf"))
      c.imitation_perf = EvalReport::from_json(j["imitation_perf"]);
    c.dataset_hash = j.value("dataset_hash", "");
    c.validate();
    return c;
  }
};

inline void save_cells(const std::filesystem::path& path, const std::vector<MatrixCell>& cells) {
  std::vector<json> records;
  records.reserve(cells.size());
  for (const auto& c : cells) records.push_back(c.to_json());
  write_jsonl(path, kCellSchema, records);
}

inline std::vector<MatrixCell> load_cells(const std::filesystem::path& path) {
  auto file = read_jsonl(path, kCellSchema);
  std::vector<MatrixCell> out;
  std::size_t line_no = 1;
  for (const auto& rec : file.records) {
    ++line_no;
    try {
      out.push_back(MatrixCell::from_json(rec));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline void attach_imitation(MatrixCell& cell, EvalReport report) {
  cell.imitation_perf = std::move(report);
  cell.validate();
}

// Supervision performance: the supervision backend re-answers the test-set
// queries under the full knowledge-augmented prompt (or the identity-only
// ablation), then the standard judging pipeline scores the result.
inline EvalRun supervision_performance(const std::vector<DialogueSession>& test_sessions,
                                       ChatBackend& supervision_backend,
                                       const JudgeTemplates& judge_templates,
                                       ChatBackend& judge_backend,
                                       const std::vector<std::string>& extra_distractors,
                                       const BoundaryAnnotations& annotations,
                                       const JudgeOptions& opts,
                                       bool with_knowledge) {
  for (const auto& s : test_sessions)
    if (trim(s.golden_knowledge).empty())
      throw PreconditionError("session " + s.session_id() + " carries no golden knowledge");
  const std::string recipe = with_knowledge ? "knowledge-augmented" : "identity-only";
  std::vector<SimEvent> events;
  auto transcripts =
      generate_transcripts(test_sessions, supervision_backend, recipe, opts.jobs, events);
  EvalRun run = judge_transcripts(test_sessions, std::move(transcripts), judge_templates,
                                  judge_backend, extra_distractors, annotations, opts, recipe);
  run.events.insert(run.events.begin(), events.begin(), events.end());
  return run;
}

// ---------------------------------------------------------------------------
// Matrix analysis
// ---------------------------------------------------------------------------

struct MatrixPoint {
  std::string supervision;
  std::string seed;
  double sup_score = 0;
  double imit_score = 0;
};

struct TrendLine {
  double slope = 0;
  double intercept = 0;
  std::size_t n = 0;
};

struct MetricAnalysis {
  std::vector<MatrixPoint> points;  // sorted by (supervision, seed)
  std::size_t above = 0;            // imitation beats supervision
  std::size_t below = 0;
  std::size_t on = 0;
  std::size_t excluded = 0;  // cells lacking the metric or the imitation side
  std::map<std::string, TrendLine> trends;  // per seed model, >= 2 points
};

struct MatrixAnalysis {
  std::map<std::string, MetricAnalysis> metrics;  // keyed cons/know/rej
  std::size_t cells = 0;

  json to_json() const {
    json metrics_json = json::object();
    for (const auto& [name, m] : metrics) {
      json points = json::array();
      for (const auto& p : m.points)
        points.push_back(json{{"supervision", p.supervision},
                              {"seed", p.seed},
                              {"sup_score", p.sup_score},
                              {"imit_score", p.imit_score}});
      json trends = json::object();
      for (const auto& [seed, t] : m.trends)
        trends[seed] = json{{"slope", t.slope}, {"intercept", t.intercept}, {"n", t.n}};
      metrics_json[name] = json{{"points", points},   {"above", m.above},
                                {"below", m.below},   {"on", m.on},
                                {"excluded", m.excluded}, {"trends", trends}};
    }
    return json{{"metrics", metrics_json}, {"cells", cells}};
  }
};

namespace detail {

inline const MetricAggregate& metric_by_name(const MetricTriple& t, const std::string& name) {
  if (name == "cons") return t.cons;
  if (name == "know") return t.know;
  return t.rej;
}

// Ordinary least squares over (sup, imit); degenerate x-spread -> no line.
inline std::optional<TrendLine> fit_trend(const std::vector<MatrixPoint>& points) {
  if (points.size() < 2) return std::nullopt;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(points.size());
  for (const auto& p : points) {
    sx += p.sup_score;
    sy += p.imit_score;
    sxx += p.sup_score * p.sup_score;
    sxy += p.sup_score * p.imit_score;
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0) return std::nullopt;
  TrendLine t;
  t.slope = (n * sxy - sx * sy) / denom;
  t.intercept = (sy - t.slope * sx) / n;
  t.n = points.size();
  return t;
}

}  // namespace detail

// Per-metric scatter of (supervision score, imitation score) with diagonal
// classification and a per-seed-model least-squares trend (the weak-to-strong
// readout: how imitation tracks supervision quality for a fixed trainee).
inline MatrixAnalysis build_matrix(std::vector<MatrixCell> cells) {
  std::sort(cells.begin(), cells.end(), [](const MatrixCell& a, const MatrixCell& b) {
    if (a.supervision_model != b.supervision_model)
      return a.supervision_model < b.supervision_model;
    return a.seed_model < b.seed_model;
  });
  MatrixAnalysis analysis;
  analysis.cells = cells.size();
  for (const std::string name : {"cons", "know", "rej"}) {
    MetricAnalysis m;
    for (const auto& cell : cells) {
      const MetricAggregate& sup = detail::metric_by_name(cell.supervision_perf.all, name);
      const MetricAggregate* imit =
          cell.imitation_perf
              ? &detail::metric_by_name(cell.imitation_perf->all, name)
              : nullptr;
      if (!sup.present || !imit || !imit->present) {
        ++m.excluded;
        continue;
      }
      MatrixPoint p{cell.supervision_model, cell.seed_model, sup.value, imit->value};
      if (p.imit_score > p.sup_score) ++m.above;
      else if (p.imit_score < p.sup_score) ++m.below;
      else ++m.on;
      m.points.push_back(std::move(p));
    }
    std::map<std::string, std::vector<MatrixPoint>> by_seed;
    for (const auto& p : m.points) by_seed[p.seed].push_back(p);
    for (const auto& [seed, points] : by_seed)
      if (auto t = detail::fit_trend(points)) m.trends[seed] = *t;
    analysis.metrics[name] = std::move(m);
  }
  return analysis;
}

inline std::string format_csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// Plot data, one row per (metric, point).
inline std::string render_plot_csv(const MatrixAnalysis& analysis) {
  std::string out = std::string(kPlotCsvHeader) + "\n";
  for (const auto& [name, m] : analysis.metrics) {
    for (const auto& p : m.points) {
      out += p.supervision + "," + p.seed + "," + name + "," + format_csv_number(p.sup_score) +
             "," + format_csv_number(p.imit_score) + "\n";
    }
  }
  return out;
}

}  // namespace ditto
