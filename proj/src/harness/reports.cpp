#include <cstdio>
#include <fstream>
#include <sstream>

#include "noisyood/error.hpp"
#include "noisyood/harness.hpp"

namespace noisyood::bench {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kFormatVersion = 1;

std::string base_dataset(const std::string& label) { return label.substr(0, label.find('@')); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        current += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(current);
  return fields;
}

std::string optional_number(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::string key_prefix(const CellKey& k) {
  return csv_field(k.dataset) + "," + k.noise_model + "," + format_number(k.noise_rate) + "," + std::to_string(k.seed) +
         "," + k.checkpoint + "," + k.label_source + "," + k.detector;
}

void write_text(const fs::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << content;
  if (!out) throw IoError("write failed for " + file.string());
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string markdown_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out = "|";
  for (const auto& h : header) out += " " + h + " |";
  out += "\n|";
  for (std::size_t i = 0; i < header.size(); ++i) out += " --- |";
  out += "\n";
  for (const auto& r : rows) {
    out += "|";
    for (const auto& c : r) out += " " + (c.empty() ? std::string("-") : c) + " |";
    out += "\n";
  }
  return out;
}

CellKey parse_key(const std::vector<std::string>& f) {
  CellKey k;
  k.dataset = f[0];
  k.noise_model = f[1];
  k.noise_rate = std::stod(f[2]);
  k.seed = std::stoull(f[3]);
  k.checkpoint = f[4];
  k.label_source = f[5];
  k.detector = f[6];
  return k;
}

}  // namespace

std::string format_number(double value) {
  if (value == 0.0) return "0";
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.12g", value);
  return buffer;
}

std::vector<MedianRow> median_table(const EvalReport& report) {
  std::vector<MedianRow> out;
  std::size_t i = 0;
  while (i < report.rows.size()) {
    std::size_t j = i;
    std::vector<double> id, correct, incorrect;
    while (j < report.rows.size() && report.rows[j].key == report.rows[i].key) {
      const auto& r = report.rows[j];
      id.push_back(r.auroc.id_vs_ood);
      if (r.auroc.has_correct()) correct.push_back(r.auroc.correct_vs_ood);
      if (r.auroc.incorrect_vs_ood) incorrect.push_back(*r.auroc.incorrect_vs_ood);
      ++j;
    }
    MedianRow m;
    m.key = report.rows[i].key;
    m.auroc_id = metrics::median(id);
    if (!correct.empty()) m.auroc_correct = metrics::median(correct);
    if (!incorrect.empty()) m.auroc_incorrect = metrics::median(incorrect);
    m.id_accuracy = report.rows[i].id_accuracy;
    m.n_ood_sets = id.size();
    out.push_back(std::move(m));
    i = j;
  }
  return out;
}

std::vector<BestCaseRow> best_case_table(const EvalReport& report) {
  std::map<std::tuple<std::string, std::string, double, std::string, std::string>, BestCaseRow> best;
  for (const auto& m : median_table(report)) {
    const auto group = std::make_tuple(base_dataset(m.key.dataset), m.key.noise_model, m.key.noise_rate,
                                       m.key.label_source, m.key.detector);
    auto it = best.find(group);
    if (it != best.end() && it->second.auroc_id >= m.auroc_id) continue;
    BestCaseRow b;
    b.dataset = std::get<0>(group);
    b.noise_model = m.key.noise_model;
    b.noise_rate = m.key.noise_rate;
    b.label_source = m.key.label_source;
    b.detector = m.key.detector;
    b.auroc_id = m.auroc_id;
    b.best_dataset = m.key.dataset;
    b.best_seed = m.key.seed;
    b.best_checkpoint = m.key.checkpoint;
    best[group] = b;
  }
  std::vector<BestCaseRow> out;
  for (auto& [group, row] : best) out.push_back(std::move(row));
  return out;
}

std::vector<CorrelationRow> correlation_table(const EvalReport& report) {
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& m : median_table(report)) {
    auto& [acc, auc] = groups[{m.key.detector, m.key.noise_model, m.key.label_source}];
    acc.push_back(m.id_accuracy);
    auc.push_back(m.auroc_id);
  }
  std::vector<CorrelationRow> out;
  for (const auto& [group, values] : groups) {
    CorrelationRow r;
    std::tie(r.detector, r.noise_model, r.label_source) = group;
    r.n = values.first.size();
    if (r.n < 3) {
      r.reason = "fewer than 3 rows";
    } else {
      r.rho = metrics::spearman(values.first, values.second);
      if (!r.rho) r.reason = "constant accuracy or AUROC";
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<AsoRow> aso_table(const EvalReport& report, const std::vector<AsoComparison>& comparisons,
                              const metrics::AsoOptions& options) {
  using Group = std::tuple<std::string, std::string, double, std::string>;
  std::map<Group, std::map<std::string, std::vector<double>>> samples;
  for (const auto& m : median_table(report)) {
    samples[{base_dataset(m.key.dataset), m.key.noise_model, m.key.noise_rate, m.key.label_source}][m.key.detector]
        .push_back(m.auroc_id);
  }
  std::vector<AsoRow> out;
  for (const auto& [group, by_detector] : samples) {
    for (const auto& c : comparisons) {
      AsoRow r;
      std::tie(r.dataset, r.noise_model, r.noise_rate, r.label_source) = group;
      r.a = c.a;
      r.b = c.b;
      const auto a = by_detector.find(c.a);
      const auto b = by_detector.find(c.b);
      r.n_a = a == by_detector.end() ? 0 : a->second.size();
      r.n_b = b == by_detector.end() ? 0 : b->second.size();
      if (r.n_a < 5 || r.n_b < 5) {
        r.reason = "fewer than 5 cells per side";
      } else {
        r.result = metrics::aso(a->second, b->second, options);
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string rows_csv(const EvalReport& report) {
  std::string out = std::string(kRowsHeader) + "\n";
  for (const auto& r : report.rows) {
    out += key_prefix(r.key) + "," + csv_field(r.ood_set) + "," + format_number(r.auroc.id_vs_ood) + "," +
           (r.auroc.has_correct() ? format_number(r.auroc.correct_vs_ood) : std::string()) + "," +
           optional_number(r.auroc.incorrect_vs_ood) + "," + std::to_string(r.auroc.n_correct) + "," +
           std::to_string(r.auroc.n_incorrect) + "," + std::to_string(r.auroc.n_ood) + "," +
           format_number(r.id_accuracy) + "\n";
  }
  return out;
}

std::string failures_csv(const EvalReport& report) {
  std::string out = "dataset,noise_model,noise_rate,seed,checkpoint,label_source,detector,error\n";
  for (const auto& f : report.failures) out += key_prefix(f.key) + "," + csv_field(f.error) + "\n";
  return out;
}

void emit_reports(const EvalReport& report, const RunMatrixConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text(out_dir / "rows.csv", rows_csv(report));
  write_text(out_dir / "failures.csv", failures_csv(report));

  const auto medians = median_table(report);
  std::string medians_csv =
      "dataset,noise_model,noise_rate,seed,checkpoint,label_source,detector,auroc_id,auroc_correct,auroc_incorrect,"
      "id_accuracy,n_ood_sets\n";
  std::vector<std::vector<std::string>> median_md;
  for (const auto& m : medians) {
    medians_csv += key_prefix(m.key) + "," + format_number(m.auroc_id) + "," + optional_number(m.auroc_correct) + "," +
                   optional_number(m.auroc_incorrect) + "," + format_number(m.id_accuracy) + "," +
                   std::to_string(m.n_ood_sets) + "\n";
    median_md.push_back({m.key.dataset, m.key.noise_model, format_number(m.key.noise_rate), std::to_string(m.key.seed),
                         m.key.checkpoint, m.key.label_source, m.key.detector, format_number(m.auroc_id),
                         optional_number(m.auroc_correct), optional_number(m.auroc_incorrect),
                         format_number(m.id_accuracy)});
  }
  write_text(out_dir / "medians.csv", medians_csv);

  std::string best_csv = "dataset,noise_model,noise_rate,label_source,detector,auroc_id,best_dataset,best_seed,best_checkpoint\n";
  std::vector<std::vector<std::string>> best_md;
  for (const auto& b : best_case_table(report)) {
    best_csv += csv_field(b.dataset) + "," + b.noise_model + "," + format_number(b.noise_rate) + "," + b.label_source +
                "," + b.detector + "," + format_number(b.auroc_id) + "," + csv_field(b.best_dataset) + "," +
                std::to_string(b.best_seed) + "," + b.best_checkpoint + "\n";
    best_md.push_back({b.dataset, b.noise_model, format_number(b.noise_rate), b.label_source, b.detector,
                       format_number(b.auroc_id), b.best_dataset, std::to_string(b.best_seed), b.best_checkpoint});
  }
  write_text(out_dir / "best_case.csv", best_csv);

  std::string corr_csv = "detector,noise_model,label_source,n,spearman,reason\n";
  std::vector<std::vector<std::string>> corr_md;
  for (const auto& c : correlation_table(report)) {
    corr_csv += c.detector + "," + c.noise_model + "," + c.label_source + "," + std::to_string(c.n) + "," +
                optional_number(c.rho) + "," + csv_field(c.reason) + "\n";
    corr_md.push_back({c.detector, c.noise_model, c.label_source, std::to_string(c.n), optional_number(c.rho), c.reason});
  }
  write_text(out_dir / "correlation.csv", corr_csv);

  std::string aso_csv = "dataset,noise_model,noise_rate,label_source,a,b,n_a,n_b,eps_min,violation_ratio,reason\n";
  std::vector<std::vector<std::string>> aso_md;
  for (const auto& a : report.aso) {
    const std::string eps = a.result ? format_number(a.result->eps_min) : std::string();
    const std::string vr = a.result ? format_number(a.result->violation_ratio) : std::string();
    aso_csv += csv_field(a.dataset) + "," + a.noise_model + "," + format_number(a.noise_rate) + "," + a.label_source +
               "," + a.a + "," + a.b + "," + std::to_string(a.n_a) + "," + std::to_string(a.n_b) + "," + eps + "," + vr +
               "," + csv_field(a.reason) + "\n";
    aso_md.push_back({a.dataset, a.noise_model, format_number(a.noise_rate), a.label_source, a.a, a.b, eps, vr, a.reason});
  }
  write_text(out_dir / "aso.csv", aso_csv);

  std::vector<std::vector<std::string>> failure_md;
  for (const auto& f : report.failures) failure_md.push_back({f.key.id(), f.error});

  std::string md = "# Benchmark report\n\n";
  md += std::to_string(report.planned_cells) + " planned cells, " + std::to_string(medians.size()) + " evaluated, " +
        std::to_string(report.failures.size()) + " failed.\n\n";
  md += "## Best case (max median AUROC over architecture, seed and checkpoint)\n\n";
  md += markdown_table({"dataset", "noise", "rate", "labels", "detector", "AUROC", "from", "seed", "checkpoint"}, best_md);
  md += "\n## Spearman correlation of ID accuracy and median AUROC\n\n";
  md += markdown_table({"detector", "noise", "labels", "n", "rho", "note"}, corr_md);
  md += "\n## Almost stochastic order (A better than B when eps_min < 0.5)\n\n";
  md += markdown_table({"dataset", "noise", "rate", "labels", "A", "B", "eps_min", "violation ratio", "note"}, aso_md);
  md += "\n## Failures\n\n";
  md += failure_md.empty() ? std::string("none\n") : markdown_table({"cell", "error"}, failure_md);
  md += "\n## Median over OOD sets\n\n";
  md += markdown_table({"dataset", "noise", "rate", "seed", "checkpoint", "labels", "detector", "AUROC", "correct",
                        "incorrect", "accuracy"},
                       median_md);
  write_text(out_dir / "report.md", md);

  write_text(out_dir / "config.json", config.to_json().dump(2) + "\n");

  std::size_t checked = 0;
  for (const auto& [id, crc] : report.score_crc) {
    const auto pos = id.find("__TRAIN__");
    if (pos == std::string::npos || detect::is_class_statistic_method(id.substr(pos + 9))) continue;
    std::string other = id;
    other.replace(pos, 9, "__VAL__");
    if (report.score_crc.count(other)) ++checked;
  }
  json meta = {{"format_version", kFormatVersion},
               {"tool", "noisyood"},
               {"planned_cells", report.planned_cells},
               {"evaluated_cells", medians.size()},
               {"failed_cells", report.failures.size()},
               {"result_rows", report.rows.size()},
               {"rows_columns", kRowsHeader},
               {"label_source_check", {{"compared_cells", checked}, {"violations", report.label_source_violations()}}}};
  write_text(out_dir / "metadata.json", meta.dump(2) + "\n");
}

EvalReport read_report(const fs::path& dir) {
  EvalReport report;
  std::istringstream rows(read_text(dir / "rows.csv"));
  std::string line;
  std::getline(rows, line);
  if (line != kRowsHeader) throw ValidationError(dir.string() + "/rows.csv has an unexpected header");
  while (std::getline(rows, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 15) throw ValidationError("rows.csv line has " + std::to_string(f.size()) + " fields: " + line);
    ResultRow r;
    r.key = parse_key(f);
    r.ood_set = f[7];
    r.auroc.id_vs_ood = std::stod(f[8]);
    if (!f[9].empty()) r.auroc.correct_vs_ood = std::stod(f[9]);
    if (!f[10].empty()) r.auroc.incorrect_vs_ood = std::stod(f[10]);
    r.auroc.n_correct = std::stoull(f[11]);
    r.auroc.n_incorrect = std::stoull(f[12]);
    r.auroc.n_ood = std::stoull(f[13]);
    r.id_accuracy = std::stod(f[14]);
    report.rows.push_back(std::move(r));
  }
  if (fs::exists(dir / "failures.csv")) {
    std::istringstream failures(read_text(dir / "failures.csv"));
    std::getline(failures, line);
    while (std::getline(failures, line)) {
      if (line.empty()) continue;
      const auto f = split_csv_line(line);
      if (f.size() != 8) throw ValidationError("failures.csv line has " + std::to_string(f.size()) + " fields");
      report.failures.push_back({parse_key(f), f[7]});
    }
  }
  std::size_t cells = report.failures.size();
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    if (i == 0 || !(report.rows[i].key == report.rows[i - 1].key)) ++cells;
  }
  report.planned_cells = cells;
  return report;
}

}  // namespace noisyood::bench
