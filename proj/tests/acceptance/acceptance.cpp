#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "noisyood/classifier.hpp"
#include "noisyood/detectors.hpp"
#include "noisyood/harness.hpp"
#include "noisyood/metrics.hpp"
#include "noisyood/noise.hpp"
#include "noisyood/synth.hpp"

using namespace noisyood;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " (" << o.detail << ")"
            << std::endl;
  if (!o.pass) ++g_failures;
}

template <typename F>
void check(int id, const std::string& title, F&& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  report(id, title, o);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

std::string sci(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.2e", v);
  return buffer;
}

double pairwise_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  long long twice = 0;
  for (double p : pos) {
    for (double n : neg) twice += p > n ? 2 : (p == n ? 1 : 0);
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

Outcome auroc_oracle() {
  std::mt19937_64 gen(101);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> size(1, 500);
    const int np = size(gen), nn = size(gen);
    // Coarse grids force ties; every third trial uses continuous scores.
    const int levels = trial % 3 == 2 ? 0 : 5 + trial % 40;
    auto draw = [&](int n, double shift) {
      std::vector<double> v(static_cast<std::size_t>(n));
      std::normal_distribution<double> normal(shift, 1.0);
      for (auto& x : v) {
        x = normal(gen);
        if (levels > 0) x = std::round(x * levels / 4.0);
      }
      return v;
    };
    const auto pos = draw(np, 0.3), neg = draw(nn, 0.0);
    worst = std::max(worst, std::abs(metrics::auroc(pos, neg) - pairwise_auroc(pos, neg)));
  }
  return {worst <= 1e-12, "max |rank - pairwise| = " + sci(worst) + " over 200 pairs"};
}

Outcome decomposition_identity() {
  std::mt19937_64 gen(202);
  double worst = 0.0;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> size(2, 400);
    const int n_id = size(gen), n_ood = size(gen) - 1;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> id(static_cast<std::size_t>(n_id)), ood(static_cast<std::size_t>(n_ood));
    std::vector<bool> correct(id.size());
    std::bernoulli_distribution is_correct(0.2 + 0.6 * (trial % 10) / 10.0);
    for (std::size_t i = 0; i < id.size(); ++i) {
      id[i] = std::round(normal(gen) * 8.0) / 8.0 + 0.5;
      correct[i] = is_correct(gen);
    }
    correct[0] = true;
    correct[1] = false;
    for (auto& x : ood) x = std::round(normal(gen) * 8.0) / 8.0;
    const auto t = metrics::auroc_triple(id, correct, ood);
    if (!t.incorrect_vs_ood) return {false, "incorrect part missing on a mixed instance"};
    const double n = static_cast<double>(t.n_correct + t.n_incorrect);
    const double mixed =
        (static_cast<double>(t.n_correct) * t.correct_vs_ood + static_cast<double>(t.n_incorrect) * *t.incorrect_vs_ood) / n;
    worst = std::max(worst, std::abs(t.id_vs_ood - mixed));
    ++checked;
  }
  return {worst <= 1e-9 && checked == 100, "max identity gap " + sci(worst) + " over 100 instances"};
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

Outcome degenerate_reductions() {
  synth::HypercubeOptions h;
  h.dims = 8;
  h.cube_dims = 2;
  h.n_train = 600;
  h.n_val = 200;
  h.n_test = 10;
  h.n_ood = 10;
  h.n_ood_val = 0;
  h.seed = 303;
  const auto split = synth::generate(synth::hypercube_mixture(h));
  MlpSpec spec{8, {32, 24}, 4, 5};
  TrainOptions opts;
  opts.epochs = 15;
  const auto pair = train(spec, split.train, split.val, opts, "label");
  const ClassifierModel& model = pair.last;

  const auto train_fs = detect::feature_set_from_model(model, split.train.at("feat").to_matrix(),
                                                       split.train.at("label").to_labels());
  const auto val_fs =
      detect::feature_set_from_model(model, split.val.at("feat").to_matrix(), split.val.at("label").to_labels());
  std::mt19937_64 gen(304);
  std::normal_distribution<double> normal(0.0, 1.5);
  Matrix x(1000, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(gen);
  const auto samples = detect::feature_set_from_model(model, x);

  detect::FitContext ctx;
  ctx.id_train = &train_fs;
  ctx.id_val = &val_fs;
  ctx.model = &model;
  auto run = [&](const std::string& method, const nlohmann::json& overrides) {
    auto det = detect::make_detector(method, overrides);
    det->fit(ctx);
    return det->score(samples);
  };
  const auto ebo = run("ebo", {{"temperature", 1.0}});
  const auto msp = run("msp", nlohmann::json::object());
  const std::vector<std::tuple<std::string, std::string, nlohmann::json, const std::vector<double>*>> cases = {
      {"ReAct(p=100)=EBO", "react", {{"percentile", 100.0}}, &ebo},
      {"ASH(p=0)=EBO", "ash", {{"percentile", 0.0}}, &ebo},
      {"DICE(p=0)=EBO", "dice", {{"sparsity", 0.0}}, &ebo},
      {"VIM(D=d)=EBO", "vim", {{"dim", 24}}, &ebo},
      {"ODIN(T=1,m=0)=MSP", "odin", {{"temperature", 1.0}, {"magnitude", 0.0}}, &msp},
      {"TempScale(T=1)=MSP", "tempscale", {{"temperature", 1.0}}, &msp},
  };
  bool pass = true;
  std::string detail;
  for (const auto& [name, method, overrides, reference] : cases) {
    const double gap = max_abs_diff(run(method, overrides), *reference);
    pass = pass && gap <= 1e-6;
    if (!detail.empty()) detail += ", ";
    detail += name + " " + sci(gap) + (gap <= 1e-6 ? "" : " [over]");
  }
  return {pass, detail + " on 1000 samples"};
}

Outcome gradnorm_finite_difference() {
  std::mt19937_64 gen(404);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int in = 3 + trial % 5, hidden = 4 + trial % 7, classes = 2 + trial % 6;
    ClassifierModel model = initialize_model(MlpSpec{in, {hidden}, classes, static_cast<uint64_t>(trial + 1)});
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix x(1, in);
    for (int j = 0; j < in; ++j) x(0, j) = normal(gen);
    const auto fs = detect::feature_set_from_model(model, x);
    auto det = detect::make_detector("gradnorm", {{"temperature", 1.0}});
    detect::FitContext ctx;
    ctx.id_train = &fs;
    ctx.id_val = &fs;
    ctx.model = &model;
    det->fit(ctx);
    const double closed = det->score(fs)[0];

    // KL(uniform || softmax(z)) as a function of the last-layer weights.
    auto kl = [&](const ClassifierModel& m) {
      const RowVector z = predict_logits(m, x).row(0);
      const double mx = z.maxCoeff();
      const double lse = mx + std::log((z.array() - mx).exp().sum());
      double s = 0.0;
      for (int c = 0; c < classes; ++c) s += (1.0 / classes) * (std::log(1.0 / classes) - (z(c) - lse));
      return s;
    };
    double l1 = 0.0;
    const double h = 1e-6;
    for (int r = 0; r < model.head.weight.rows(); ++r) {
      for (int c = 0; c < model.head.weight.cols(); ++c) {
        ClassifierModel up = model, dn = model;
        up.head.weight(r, c) += h;
        dn.head.weight(r, c) -= h;
        l1 += std::abs((kl(up) - kl(dn)) / (2.0 * h));
      }
    }
    const double rel = std::abs(closed - l1) / std::max(l1, 1e-300);
    worst = std::max(worst, rel);
  }
  return {worst <= 1e-4, "max relative error " + sci(worst) + " over 20 random models"};
}

Outcome noise_exactness() {
  std::mt19937_64 gen(505);
  const int n = 10000;
  int exact = 0, total = 0;
  double worst_l1 = 0.0;
  for (int c : {4, 10}) {
    Labels clean(n);
    std::uniform_int_distribution<int> cls(0, c - 1);
    for (auto& y : clean) y = cls(gen);
    for (double rate : {0.0, 0.1, 0.2, 0.4, 0.8}) {
      const Labels noisy = inject_uniform(clean, c, rate, 17 + static_cast<uint64_t>(rate * 100));
      long changed = 0;
      for (int i = 0; i < n; ++i) changed += noisy[i] != clean[i];
      ++total;
      exact += changed == std::lround(rate * n);
    }
  }
  // Closure: the estimated transition of injected labels matches the source matrix.
  for (int trial = 0; trial < 4; ++trial) {
    const int c = 4;
    Labels clean(n);
    std::uniform_int_distribution<int> cls(0, c - 1);
    for (auto& y : clean) y = cls(gen);
    Matrix t(c, c);
    if (trial % 2 == 0) {
      const double rate = 0.1 + 0.15 * trial;
      t.setConstant(rate / (c - 1));
      t.diagonal().setConstant(1.0 - rate);
      const Labels noisy = inject_uniform(clean, c, rate, 40 + static_cast<uint64_t>(trial));
      const auto est = estimate_transition(clean, noisy, c);
      for (int r = 0; r < c; ++r) worst_l1 = std::max(worst_l1, (est.transition.matrix().row(r) - t.row(r)).lpNorm<1>());
    } else {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int r = 0; r < c; ++r) {
        for (int k = 0; k < c; ++k) t(r, k) = u(gen) + (r == k ? 2.0 : 0.0);
        t.row(r) /= t.row(r).sum();
      }
      const Labels noisy = inject_class_conditional(clean, TransitionMatrix(t), 50 + static_cast<uint64_t>(trial));
      const auto est = estimate_transition(clean, noisy, c);
      for (int r = 0; r < c; ++r) worst_l1 = std::max(worst_l1, (est.transition.matrix().row(r) - t.row(r)).lpNorm<1>());
    }
  }
  return {exact == total && worst_l1 <= 0.05, std::to_string(exact) + "/" + std::to_string(total) +
                                                  " exact flip counts, max row L1 " + fmt(worst_l1)};
}

Outcome aso_calibration() {
  std::mt19937_64 gen(606);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(50), b(50), c(50), d(50);
  for (auto& v : a) v = normal(gen) + 10.0;
  for (auto& v : b) v = normal(gen);
  for (auto& v : c) v = normal(gen);
  for (auto& v : d) v = normal(gen);
  metrics::AsoOptions options;
  options.seed = 7;
  const double dominated = metrics::aso(a, b, options).eps_min;
  const double reversed = metrics::aso(b, a, options).eps_min;
  const double same = metrics::aso(c, d, options).eps_min;
  return {dominated <= 0.05 && reversed >= 0.95 && same >= 0.4,
          "shift +10 " + fmt(dominated) + ", reversed " + fmt(reversed) + ", identical " + fmt(same)};
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct MatrixRun {
  bench::EvalReport report;
  double seconds = 0.0;
  fs::path dir;
};

MatrixRun run_acceptance_matrix(const fs::path& dir) {
  fs::remove_all(dir);
  auto config = bench::default_acceptance_config();
  config.output = dir;
  const auto start = std::chrono::steady_clock::now();
  MatrixRun r;
  r.report = bench::run_matrix(config);
  bench::emit_reports(r.report, config, dir);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.dir = dir;
  return r;
}

Outcome fig2_monotone(const MatrixRun& run) {
  const auto medians = bench::median_table(run.report);
  // rate -> detector -> cell values
  std::map<double, std::map<std::string, std::vector<double>>> cells;
  for (const auto& m : medians) cells[m.key.noise_rate][m.key.detector].push_back(m.auroc_id);
  std::vector<std::pair<double, double>> curve;
  for (const auto& [rate, by_detector] : cells) {
    std::vector<double> per_detector;
    for (const auto& [det, values] : by_detector) per_detector.push_back(metrics::median(values));
    curve.emplace_back(rate, metrics::median(per_detector));
    if (by_detector.size() != 20) {
      return {false, "rate " + fmt(rate, 1) + " has " + std::to_string(by_detector.size()) + " detectors with results"};
    }
  }
  int violations = 0;
  bool small = true;
  std::string detail;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (i > 0) {
      const double rise = curve[i].second - curve[i - 1].second;
      if (rise > 0.0) {
        ++violations;
        small = small && rise <= 0.01;
      }
    }
    detail += (i ? ", " : "") + fmt(curve[i].first, 1) + ":" + fmt(curve[i].second);
  }
  const bool fast = run.seconds < 15.0 * 60.0;
  const bool complete = run.report.failures.empty() && curve.size() == 4;
  return {complete && violations <= 1 && small && fast,
          "median AUROC by rate " + detail + "; " + std::to_string(violations) + " rises; " +
              std::to_string(run.report.failures.size()) + " failed cells; runtime " + fmt(run.seconds, 1) + " s"};
}

Outcome msp_incorrect(const MatrixRun& run) {
  std::vector<double> correct, incorrect;
  for (const auto& m : bench::median_table(run.report)) {
    if (m.key.detector != "msp") continue;
    if (m.auroc_correct) correct.push_back(*m.auroc_correct);
    if (m.auroc_incorrect) incorrect.push_back(*m.auroc_incorrect);
  }
  if (correct.empty() || incorrect.empty()) return {false, "no MSP cells with both parts"};
  const double mc = metrics::median(correct), mi = metrics::median(incorrect);
  return {mi >= 0.35 && mi <= 0.65 && mc - mi >= 0.10,
          "MSP median incorrect-vs-OOD " + fmt(mi) + ", correct-vs-OOD " + fmt(mc) + " over " +
              std::to_string(incorrect.size()) + " cells"};
}

// seed -> detector -> values, at rate 0.4, restricted by an optional label source.
std::map<uint64_t, std::map<std::string, std::vector<double>>> high_noise_cells(const MatrixRun& run,
                                                                                const std::string& label_source) {
  std::map<uint64_t, std::map<std::string, std::vector<double>>> out;
  for (const auto& m : bench::median_table(run.report)) {
    if (std::abs(m.key.noise_rate - 0.4) > 1e-12) continue;
    if (!label_source.empty() && m.key.label_source != label_source) continue;
    out[m.key.seed][m.key.detector].push_back(m.auroc_id);
  }
  return out;
}

Outcome distance_methods_lead(const MatrixRun& run) {
  int wins = 0, seeds = 0;
  std::string detail;
  for (const auto& [seed, by_detector] : high_noise_cells(run, "")) {
    double best = -1.0;
    std::string best_name;
    for (const char* m : {"mds", "knn", "gram"}) {
      const double v = metrics::median(by_detector.at(m));
      if (v > best) {
        best = v;
        best_name = m;
      }
    }
    const double msp = metrics::median(by_detector.at("msp"));
    ++seeds;
    wins += best >= msp;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " " + best_name + " " +
              fmt(best) + " vs msp " + fmt(msp);
  }
  return {seeds == 3 && wins >= 2, std::to_string(wins) + "/" + std::to_string(seeds) + " seeds: " + detail};
}

Outcome label_source_effect(const MatrixRun& run) {
  const std::set<std::string> label_methods = {"mds", "rmds", "mdsens", "gram", "openmax", "she"};
  std::set<bench::CellKey> keys;
  for (const auto& row : run.report.rows) keys.insert(row.key);
  int compared = 0, changed_label_free = 0, changed_label_methods = 0;
  for (const auto& k : keys) {
    if (k.label_source != "TRAIN") continue;
    bench::CellKey v = k;
    v.label_source = "VAL";
    const auto a = run.report.score_crc.find(k.id());
    const auto b = run.report.score_crc.find(v.id());
    if (a == run.report.score_crc.end() || b == run.report.score_crc.end()) continue;
    const bool differs = a->second != b->second;
    if (label_methods.count(k.detector)) {
      changed_label_methods += differs;
    } else {
      ++compared;
      changed_label_free += differs;
    }
  }
  // 14 label-free detectors x 4 rates x 3 seeds x 2 checkpoints.
  const bool bit_check = compared == 14 * 4 * 3 * 2 && changed_label_free == 0;

  const auto train = high_noise_cells(run, "TRAIN");
  const auto val = high_noise_cells(run, "VAL");
  int wins = 0, seeds = 0;
  std::string detail;
  for (const auto& [seed, by_detector] : train) {
    const double t = metrics::median(by_detector.at("mds"));
    const double v = metrics::median(val.at(seed).at("mds"));
    ++seeds;
    wins += t >= v;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " MDS_train " + fmt(t) +
              " vs MDS_val " + fmt(v);
  }
  return {bit_check && seeds == 3 && wins >= 2,
          std::to_string(changed_label_free) + "/" + std::to_string(compared) +
              " label-free cells differ between label sources (" + std::to_string(changed_label_methods) +
              " label-using cells differ); " + std::to_string(wins) + "/" + std::to_string(seeds) + " seeds: " + detail};
}

Outcome determinism(const MatrixRun& first, const MatrixRun& second) {
  const std::string a = read_text(first.dir / "rows.csv");
  const std::string b = read_text(second.dir / "rows.csv");
  const auto lines = std::count(a.begin(), a.end(), '\n');
  return {!a.empty() && a == b, std::to_string(lines) + " lines; rows.csv " + (a == b ? "byte-identical" : "differs") +
                                    " across two executions"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_runs";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::cerr << "usage: noisyood_acceptance [--work DIR]\n";
      return 2;
    }
  }

  check(1, "rank AUROC equals the pairwise oracle", auroc_oracle);
  check(2, "AUROC decomposition identity", decomposition_identity);
  check(3, "degenerate detector reductions", degenerate_reductions);
  check(4, "GradNorm closed form vs finite differences", gradnorm_finite_difference);
  check(5, "noise injection exactness and transition closure", noise_exactness);
  check(6, "ASO calibration", aso_calibration);

  MatrixRun first, second;
  std::string matrix_error;
  try {
    first = run_acceptance_matrix(work / "run1");
    second = run_acceptance_matrix(work / "run2");
  } catch (const std::exception& e) {
    matrix_error = e.what();
  }
  auto on_matrix = [&](auto&& f) {
    return [&, f]() -> Outcome {
      if (!matrix_error.empty()) return {false, "acceptance matrix failed: " + matrix_error};
      return f();
    };
  };
  check(7, "median AUROC non-increasing in noise rate", on_matrix([&] { return fig2_monotone(first); }));
  check(8, "MSP incorrect-vs-OOD near chance", on_matrix([&] { return msp_incorrect(first); }));
  check(9, "distance methods lead MSP at SU 0.4", on_matrix([&] { return distance_methods_lead(first); }));
  check(10, "label source affects only label-using detectors", on_matrix([&] { return label_source_effect(first); }));
  check(11, "determinism of rows.csv", on_matrix([&] { return determinism(first, second); }));

  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
