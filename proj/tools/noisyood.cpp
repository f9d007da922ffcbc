#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "noisyood/bundle_io.hpp"
#include "noisyood/classifier.hpp"
#include "noisyood/detectors.hpp"
#include "noisyood/error.hpp"
#include "noisyood/harness.hpp"
#include "noisyood/metrics.hpp"
#include "noisyood/noise.hpp"
#include "noisyood/synth.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace noisyood;

constexpr int kExitConfig = 2;
constexpr int kExitPartial = 3;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
}

json parse_inline_json(const std::string& text) {
  if (text.empty()) return json::object();
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON '" + text + "': " + e.what());
  }
}

void write_scores(const std::vector<double>& scores, const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "index,score\n";
  char buffer[40];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::snprintf(buffer, sizeof(buffer), "%.17g", scores[i]);
    out << i << ',' << buffer << '\n';
  }
}

std::vector<double> read_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  std::getline(in, line);
  if (line != "index,score") throw ValidationError(path + " is not a score file (expected header index,score)");
  std::vector<double> scores;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ValidationError("malformed score line in " + path + ": " + line);
    scores.push_back(std::stod(line.substr(comma + 1)));
  }
  return scores;
}

std::vector<int> parse_widths(const std::string& text) {
  std::vector<int> widths;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      widths.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ConfigError("invalid layer width '" + part + "'");
    }
  }
  return widths;
}

struct Options {
  std::string config;
  std::string out;
  int workers = 0;
  bool resume = false;
  std::optional<uint64_t> seed;

  // subcommand-specific
  std::string data;
  std::string input;
  std::string model_dir;
  std::string method;
  std::string overrides;
  std::string label_source = "TRAIN";
  std::string label_key = "label";
  std::string noise_model = "SU";
  std::string transition;
  std::string tag;
  std::string hidden = "64,64";
  std::string train_dir;
  std::string val_dir;
  std::string ood_val_dir;
  std::string state_dir;
  std::string id_scores;
  std::string id_bundle;
  std::vector<std::string> ood_scores;
  double rate = 0.0;
  bool bernoulli = false;
  bool layers = true;
  TrainOptions training;
};

int cmd_gen_data(const Options& o) {
  json j = read_json(o.config);
  if (o.seed) {
    if (j.contains("hypercube")) {
      j["hypercube"]["seed"] = *o.seed;
    } else {
      j["seed"] = *o.seed;
    }
  }
  synth::MixtureSpec spec;
  try {
    if (j.contains("hypercube")) {
      const json& h = j["hypercube"];
      synth::HypercubeOptions opts;
      opts.dims = h.value("dims", opts.dims);
      opts.cube_dims = h.value("cube_dims", opts.cube_dims);
      opts.scale = h.value("scale", opts.scale);
      opts.sigma = h.value("sigma", opts.sigma);
      opts.n_train = h.value("n_train", opts.n_train);
      opts.n_val = h.value("n_val", opts.n_val);
      opts.n_test = h.value("n_test", opts.n_test);
      opts.n_ood = h.value("n_ood", opts.n_ood);
      opts.n_ood_val = h.value("n_ood_val", opts.n_ood_val);
      opts.ood_shift = h.value("ood_shift", opts.ood_shift);
      opts.seed = h.value("seed", opts.seed);
      spec = synth::hypercube_mixture(opts);
    } else {
      spec = synth::MixtureSpec::from_json(j);
    }
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mixture spec: ") + e.what());
  }
  SplitSet split = synth::generate(spec);
  split.train.metadata["mixture"] = spec.to_json();
  write_split_set(split, o.out);
  std::cout << "wrote split set to " << o.out << " (train " << split.train.num_rows() << ", " << split.ood_sets.size()
            << " OOD sets)\n";
  return 0;
}

int cmd_inject_noise(const Options& o) {
  TensorBundle bundle = read_bundle(o.input);
  const Labels clean = bundle.at("label").to_labels();
  NoiseSpec spec;
  spec.model = noise_model_from_string(o.noise_model);
  spec.rate = o.rate;
  spec.seed = o.seed.value_or(0);
  spec.bernoulli = o.bernoulli;
  int classes = 0;
  for (int32_t y : clean) classes = std::max(classes, y + 1);
  if (bundle.has("logit")) classes = static_cast<int>(bundle.at("logit").shape()[1]);
  if (spec.model == NoiseModel::kClassConditional) {
    if (o.transition.empty()) throw ConfigError("SCC noise needs --transition <file.json>");
    spec.transition = TransitionMatrix::from_json(read_json(o.transition));
    classes = spec.transition->num_classes();
  } else if (spec.model == NoiseModel::kReal) {
    throw ConfigError("REAL noise labels are read from bundles, not injected");
  }
  const Labels noisy = apply_noise(spec, clean, classes);
  const std::string tag = o.tag.empty() ? to_string(spec.model) + "-" + bench::format_number(o.rate) : o.tag;
  attach_noisy_labels(bundle, tag, noisy, spec);
  write_bundle(bundle, o.out);
  const auto estimate = estimate_transition(clean, noisy, classes);
  std::cout << "label.noisy." << tag << ": realised rate " << bench::format_number(estimate.rate) << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const SplitSet split = read_split_set(o.data);
  MlpSpec spec;
  spec.input_dim = static_cast<int>(split.train.at("feat").shape()[1]);
  spec.hidden_dims = parse_widths(o.hidden);
  int classes = 0;
  for (const TensorBundle* b : {&split.train, &split.val}) {
    for (int32_t y : b->at("label").i32()) classes = std::max(classes, y + 1);
  }
  spec.num_classes = classes;
  spec.seed = o.seed.value_or(0);
  const CheckpointPair pair = train(spec, split.train, split.val, o.training, o.label_key);
  save_model(pair.early, fs::path(o.out) / "early");
  save_model(pair.last, fs::path(o.out) / "last");
  const auto& final_epoch = pair.last.training_log.back();
  std::cout << "early checkpoint: epoch " << pair.early.epoch << "; last: epoch " << pair.last.epoch
            << " (val accuracy " << bench::format_number(final_epoch.val_accuracy) << ")\n";
  return 0;
}

int cmd_extract(const Options& o) {
  const ClassifierModel model = load_model(o.model_dir);
  const TensorBundle data = read_bundle(o.input);
  write_bundle(export_bundle(model, data, o.layers), o.out);
  std::cout << "wrote traces for " << data.num_rows() << " rows to " << o.out << "\n";
  return 0;
}

int cmd_fit(const Options& o) {
  auto detector = detect::make_detector(o.method, parse_inline_json(o.overrides));
  const detect::FeatureSet train = detect::feature_set_from_bundle(read_bundle(o.train_dir), o.label_key);
  const detect::FeatureSet val = detect::feature_set_from_bundle(read_bundle(o.val_dir), "label");
  std::optional<detect::FeatureSet> ood_val;
  if (!o.ood_val_dir.empty()) ood_val = detect::feature_set_from_bundle(read_bundle(o.ood_val_dir), "label");
  std::optional<ClassifierModel> model;
  if (!o.model_dir.empty()) model = load_model(o.model_dir);
  detect::FitContext ctx;
  ctx.id_train = &train;
  ctx.id_val = &val;
  ctx.ood_val = ood_val ? &*ood_val : nullptr;
  ctx.model = model ? &*model : nullptr;
  ctx.label_source = detect::label_source_from_string(o.label_source);
  detector->fit(ctx);
  detect::save_detector(*detector, o.out);
  std::cout << detector->method() << " " << detector->params().dump() << "\n";
  return 0;
}

int cmd_score(const Options& o) {
  const auto detector = detect::load_detector(o.state_dir);
  const detect::FeatureSet data = detect::feature_set_from_bundle(read_bundle(o.input), "label");
  write_scores(detector->score(data), o.out);
  std::cout << "scored " << data.size() << " rows with " << detector->method() << "\n";
  return 0;
}

int cmd_evaluate(const Options& o) {
  const std::vector<double> id = read_scores(o.id_scores);
  std::vector<bool> correct(id.size(), true);
  if (!o.id_bundle.empty()) {
    const TensorBundle bundle = read_bundle(o.id_bundle);
    const Labels predicted = argmax_rows(bundle.at("logit").to_matrix());
    const Labels labels = bundle.at("label").to_labels();
    if (labels.size() != id.size()) throw ValidationError("ID bundle and score file differ in length");
    for (std::size_t i = 0; i < id.size(); ++i) correct[i] = predicted[i] == labels[i];
  }
  json result = json::object();
  std::vector<double> id_aurocs;
  for (const auto& entry : o.ood_scores) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw ConfigError("--ood expects name=scores.csv, got '" + entry + "'");
    const std::string name = entry.substr(0, eq);
    const std::vector<double> ood = read_scores(entry.substr(eq + 1));
    const auto t = metrics::auroc_triple(id, correct, ood);
    json row = {{"auroc_id", t.id_vs_ood}, {"n_correct", t.n_correct}, {"n_incorrect", t.n_incorrect}, {"n_ood", t.n_ood}};
    row["auroc_correct"] = t.has_correct() ? json(t.correct_vs_ood) : json(nullptr);
    row["auroc_incorrect"] = t.incorrect_vs_ood ? json(*t.incorrect_vs_ood) : json(nullptr);
    result[name] = row;
    id_aurocs.push_back(t.id_vs_ood);
  }
  if (id_aurocs.empty()) throw ConfigError("evaluate needs at least one --ood name=scores.csv");
  json out = {{"ood_sets", result}, {"median_auroc_id", metrics::median(id_aurocs)}};
  if (o.out.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    std::ofstream(o.out) << out.dump(2) << "\n";
  }
  return 0;
}

int cmd_benchmark(const Options& o) {
  bench::RunMatrixConfig config =
      o.config.empty() ? bench::default_acceptance_config() : bench::RunMatrixConfig::load(o.config);
  if (!o.out.empty()) config.output = o.out;
  if (o.workers > 0) config.workers = o.workers;
  if (o.seed) config.seeds = {*o.seed};
  config.validate();
  std::cerr << "running " << bench::planned_cell_count(config) << " cells into " << config.output.string() << "\n";
  bench::RunOptions run;
  run.resume = o.resume;
  run.log = &std::cerr;
  const bench::EvalReport report = bench::run_matrix(config, run);
  bench::emit_reports(report, config, config.output);
  std::cout << report.rows.size() << " result rows, " << report.failures.size() << " failed cells; reports in "
            << config.output.string() << "\n";
  const auto violations = report.label_source_violations();
  if (!violations.empty()) std::cerr << violations.size() << " label-source invariance violations\n";
  return report.failures.empty() ? 0 : kExitPartial;
}

int cmd_report(const Options& o) {
  const fs::path run_dir = o.input.empty() ? fs::path(o.out) : fs::path(o.input);
  const bench::EvalReport report = bench::read_report(run_dir);
  bench::RunMatrixConfig config = bench::RunMatrixConfig::load(
      o.config.empty() ? (run_dir / "config.json").string() : o.config);
  bench::EvalReport full = report;
  full.aso = bench::aso_table(report, config.aso, config.aso_options);
  const fs::path out = o.out.empty() ? run_dir : fs::path(o.out);
  bench::emit_reports(full, config, out);
  std::cout << "regenerated reports for " << full.rows.size() << " rows in " << out.string() << "\n";
  return full.failures.empty() ? 0 : kExitPartial;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc OOD detection benchmark under label noise"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool need_out) {
    auto* out = sub->add_option("--out", o.out, "Output path");
    if (need_out) out->required();
    sub->add_option("--seed", o.seed, "Seed");
  };

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic split set from a mixture spec");
  gen->add_option("--config", o.config, "Mixture spec JSON ({\"hypercube\": {...}} or explicit means)")->required();
  common(gen, true);

  auto* inject = app.add_subcommand("inject-noise", "Attach noisy labels to a bundle");
  inject->add_option("--in", o.input, "Input bundle directory")->required();
  inject->add_option("--model", o.noise_model, "SU or SCC")->capture_default_str();
  inject->add_option("--rate", o.rate, "Noise rate")->required();
  inject->add_option("--transition", o.transition, "Transition matrix JSON (SCC)");
  inject->add_option("--tag", o.tag, "Tag for label.noisy.<tag>");
  inject->add_flag("--bernoulli", o.bernoulli, "Independent per-sample flips instead of an exact count (SU)");
  common(inject, true);

  auto* tr = app.add_subcommand("train", "Train an MLP and save early and last checkpoints");
  tr->add_option("--data", o.data, "Split-set root with train/ and val/")->required();
  tr->add_option("--hidden", o.hidden, "Hidden widths, comma separated")->capture_default_str();
  tr->add_option("--epochs", o.training.epochs)->capture_default_str();
  tr->add_option("--lr", o.training.learning_rate)->capture_default_str();
  tr->add_option("--batch", o.training.batch_size)->capture_default_str();
  tr->add_option("--momentum", o.training.momentum)->capture_default_str();
  tr->add_option("--label-key", o.label_key, "Training label tensor")->capture_default_str();
  common(tr, true);

  auto* ex = app.add_subcommand("extract", "Write feat/logit/act traces of a model on a bundle");
  ex->add_option("--model", o.model_dir, "Model directory")->required();
  ex->add_option("--in", o.input, "Input bundle")->required();
  ex->add_flag("--layers,!--no-layers", o.layers, "Include hidden activations");
  common(ex, true);

  auto* fit = app.add_subcommand("fit", "Fit a detector on traced bundles");
  fit->add_option("--method", o.method, "Detector name")->required();
  fit->add_option("--train", o.train_dir, "Traced training bundle")->required();
  fit->add_option("--val", o.val_dir, "Traced validation bundle")->required();
  fit->add_option("--ood-val", o.ood_val_dir, "Traced OOD validation bundle");
  fit->add_option("--model", o.model_dir, "Model directory");
  fit->add_option("--label-source", o.label_source, "TRAIN or VAL")->capture_default_str();
  fit->add_option("--label-key", o.label_key, "Training label tensor")->capture_default_str();
  fit->add_option("--overrides", o.overrides, "Hyperparameter overrides as JSON");
  common(fit, true);

  auto* sc = app.add_subcommand("score", "Score a traced bundle with a fitted detector");
  sc->add_option("--state", o.state_dir, "Detector state directory")->required();
  sc->add_option("--in", o.input, "Traced bundle")->required();
  common(sc, true);

  auto* ev = app.add_subcommand("evaluate", "AUROC triple of ID scores against OOD score files");
  ev->add_option("--id", o.id_scores, "ID score file")->required();
  ev->add_option("--id-bundle", o.id_bundle, "Traced ID bundle, for correct/incorrect splits");
  ev->add_option("--ood", o.ood_scores, "name=scores.csv")->required();
  common(ev, false);

  auto* bm = app.add_subcommand("benchmark", "Run an experiment matrix");
  bm->add_option("--config", o.config, "Run-matrix JSON (default: the acceptance matrix)");
  bm->add_option("--workers", o.workers, "Parallel model groups");
  bm->add_flag("--resume", o.resume, "Reuse finished cells and cached models");
  common(bm, false);

  auto* rp = app.add_subcommand("report", "Regenerate report tables from rows.csv");
  rp->add_option("--in", o.input, "Run directory")->required();
  rp->add_option("--config", o.config, "Run-matrix JSON (default: <run>/config.json)");
  common(rp, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*inject) return cmd_inject_noise(o);
    if (*tr) return cmd_train(o);
    if (*ex) return cmd_extract(o);
    if (*fit) return cmd_fit(o);
    if (*sc) return cmd_score(o);
    if (*ev) return cmd_evaluate(o);
    if (*bm) return cmd_benchmark(o);
    if (*rp) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
