#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "noisyood/bundle_io.hpp"
#include "noisyood/error.hpp"
#include "noisyood/harness.hpp"
#include "noisyood/rng.hpp"

namespace noisyood::bench {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct NoiseTag {
  NoiseAxisConfig axis;
  double rate = 0.0;
  std::string tag;  // e.g. "SU-0.2", "REAL-aggre"
};

struct PreparedDataset {
  DatasetConfig config;
  SplitSet split;
  bool external = false;
  std::vector<std::size_t> ood_indices;
};

// One trained model pair (or one external feature set) and every cell that reads it.
struct Group {
  const PreparedDataset* dataset = nullptr;
  NoiseTag noise;
  const ArchitectureConfig* arch = nullptr;
  uint64_t seed = 0;
  std::string dataset_label;
  std::vector<CellKey> cells;
};

struct CellOutcome {
  std::vector<ResultRow> rows;
  std::optional<FailureRecord> failure;
  std::optional<uint32_t> score_crc;
};

std::string rate_label(double rate) { return format_number(rate); }

std::vector<NoiseTag> expand_noise(const std::vector<NoiseAxisConfig>& axes) {
  std::vector<NoiseTag> tags;
  for (const auto& axis : axes) {
    if (axis.model == NoiseModel::kReal) {
      tags.push_back({axis, 0.0, "REAL-" + axis.real_key});
      continue;
    }
    for (double r : axis.rates) tags.push_back({axis, r, to_string(axis.model) + "-" + rate_label(r)});
  }
  return tags;
}

std::string noisy_key(const NoiseTag& t) { return "label.noisy." + t.tag; }

Matrix default_pattern(int classes) {
  Matrix p = Matrix::Zero(classes, classes);
  for (int c = 0; c < classes; ++c) p(c, (c + 1) % classes) = 1.0;
  return p;
}

int class_count(const SplitSet& split) {
  const TensorBundle& t = split.train;
  if (t.has("logit")) return static_cast<int>(t.at("logit").shape()[1]);
  int classes = 0;
  for (const TensorBundle* b : {&split.train, &split.val, &split.test}) {
    for (int32_t y : b->at("label").i32()) classes = std::max(classes, y + 1);
  }
  return classes;
}

// Attaches the noisy training labels of `tag` and returns their realised rate.
double attach_noise(SplitSet& split, const NoiseTag& tag) {
  const Labels clean = split.train.at("label").to_labels();
  const int classes = class_count(split);
  NoiseSpec spec;
  spec.model = tag.axis.model;
  spec.rate = tag.rate;
  spec.bernoulli = tag.axis.bernoulli;
  // Fixed per noise setting so every training seed sees the same noisy labels.
  spec.seed = Philox(tag.axis.seed).split(tag.tag).next_u64();
  Labels noisy;
  if (tag.axis.model == NoiseModel::kReal) {
    const std::string key = "label.noisy." + tag.axis.real_key;
    if (!split.train.has(key)) throw ConfigError("training bundle has no '" + key + "' for REAL noise");
    noisy = split.train.at(key).to_labels();
    spec.noisy_labels = noisy;
  } else {
    if (tag.axis.model == NoiseModel::kClassConditional) {
      const Matrix pattern = tag.axis.pattern.value_or(default_pattern(classes));
      if (pattern.rows() != classes) throw ConfigError("SCC pattern size does not match the class count");
      spec.transition = TransitionMatrix((1.0 - tag.rate) * Matrix::Identity(classes, classes) + tag.rate * pattern);
    }
    noisy = apply_noise(spec, clean, classes);
  }
  attach_noisy_labels(split.train, tag.tag, noisy, spec);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) flips += clean[i] != noisy[i] ? 1 : 0;
  return static_cast<double>(flips) / static_cast<double>(clean.size());
}

ClassifierModel round_to_float32(ClassifierModel model) {
  auto round = [](auto& m) { m = m.template cast<float>().template cast<double>(); };
  for (auto& layer : model.hidden) {
    round(layer.weight);
    round(layer.bias);
  }
  round(model.head.weight);
  round(model.head.bias);
  return model;
}

void write_atomically(const fs::path& file, const std::string& content) {
  fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << content;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, file);
}

json outcome_to_json(const CellOutcome& o) {
  json rows = json::array();
  for (const auto& r : o.rows) {
    json e = {{"ood_set", r.ood_set},
              {"id_vs_ood", r.auroc.id_vs_ood},
              {"correct_vs_ood", r.auroc.correct_vs_ood},
              {"n_correct", r.auroc.n_correct},
              {"n_incorrect", r.auroc.n_incorrect},
              {"n_ood", r.auroc.n_ood},
              {"id_accuracy", r.id_accuracy}};
    e["incorrect_vs_ood"] = r.auroc.incorrect_vs_ood ? json(*r.auroc.incorrect_vs_ood) : json(nullptr);
    rows.push_back(e);
  }
  json j = {{"rows", rows}};
  j["failure"] = o.failure ? json(o.failure->error) : json(nullptr);
  j["score_crc"] = o.score_crc ? json(*o.score_crc) : json(nullptr);
  return j;
}

CellOutcome outcome_from_json(const json& j, const CellKey& key) {
  CellOutcome o;
  for (const auto& e : j.at("rows")) {
    ResultRow r;
    r.key = key;
    r.ood_set = e.at("ood_set").get<std::string>();
    r.auroc.id_vs_ood = e.at("id_vs_ood").get<double>();
    r.auroc.correct_vs_ood = e.at("correct_vs_ood").get<double>();
    if (!e.at("incorrect_vs_ood").is_null()) r.auroc.incorrect_vs_ood = e["incorrect_vs_ood"].get<double>();
    r.auroc.n_correct = e.at("n_correct").get<std::size_t>();
    r.auroc.n_incorrect = e.at("n_incorrect").get<std::size_t>();
    r.auroc.n_ood = e.at("n_ood").get<std::size_t>();
    r.id_accuracy = e.at("id_accuracy").get<double>();
    o.rows.push_back(std::move(r));
  }
  if (!j.at("failure").is_null()) o.failure = FailureRecord{key, j["failure"].get<std::string>()};
  if (!j.at("score_crc").is_null()) o.score_crc = j["score_crc"].get<uint32_t>();
  return o;
}

struct Splits {
  detect::FeatureSet train;
  detect::FeatureSet val;
  detect::FeatureSet test;
  std::vector<detect::FeatureSet> ood;
  std::optional<detect::FeatureSet> ood_val;
};

Splits trace_splits(const PreparedDataset& d, const NoiseTag& tag, const ClassifierModel* model) {
  auto view = [&](const TensorBundle& b, const std::string& label_key) {
    if (!model) return detect::feature_set_from_bundle(b, label_key);
    return detect::feature_set_from_bundle(export_bundle(*model, b, true), label_key);
  };
  Splits s;
  s.train = view(d.split.train, noisy_key(tag));
  s.val = view(d.split.val, "label");
  s.test = view(d.split.test, "label");
  for (std::size_t i : d.ood_indices) s.ood.push_back(view(d.split.ood_sets[i], "label"));
  if (d.split.ood_val) s.ood_val = view(*d.split.ood_val, "label");
  if (!s.val.labels) throw ValidationError("validation split has no clean labels");
  if (!s.test.labels) throw ValidationError("test split has no labels");
  return s;
}

CellOutcome evaluate_cell(const CellKey& key, const DetectorConfig& det, const Splits& s, const ClassifierModel* model,
                          detect::LabelSource source, const fs::path* state_dir) {
  CellOutcome o;
  std::string stage = "fit";
  try {
    auto detector = detect::make_detector(det.method, det.overrides);
    detect::FitContext ctx;
    ctx.id_train = &s.train;
    ctx.id_val = &s.val;
    ctx.ood_val = s.ood_val ? &*s.ood_val : nullptr;
    ctx.model = model;
    ctx.label_source = source;
    detector->fit(ctx);
    if (state_dir) detect::save_detector(*detector, *state_dir);
    stage = "score";
    const std::vector<double> id_scores = detector->score(s.test);
    const Labels predicted = s.test.predictions();
    std::vector<bool> correct(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) correct[i] = predicted[i] == (*s.test.labels)[i];
    const double id_accuracy = accuracy(s.test.logits, *s.test.labels);
    std::vector<unsigned char> bytes;
    auto append = [&](const std::vector<double>& v) {
      const auto* p = reinterpret_cast<const unsigned char*>(v.data());
      bytes.insert(bytes.end(), p, p + v.size() * sizeof(double));
    };
    append(id_scores);
    for (const auto& ood : s.ood) {
      const std::vector<double> ood_scores = detector->score(ood);
      for (double v : ood_scores) {
        if (!std::isfinite(v)) throw NumericError("non-finite score on OOD set '" + ood.name + "'");
      }
      append(ood_scores);
      ResultRow r;
      r.key = key;
      r.ood_set = ood.name;
      r.auroc = metrics::auroc_triple(id_scores, correct, ood_scores);
      r.id_accuracy = id_accuracy;
      o.rows.push_back(std::move(r));
    }
    for (double v : id_scores) {
      if (!std::isfinite(v)) throw NumericError("non-finite score on the ID test split");
    }
    o.score_crc = crc32(bytes);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    o.rows.clear();
    o.score_crc.reset();
    o.failure = FailureRecord{key, stage + ": " + e.what()};
  }
  return o;
}

class Runner {
 public:
  Runner(const RunMatrixConfig& config, const RunOptions& options) : config_(config), options_(options) {}

  EvalReport run() {
    config_.validate();
    prepare();
    EvalReport report;
    report.planned_cells = 0;
    for (const auto& g : groups_) report.planned_cells += g.cells.size();
    log("planned " + std::to_string(report.planned_cells) + " cells in " + std::to_string(groups_.size()) +
        " model groups");

    std::vector<std::vector<std::pair<CellKey, CellOutcome>>> results(groups_.size());
    std::atomic<std::size_t> next{0};
    std::mutex config_error_mutex;
    std::optional<std::string> config_error;
    auto worker = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= groups_.size()) return;
        try {
          results[i] = run_group(groups_[i]);
        } catch (const ConfigError& e) {
          std::lock_guard lock(config_error_mutex);
          if (!config_error) config_error = e.what();
        }
      }
    };
    const auto n_workers = static_cast<std::size_t>(std::min<int>(config_.workers, static_cast<int>(groups_.size())));
    if (n_workers <= 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      for (std::size_t t = 0; t < n_workers; ++t) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }
    if (config_error) throw ConfigError(*config_error);

    for (auto& group : results) {
      for (auto& [key, outcome] : group) {
        for (auto& r : outcome.rows) report.rows.push_back(std::move(r));
        if (outcome.failure) report.failures.push_back(std::move(*outcome.failure));
        if (outcome.score_crc) report.score_crc[key.id()] = *outcome.score_crc;
      }
    }
    std::sort(report.rows.begin(), report.rows.end(), [](const ResultRow& a, const ResultRow& b) {
      return std::tie(a.key, a.ood_set) < std::tie(b.key, b.ood_set);
    });
    std::sort(report.failures.begin(), report.failures.end(),
              [](const FailureRecord& a, const FailureRecord& b) { return a.key < b.key; });
    report.aso = aso_table(report, config_.aso, config_.aso_options);
    return report;
  }

 private:
  void log(const std::string& line) {
    if (!options_.log) return;
    std::lock_guard lock(log_mutex_);
    *options_.log << line << '\n';
    options_.log->flush();
  }

  void prepare() {
    const fs::path echo = config_.output / "config.json";
    const std::string config_text = config_.to_json().dump(2) + "\n";
    if (options_.resume && fs::exists(echo)) {
      std::ifstream in(echo);
      const std::string previous((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (previous != config_text) {
        throw ConfigError("cannot resume: " + echo.string() + " was written by a different configuration");
      }
    }
    write_atomically(echo, config_text);

    const auto tags = expand_noise(config_.noise);
    datasets_.reserve(config_.datasets.size());
    for (const auto& dc : config_.datasets) {
      PreparedDataset d;
      d.config = dc;
      d.split = dc.synthetic ? synth::generate(*dc.synthetic) : read_split_set(*dc.path);
      d.external = d.split.train.has("logit");
      for (std::size_t i = 0; i < d.split.ood_sets.size(); ++i) {
        const auto& name = d.split.ood_sets[i].name;
        if (config_.ood_sets.empty() ||
            std::find(config_.ood_sets.begin(), config_.ood_sets.end(), name) != config_.ood_sets.end()) {
          d.ood_indices.push_back(i);
        }
      }
      for (const auto& wanted : config_.ood_sets) {
        bool found = false;
        for (const auto& b : d.split.ood_sets) found = found || b.name == wanted;
        if (!found) throw ConfigError("dataset '" + dc.name + "' has no OOD set '" + wanted + "'");
      }
      if (d.ood_indices.empty()) throw ConfigError("dataset '" + dc.name + "' has no OOD sets to evaluate");
      for (const auto& tag : tags) {
        const double realised = attach_noise(d.split, tag);
        log("dataset " + dc.name + ": " + tag.tag + " realised flip rate " + format_number(realised));
      }
      datasets_.push_back(std::move(d));
    }

    const bool multi_arch = config_.architectures.size() > 1;
    for (const auto& d : datasets_) {
      for (const auto& tag : tags) {
        auto add_group = [&](const ArchitectureConfig* arch, uint64_t seed, const std::vector<std::string>& checkpoints) {
          Group g;
          g.dataset = &d;
          g.noise = tag;
          g.arch = arch;
          g.seed = seed;
          g.dataset_label = (arch && multi_arch) ? d.config.name + "@" + arch->name : d.config.name;
          for (const auto& ckpt : checkpoints) {
            for (auto source : config_.label_sources) {
              for (const auto& det : config_.detectors) {
                CellKey k;
                k.dataset = g.dataset_label;
                k.noise_model = to_string(tag.axis.model);
                k.noise_rate = tag.rate;
                k.seed = seed;
                k.checkpoint = ckpt;
                k.label_source = detect::to_string(source);
                k.detector = det.method;
                g.cells.push_back(k);
              }
            }
          }
          groups_.push_back(std::move(g));
        };
        if (d.external) {
          add_group(nullptr, 0, {"external"});
        } else {
          for (const auto& arch : config_.architectures) {
            for (uint64_t seed : config_.seeds) add_group(&arch, seed, config_.checkpoints);
          }
        }
      }
    }
  }

  fs::path cell_marker(const CellKey& k) const { return config_.output / "cells" / (k.id() + ".json"); }

  fs::path model_dir(const Group& g) const {
    return config_.output / "cache" / g.dataset->config.name / g.noise.tag / (g.arch ? g.arch->name : "external") /
           ("seed-" + std::to_string(g.seed));
  }

  std::optional<CellOutcome> load_marker(const CellKey& k) const {
    if (!options_.resume) return std::nullopt;
    const fs::path marker = cell_marker(k);
    if (!fs::exists(marker)) return std::nullopt;
    std::ifstream in(marker);
    try {
      return outcome_from_json(json::parse(in), k);
    } catch (const json::exception&) {
      return std::nullopt;  // damaged marker: recompute the cell
    }
  }

  std::map<std::string, ClassifierModel> obtain_models(const Group& g) {
    const fs::path dir = model_dir(g);
    std::map<std::string, ClassifierModel> models;
    if (options_.resume && fs::exists(dir / "early" / "manifest.json") && fs::exists(dir / "last" / "manifest.json")) {
      models["early"] = load_model(dir / "early");
      models["last"] = load_model(dir / "last");
      log("loaded cached models " + dir.string());
      return models;
    }
    const PreparedDataset& d = *g.dataset;
    MlpSpec spec;
    spec.input_dim = static_cast<int>(d.split.train.at("feat").shape()[1]);
    spec.hidden_dims = g.arch->hidden_dims;
    spec.num_classes = class_count(d.split);
    spec.seed = g.seed;
    CheckpointPair pair = train(spec, d.split.train, d.split.val, config_.training, noisy_key(g.noise));
    models["early"] = round_to_float32(std::move(pair.early));
    models["last"] = round_to_float32(std::move(pair.last));
    save_model(models["early"], dir / "early");
    save_model(models["last"], dir / "last");
    log("trained " + dir.string() + " (early epoch " + std::to_string(models["early"].epoch) + ")");
    return models;
  }

  std::vector<std::pair<CellKey, CellOutcome>> run_group(const Group& g) {
    std::vector<std::pair<CellKey, CellOutcome>> out;
    std::vector<std::optional<CellOutcome>> cached;
    bool all_cached = true;
    for (const auto& k : g.cells) {
      cached.push_back(load_marker(k));
      all_cached = all_cached && cached.back().has_value();
    }
    if (all_cached) {
      for (std::size_t i = 0; i < g.cells.size(); ++i) out.emplace_back(g.cells[i], std::move(*cached[i]));
      return out;
    }

    std::map<std::string, ClassifierModel> models;
    std::optional<std::string> group_error;
    if (!g.dataset->external) {
      try {
        models = obtain_models(g);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        group_error = std::string("train: ") + e.what();
      }
    }

    std::string current_checkpoint;
    std::optional<Splits> splits;
    std::optional<std::string> trace_error;
    for (std::size_t i = 0; i < g.cells.size(); ++i) {
      const CellKey& k = g.cells[i];
      if (cached[i]) {
        out.emplace_back(k, std::move(*cached[i]));
        continue;
      }
      CellOutcome o;
      if (group_error) {
        o.failure = FailureRecord{k, *group_error};
      } else {
        const ClassifierModel* model = g.dataset->external ? nullptr : &models.at(k.checkpoint);
        if (k.checkpoint != current_checkpoint) {
          current_checkpoint = k.checkpoint;
          splits.reset();
          trace_error.reset();
          try {
            splits = trace_splits(*g.dataset, g.noise, model);
          } catch (const std::exception& e) {
            trace_error = std::string("trace: ") + e.what();
          }
        }
        if (trace_error) {
          o.failure = FailureRecord{k, *trace_error};
        } else {
          const DetectorConfig* det = nullptr;
          for (const auto& d : config_.detectors) {
            if (d.method == k.detector) det = &d;
          }
          const fs::path state_dir = config_.output / "states" / k.id();
          o = evaluate_cell(k, *det, *splits, model, detect::label_source_from_string(k.label_source),
                            config_.save_states ? &state_dir : nullptr);
        }
      }
      if (o.failure) log("cell " + k.id() + " failed: " + o.failure->error);
      write_atomically(cell_marker(k), outcome_to_json(o).dump() + "\n");
      out.emplace_back(k, std::move(o));
    }
    log("finished group " + g.dataset_label + " " + g.noise.tag + " seed " + std::to_string(g.seed));
    return out;
  }

  const RunMatrixConfig& config_;
  RunOptions options_;
  std::mutex log_mutex_;
  std::vector<PreparedDataset> datasets_;
  std::vector<Group> groups_;
};

}  // namespace

std::string CellKey::id() const {
  std::string s = dataset + "__" + noise_model + "-" + format_number(noise_rate) + "__seed-" + std::to_string(seed) +
                  "__" + checkpoint + "__" + label_source + "__" + detector;
  for (char& c : s) {
    if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '_';
  }
  return s;
}

std::vector<std::string> EvalReport::label_source_violations() const {
  std::vector<std::string> violations;
  const std::string train_tag = "__TRAIN__";
  for (const auto& [id, crc] : score_crc) {
    const auto pos = id.find(train_tag);
    if (pos == std::string::npos) continue;
    const std::string detector = id.substr(pos + train_tag.size());
    if (detect::is_class_statistic_method(detector)) continue;
    std::string other = id;
    other.replace(pos, train_tag.size(), "__VAL__");
    const auto it = score_crc.find(other);
    if (it != score_crc.end() && it->second != crc) violations.push_back(id);
  }
  return violations;
}

std::size_t planned_cell_count(const RunMatrixConfig& config) {
  config.validate();
  std::size_t tags = 0;
  for (const auto& n : config.noise) tags += n.model == NoiseModel::kReal ? 1 : n.rates.size();
  std::size_t total = 0;
  for (const auto& d : config.datasets) {
    bool external = false;
    if (d.path) external = fs::exists(*d.path / "train" / "manifest.json") && read_bundle(*d.path / "train").has("logit");
    const std::size_t models = external ? 1 : config.architectures.size() * config.seeds.size() * config.checkpoints.size();
    total += tags * models * config.label_sources.size() * config.detectors.size();
  }
  return total;
}

EvalReport run_matrix(const RunMatrixConfig& config, const RunOptions& options) {
  Runner runner(config, options);
  return runner.run();
}

}  // namespace noisyood::bench
