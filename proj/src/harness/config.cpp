#include <fstream>
#include <set>

#include "noisyood/error.hpp"
#include "noisyood/harness.hpp"

namespace noisyood::bench {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(std::vector<double>(m.row(i).data(), m.row(i).data() + m.cols()));
  return rows;
}

Matrix matrix_from(const json& j, const std::string& where) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw ConfigError(where + " must be a non-empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ConfigError(where + " is ragged");
    for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return m;
}

synth::MixtureSpec synthetic_from(const json& j, const std::string& where) {
  if (j.contains("hypercube")) {
    const json& h = j["hypercube"];
    check_keys(h, {"dims", "cube_dims", "scale", "sigma", "n_train", "n_val", "n_test", "n_ood", "n_ood_val", "ood_shift", "seed"},
               where + ".hypercube");
    synth::HypercubeOptions o;
    o.dims = get_or(h, "dims", o.dims, where);
    o.cube_dims = get_or(h, "cube_dims", o.cube_dims, where);
    o.scale = get_or(h, "scale", o.scale, where);
    o.sigma = get_or(h, "sigma", o.sigma, where);
    o.n_train = get_or(h, "n_train", o.n_train, where);
    o.n_val = get_or(h, "n_val", o.n_val, where);
    o.n_test = get_or(h, "n_test", o.n_test, where);
    o.n_ood = get_or(h, "n_ood", o.n_ood, where);
    o.n_ood_val = get_or(h, "n_ood_val", o.n_ood_val, where);
    o.ood_shift = get_or(h, "ood_shift", o.ood_shift, where);
    o.seed = get_or(h, "seed", o.seed, where);
    try {
      return synth::hypercube_mixture(o);
    } catch (const ValidationError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  try {
    return synth::MixtureSpec::from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

void RunMatrixConfig::validate() const {
  if (datasets.empty()) throw ConfigError("config needs at least one dataset");
  if (noise.empty()) throw ConfigError("config needs at least one noise axis");
  if (architectures.empty()) throw ConfigError("config needs at least one architecture");
  if (seeds.empty()) throw ConfigError("config needs at least one training seed");
  if (checkpoints.empty()) throw ConfigError("config needs at least one checkpoint");
  if (label_sources.empty()) throw ConfigError("config needs at least one label source");
  if (detectors.empty()) throw ConfigError("config needs at least one detector");
  if (workers < 1) throw ConfigError("workers must be at least 1");
  if (output.empty()) throw ConfigError("config needs an output directory");
  std::set<std::string> names;
  for (const auto& d : datasets) {
    if (d.name.empty() || d.name.find_first_of("@/,\\") != std::string::npos) {
      throw ConfigError("dataset name '" + d.name + "' is empty or contains one of @ / , \\");
    }
    if (!names.insert(d.name).second) throw ConfigError("duplicate dataset name '" + d.name + "'");
    if (d.synthetic.has_value() == d.path.has_value()) {
      throw ConfigError("dataset '" + d.name + "' needs exactly one of 'synthetic' and 'path'");
    }
  }
  for (const auto& n : noise) {
    if (n.model == NoiseModel::kReal) {
      if (n.real_key.empty()) throw ConfigError("REAL noise needs a 'key' naming label.noisy.<key>");
      continue;
    }
    if (n.rates.empty()) throw ConfigError("noise axis " + to_string(n.model) + " has no rates");
    for (double r : n.rates) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("noise rate " + std::to_string(r) + " outside [0, 1]");
    }
    if (n.pattern) {
      if (n.model != NoiseModel::kClassConditional) throw ConfigError("'pattern' applies to SCC noise only");
      if (n.pattern->rows() != n.pattern->cols()) throw ConfigError("SCC pattern must be square");
      for (Eigen::Index i = 0; i < n.pattern->rows(); ++i) {
        if ((*n.pattern)(i, i) != 0.0) throw ConfigError("SCC pattern must have a zero diagonal");
        if (std::abs(n.pattern->row(i).sum() - 1.0) > 1e-9 || n.pattern->row(i).minCoeff() < 0.0) {
          throw ConfigError("SCC pattern rows must be probability vectors");
        }
      }
    }
  }
  names.clear();
  for (const auto& a : architectures) {
    if (a.name.empty() || a.name.find_first_of("@/,\\") != std::string::npos) {
      throw ConfigError("architecture name '" + a.name + "' is empty or contains one of @ / , \\");
    }
    if (!names.insert(a.name).second) throw ConfigError("duplicate architecture name '" + a.name + "'");
    for (int h : a.hidden_dims) {
      if (h < 1) throw ConfigError("architecture '" + a.name + "' has a non-positive layer width");
    }
  }
  for (const auto& c : checkpoints) {
    if (c != "early" && c != "last") throw ConfigError("unknown checkpoint '" + c + "' (expected early or last)");
  }
  names.clear();
  for (const auto& d : detectors) {
    const auto& known = detect::known_methods();
    if (std::find(known.begin(), known.end(), d.method) == known.end()) {
      throw ConfigError("unknown detector '" + d.method + "'");
    }
    if (!d.overrides.is_object()) throw ConfigError("overrides of detector '" + d.method + "' must be an object");
    if (!names.insert(d.method).second) throw ConfigError("detector '" + d.method + "' listed twice");
  }
  for (const auto& c : aso) {
    if (!names.count(c.a) || !names.count(c.b)) {
      throw ConfigError("ASO comparison " + c.a + " vs " + c.b + " names a detector that is not configured");
    }
  }
  if (training.epochs < 1 || training.batch_size < 1 || !(training.learning_rate > 0.0)) {
    throw ConfigError("training needs epochs >= 1, batch_size >= 1 and learning_rate > 0");
  }
}

json RunMatrixConfig::to_json() const {
  json j;
  json ds = json::array();
  for (const auto& d : datasets) {
    json e = {{"name", d.name}};
    if (d.synthetic) e["synthetic"] = d.synthetic->to_json();
    if (d.path) e["path"] = d.path->string();
    ds.push_back(e);
  }
  j["datasets"] = ds;
  json ns = json::array();
  for (const auto& n : noise) {
    json e = {{"model", to_string(n.model)}, {"seed", n.seed}};
    if (n.model == NoiseModel::kReal) {
      e["key"] = n.real_key;
    } else {
      e["rates"] = n.rates;
      e["bernoulli"] = n.bernoulli;
    }
    if (n.pattern) e["pattern"] = matrix_json(*n.pattern);
    ns.push_back(e);
  }
  j["noise"] = ns;
  json archs = json::array();
  for (const auto& a : architectures) archs.push_back({{"name", a.name}, {"hidden", a.hidden_dims}});
  j["training"] = {{"architectures", archs},
                   {"seeds", seeds},
                   {"epochs", training.epochs},
                   {"learning_rate", training.learning_rate},
                   {"batch_size", training.batch_size},
                   {"momentum", training.momentum}};
  j["checkpoints"] = checkpoints;
  json ls = json::array();
  for (auto s : label_sources) ls.push_back(detect::to_string(s));
  j["label_sources"] = ls;
  json dets = json::array();
  for (const auto& d : detectors) dets.push_back({{"method", d.method}, {"overrides", d.overrides}});
  j["detectors"] = dets;
  j["ood_sets"] = ood_sets;
  json comps = json::array();
  for (const auto& c : aso) comps.push_back({{"a", c.a}, {"b", c.b}});
  j["aso"] = comps;
  j["aso_options"] = {{"alpha", aso_options.alpha},
                      {"n_bootstrap", aso_options.n_bootstrap},
                      {"seed", aso_options.seed},
                      {"dt", aso_options.dt}};
  j["workers"] = workers;
  j["save_states"] = save_states;
  j["output"] = output.string();
  return j;
}

RunMatrixConfig RunMatrixConfig::from_json(const json& j) {
  check_keys(j, {"datasets", "noise", "training", "checkpoints", "label_sources", "detectors", "ood_sets", "aso",
                 "aso_options", "workers", "save_states", "output"},
             "config");
  RunMatrixConfig c;
  c.datasets.clear();
  for (const auto& d : j.value("datasets", json::array())) {
    check_keys(d, {"name", "synthetic", "path"}, "datasets[]");
    DatasetConfig dc;
    dc.name = get_or<std::string>(d, "name", "", "datasets[]");
    if (d.contains("synthetic")) dc.synthetic = synthetic_from(d["synthetic"], "datasets[" + dc.name + "].synthetic");
    if (d.contains("path")) dc.path = d["path"].get<std::string>();
    c.datasets.push_back(std::move(dc));
  }
  for (const auto& n : j.value("noise", json::array())) {
    check_keys(n, {"model", "rates", "seed", "bernoulli", "pattern", "key"}, "noise[]");
    NoiseAxisConfig nc;
    try {
      nc.model = noise_model_from_string(get_or<std::string>(n, "model", "SU", "noise[]"));
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    nc.rates = get_or(n, "rates", nc.rates, "noise[]");
    nc.seed = get_or(n, "seed", nc.seed, "noise[]");
    nc.bernoulli = get_or(n, "bernoulli", nc.bernoulli, "noise[]");
    nc.real_key = get_or<std::string>(n, "key", "", "noise[]");
    if (n.contains("pattern")) nc.pattern = matrix_from(n["pattern"], "noise[].pattern");
    c.noise.push_back(std::move(nc));
  }
  const json training = j.value("training", json::object());
  check_keys(training, {"architectures", "seeds", "epochs", "learning_rate", "batch_size", "momentum"}, "training");
  for (const auto& a : training.value("architectures", json::array())) {
    check_keys(a, {"name", "hidden"}, "training.architectures[]");
    c.architectures.push_back({get_or<std::string>(a, "name", "", "architecture"),
                               get_or(a, "hidden", std::vector<int>{}, "architecture")});
  }
  if (c.architectures.empty()) c.architectures.push_back({"mlp", {64, 64}});
  c.seeds = get_or(training, "seeds", c.seeds, "training");
  c.training.epochs = get_or(training, "epochs", c.training.epochs, "training");
  c.training.learning_rate = get_or(training, "learning_rate", c.training.learning_rate, "training");
  c.training.batch_size = get_or(training, "batch_size", c.training.batch_size, "training");
  c.training.momentum = get_or(training, "momentum", c.training.momentum, "training");
  c.checkpoints = get_or(j, "checkpoints", c.checkpoints, "config");
  if (j.contains("label_sources")) {
    c.label_sources.clear();
    for (const auto& s : j["label_sources"]) {
      try {
        c.label_sources.push_back(detect::label_source_from_string(s.get<std::string>()));
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
    }
  }
  const json dets = j.value("detectors", json("all"));
  if (dets.is_string()) {
    if (dets.get<std::string>() != "all") throw ConfigError("detectors must be a list or \"all\"");
    for (const auto& m : detect::benchmark_methods()) c.detectors.push_back({m, json::object()});
  } else {
    for (const auto& d : dets) {
      if (d.is_string()) {
        c.detectors.push_back({d.get<std::string>(), json::object()});
      } else {
        check_keys(d, {"method", "overrides"}, "detectors[]");
        c.detectors.push_back({get_or<std::string>(d, "method", "", "detectors[]"), d.value("overrides", json::object())});
      }
    }
  }
  c.ood_sets = get_or(j, "ood_sets", c.ood_sets, "config");
  for (const auto& a : j.value("aso", json::array())) {
    check_keys(a, {"a", "b"}, "aso[]");
    c.aso.push_back({get_or<std::string>(a, "a", "", "aso[]"), get_or<std::string>(a, "b", "", "aso[]")});
  }
  const json ao = j.value("aso_options", json::object());
  check_keys(ao, {"alpha", "n_bootstrap", "seed", "dt"}, "aso_options");
  c.aso_options.alpha = get_or(ao, "alpha", c.aso_options.alpha, "aso_options");
  c.aso_options.n_bootstrap = get_or(ao, "n_bootstrap", c.aso_options.n_bootstrap, "aso_options");
  c.aso_options.seed = get_or(ao, "seed", c.aso_options.seed, "aso_options");
  c.aso_options.dt = get_or(ao, "dt", c.aso_options.dt, "aso_options");
  c.workers = get_or(j, "workers", c.workers, "config");
  c.save_states = get_or(j, "save_states", c.save_states, "config");
  c.output = get_or<std::string>(j, "output", "", "config");
  c.validate();
  return c;
}

RunMatrixConfig RunMatrixConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  RunMatrixConfig c = from_json(j);
  // Relative dataset paths resolve against the config file's directory.
  for (auto& d : c.datasets) {
    if (d.path && d.path->is_relative()) d.path = file.parent_path() / *d.path;
  }
  return c;
}

RunMatrixConfig default_acceptance_config() {
  RunMatrixConfig c;
  c.datasets.push_back({"hypercube", synth::default_acceptance_mixture(), std::nullopt});
  NoiseAxisConfig su;
  su.model = NoiseModel::kUniform;
  su.rates = {0.0, 0.1, 0.2, 0.4};
  su.seed = 17;
  c.noise.push_back(su);
  c.architectures.push_back({"mlp", {64, 64}});
  c.seeds = {0, 1, 2};
  c.training.epochs = 60;
  c.training.learning_rate = 0.05;
  c.training.batch_size = 64;
  c.training.momentum = 0.9;
  c.checkpoints = {"early", "last"};
  c.label_sources = {detect::LabelSource::kTrain, detect::LabelSource::kVal};
  for (const auto& m : detect::benchmark_methods()) c.detectors.push_back({m, nlohmann::json::object()});
  c.aso = {{"mds", "msp"}, {"knn", "msp"}, {"gram", "msp"}};
  c.output = "runs/acceptance";
  return c;
}

}  // namespace noisyood::bench
