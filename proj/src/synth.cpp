#include "noisyood/synth.hpp"

#include <cmath>

#include "noisyood/error.hpp"
#include "noisyood/rng.hpp"

namespace noisyood::synth {

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    rows.push_back(std::vector<double>(m.row(i).data(), m.row(i).data() + m.cols()));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ConfigError("ragged matrix in mixture spec");
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
  }
  return m;
}

nlohmann::json source_to_json(const OodSource& s) {
  nlohmann::json j = {{"name", s.name}, {"means", matrix_to_json(s.means)}};
  if (s.sigma) j["sigma"] = *s.sigma;
  return j;
}

OodSource source_from_json(const nlohmann::json& j) {
  OodSource s;
  s.name = j.at("name").get<std::string>();
  s.means = matrix_from_json(j.at("means"));
  if (j.contains("sigma")) s.sigma = j["sigma"].get<double>();
  return s;
}

// Draws n rows from the equal-weight mixture; returns features and component ids.
std::pair<Matrix, Labels> draw(const Matrix& means, double sigma, int n, Philox rng) {
  Matrix x(n, means.cols());
  Labels component(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto c = static_cast<int32_t>(rng.below(static_cast<uint64_t>(means.rows())));
    component[static_cast<std::size_t>(i)] = c;
    for (Eigen::Index k = 0; k < means.cols(); ++k) x(i, k) = means(c, k) + sigma * rng.normal();
  }
  return {std::move(x), std::move(component)};
}

TensorBundle id_bundle(const std::string& name, const Matrix& means, double sigma, int n, const Philox& rng) {
  auto [x, y] = draw(means, sigma, n, rng);
  TensorBundle b;
  b.name = name;
  b.tensors.emplace("feat", Tensor::from_matrix(x));
  b.tensors.emplace("label", Tensor::from_labels(y));
  return b;
}

TensorBundle ood_bundle(const OodSource& source, double sigma, int n, const Philox& rng) {
  auto [x, component] = draw(source.means, source.sigma.value_or(sigma), n, rng);
  TensorBundle b;
  b.name = source.name;
  b.tensors.emplace("feat", Tensor::from_matrix(x));
  return b;
}

}  // namespace

void MixtureSpec::validate() const {
  if (classes < 2) throw ValidationError("mixture needs at least two classes");
  if (dims < 1) throw ValidationError("mixture needs dims >= 1");
  if (means.rows() != classes || means.cols() != dims) throw ValidationError("mixture means must be classes x dims");
  if (!(sigma >= 0.0)) throw ValidationError("mixture sigma must be non-negative");
  for (int a = 0; a < classes; ++a) {
    for (int b = a + 1; b < classes; ++b) {
      if (means.row(a) == means.row(b)) {
        throw ValidationError("class means " + std::to_string(a) + " and " + std::to_string(b) + " coincide");
      }
    }
  }
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ValidationError("mixture splits must be non-empty");
  auto check_source = [&](const OodSource& s) {
    if (s.name.empty()) throw ValidationError("OOD source needs a name");
    if (s.means.rows() < 1 || s.means.cols() != dims) {
      throw ValidationError("OOD source '" + s.name + "' means must be k x dims");
    }
  };
  for (const auto& s : ood) check_source(s);
  if (ood_val) check_source(*ood_val);
  if (!ood.empty() && n_ood < 1) throw ValidationError("n_ood must be positive when OOD sources are configured");
}

nlohmann::json MixtureSpec::to_json() const {
  nlohmann::json j = {{"dims", dims},       {"classes", classes}, {"means", matrix_to_json(means)},
                      {"sigma", sigma},     {"n_train", n_train}, {"n_val", n_val},
                      {"n_test", n_test},   {"n_ood", n_ood},     {"n_ood_val", n_ood_val},
                      {"seed", seed}};
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& s : ood) sources.push_back(source_to_json(s));
  j["ood"] = std::move(sources);
  if (ood_val) j["ood_val"] = source_to_json(*ood_val);
  return j;
}

MixtureSpec MixtureSpec::from_json(const nlohmann::json& j) {
  MixtureSpec s;
  s.dims = j.at("dims").get<int>();
  s.classes = j.at("classes").get<int>();
  s.means = matrix_from_json(j.at("means"));
  s.sigma = j.at("sigma").get<double>();
  s.n_train = j.at("n_train").get<int>();
  s.n_val = j.at("n_val").get<int>();
  s.n_test = j.at("n_test").get<int>();
  s.n_ood = j.value("n_ood", 0);
  s.n_ood_val = j.value("n_ood_val", 0);
  s.seed = j.value("seed", uint64_t{0});
  for (const auto& src : j.value("ood", nlohmann::json::array())) s.ood.push_back(source_from_json(src));
  if (j.contains("ood_val")) s.ood_val = source_from_json(j["ood_val"]);
  s.validate();
  return s;
}

MixtureSpec hypercube_mixture(const HypercubeOptions& o) {
  if (o.cube_dims < 1 || o.cube_dims >= o.dims) throw ValidationError("cube_dims must lie in [1, dims)");
  MixtureSpec spec;
  spec.dims = o.dims;
  spec.classes = 1 << o.cube_dims;
  spec.sigma = o.sigma;
  spec.n_train = o.n_train;
  spec.n_val = o.n_val;
  spec.n_test = o.n_test;
  spec.n_ood = o.n_ood;
  spec.n_ood_val = o.n_ood_val;
  spec.seed = o.seed;

  spec.means = Matrix::Zero(spec.classes, o.dims);
  for (int c = 0; c < spec.classes; ++c) {
    for (int k = 0; k < o.cube_dims; ++k) spec.means(c, k) = ((c >> k) & 1) ? o.scale : -o.scale;
  }

  // Off-cube unit directions, fixed by the seed.
  Philox rng = Philox(o.seed).split("ood-directions");
  auto direction = [&]() {
    Vector u = Vector::Zero(o.dims);
    for (int k = o.cube_dims; k < o.dims; ++k) u[k] = rng.normal();
    return Vector(u / u.norm());
  };
  // Anchor points inside the cube (in units of scale) that each OOD source is
  // displaced from: the centre, a face centre and a corner.
  auto make_source = [&](const std::string& name, const std::vector<std::vector<double>>& anchors) {
    OodSource s;
    s.name = name;
    s.means = Matrix::Zero(static_cast<Eigen::Index>(anchors.size()), o.dims);
    const Vector u = direction();
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      for (int k = 0; k < o.cube_dims; ++k) {
        s.means(static_cast<Eigen::Index>(a), k) = o.scale * anchors[a][static_cast<std::size_t>(k) % anchors[a].size()];
      }
      s.means.row(static_cast<Eigen::Index>(a)) += o.ood_shift * u.transpose();
    }
    return s;
  };
  spec.ood.push_back(make_source("centre", {{0.0}}));
  spec.ood.push_back(make_source("face", {{1.0, 0.0, 0.0}}));
  spec.ood.push_back(make_source("corner", {{1.0, 1.0, 1.0}}));
  if (o.n_ood_val > 0) spec.ood_val = make_source("ood_val", {{0.0, -1.0, 0.0}, {-1.0, -1.0, -1.0}});
  spec.validate();
  return spec;
}

MixtureSpec default_acceptance_mixture(uint64_t seed) {
  HypercubeOptions o;
  o.seed = seed;
  return hypercube_mixture(o);
}

double hypercube_bayes_accuracy(double scale, double sigma, int cube_dims) {
  if (sigma == 0.0) return 1.0;
  const double phi = 0.5 * std::erfc(-(scale / sigma) / std::sqrt(2.0));
  return std::pow(phi, cube_dims);
}

SplitSet generate(const MixtureSpec& spec) {
  spec.validate();
  const Philox root(spec.seed);
  SplitSet split;
  split.train = id_bundle("train", spec.means, spec.sigma, spec.n_train, root.split("train"));
  split.val = id_bundle("val", spec.means, spec.sigma, spec.n_val, root.split("val"));
  split.test = id_bundle("test", spec.means, spec.sigma, spec.n_test, root.split("test"));
  for (const auto& source : spec.ood) {
    split.ood_sets.push_back(ood_bundle(source, spec.sigma, spec.n_ood, root.split("ood").split(source.name)));
  }
  if (spec.ood_val && spec.n_ood_val > 0) {
    split.ood_val = ood_bundle(*spec.ood_val, spec.sigma, spec.n_ood_val, root.split("ood_val"));
  }
  split.validate();
  return split;
}

}  // namespace noisyood::synth
