#include "hocrf/policy.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <random>

#include "hocrf/errors.hpp"

namespace hocrf {

PolicyParams PolicyParams::zeros(const PolicyShape& shape) {
  if (shape.rounds < 0 || shape.embed_dim < 1 || shape.num_labels < 1 || shape.feature_dim < 0)
    throw ShapeError("invalid policy shape");
  PolicyParams params;
  params.shape = shape;
  const int p = shape.embed_dim;
  for (int k = 0; k < shape.rounds; ++k)
    params.rounds.push_back({Tensor(p, 1), Tensor(p, shape.num_labels),
                             Tensor(p, shape.feature_dim), Tensor(p, p)});
  params.output = Tensor(shape.num_labels, p);
  return params;
}

PolicyParams PolicyParams::initialize(const PolicyShape& shape, std::uint64_t seed) {
  PolicyParams params = zeros(shape);
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(shape.embed_dim));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (auto& [name, t] : params.tensors())
    for (double& v : t->data) v = uniform(rng);
  return params;
}

std::vector<std::pair<std::string, Tensor*>> PolicyParams::tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t k = 0; k < rounds.size(); ++k) {
    const std::string prefix = "round" + std::to_string(k) + ".";
    out.emplace_back(prefix + "node_tag", &rounds[k].node_tag);
    out.emplace_back(prefix + "label", &rounds[k].label);
    out.emplace_back(prefix + "features", &rounds[k].features);
    out.emplace_back(prefix + "neighbors", &rounds[k].neighbors);
  }
  out.emplace_back("output", &output);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> PolicyParams::tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& [name, t] : const_cast<PolicyParams*>(this)->tensors()) out.emplace_back(name, t);
  return out;
}

std::size_t PolicyParams::num_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += t->data.size();
  return n;
}

void PolicyParams::set_zero() {
  for (auto& [name, t] : tensors()) std::fill(t->data.begin(), t->data.end(), 0.0);
}

void PolicyParams::add_scaled(const PolicyParams& other, double scale) {
  if (!(shape == other.shape)) throw ShapeError("add_scaled: shape mismatch");
  auto dst = tensors();
  const auto src = other.tensors();
  for (std::size_t t = 0; t < dst.size(); ++t)
    for (std::size_t i = 0; i < dst[t].second->data.size(); ++i)
      dst[t].second->data[i] += scale * src[t].second->data[i];
}

bool PolicyParams::same_values(const PolicyParams& other) const {
  return shape == other.shape && rounds == other.rounds && output == other.output;
}

void check_compatible(const PolicyShape& shape, const CrfInstance& instance) {
  if (shape.num_labels != instance.num_labels())
    throw ShapeError("policy expects " + std::to_string(shape.num_labels) +
                     " labels, instance has " + std::to_string(instance.num_labels()));
  if (shape.feature_dim != instance.feature_dim())
    throw ShapeError("policy expects feature dimension " + std::to_string(shape.feature_dim) +
                     ", instance has " + std::to_string(instance.feature_dim()));
}

OptimizerState OptimizerState::create(const PolicyShape& shape, AdamConfig config) {
  return {config, 0, PolicyParams::zeros(shape), PolicyParams::zeros(shape)};
}

void optimizer_step(OptimizerState& state, PolicyParams& params, const PolicyParams& grads) {
  if (!(params.shape == grads.shape) || !(params.shape == state.first_moment.shape))
    throw ShapeError("optimizer_step: shape mismatch");
  for (const auto& [name, t] : grads.tensors())
    for (double g : t->data)
      if (!std::isfinite(g)) throw TrainingError("non-finite gradient in tensor '" + name + "'");

  const AdamConfig& c = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  auto p = params.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  const auto g = grads.tensors();
  for (std::size_t t = 0; t < p.size(); ++t) {
    auto& pd = p[t].second->data;
    auto& md = m[t].second->data;
    auto& vd = v[t].second->data;
    const auto& gd = g[t].second->data;
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * gd[i];
      vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * gd[i] * gd[i];
      const double mhat = md[i] / correction1;
      const double vhat = vd[i] / correction2;
      pd[i] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
  ++params.revision;
}

// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

json tensors_to_json(const PolicyParams& params) {
  json out = json::object();
  for (const auto& [name, t] : params.tensors())
    out[name] = {{"rows", t->rows}, {"cols", t->cols}, {"data", t->data}};
  return out;
}

void tensors_from_json(const json& j, PolicyParams& params) {
  std::size_t expected = 0;
  for (auto& [name, t] : params.tensors()) {
    ++expected;
    if (!j.contains(name)) throw ParseError(1, name, "missing tensor");
    const json& e = j.at(name);
    if (e.at("rows").get<int>() != t->rows || e.at("cols").get<int>() != t->cols)
      throw ShapeError("tensor '" + name + "' has unexpected shape");
    t->data = e.at("data").get<std::vector<double>>();
    if (t->data.size() != static_cast<std::size_t>(t->rows) * t->cols)
      throw ShapeError("tensor '" + name + "' has wrong element count");
  }
  if (j.size() != expected) throw ParseError(1, "tensors", "unexpected tensor present");
}

}  // namespace

void save_params(std::ostream& out, const PolicyParams& params, const OptimizerState* optimizer) {
  json j = {{"format", "hocrf-policy"},
            {"version", kPolicyFileVersion},
            {"rounds", params.shape.rounds},
            {"embed_dim", params.shape.embed_dim},
            {"num_labels", params.shape.num_labels},
            {"feature_dim", params.shape.feature_dim},
            {"tensors", tensors_to_json(params)}};
  if (optimizer != nullptr) {
    j["optimizer"] = {{"step", optimizer->step},
                      {"learning_rate", optimizer->config.learning_rate},
                      {"beta1", optimizer->config.beta1},
                      {"beta2", optimizer->config.beta2},
                      {"epsilon", optimizer->config.epsilon},
                      {"first_moment", tensors_to_json(optimizer->first_moment)},
                      {"second_moment", tensors_to_json(optimizer->second_moment)}};
  }
  out << j.dump() << '\n';
}

PolicyParams load_params(std::istream& in, OptimizerState* optimizer) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(1, "<document>", e.what());
  }
  try {
    if (j.value("format", std::string()) != "hocrf-policy")
      throw ParseError(1, "format", "not a policy parameter file");
    if (!j.contains("version") || j.at("version").get<int>() != kPolicyFileVersion)
      throw ParseError(1, "version", "unsupported policy file version");
    for (const auto& [key, value] : j.items()) {
      static const std::set<std::string> known = {"format",     "version",     "rounds",
                                                  "embed_dim",  "num_labels",  "feature_dim",
                                                  "tensors",    "optimizer"};
      if (!known.count(key)) throw ParseError(1, key, "unknown field");
    }
    PolicyShape shape{j.at("rounds").get<int>(), j.at("embed_dim").get<int>(),
                      j.at("num_labels").get<int>(), j.at("feature_dim").get<int>()};
    PolicyParams params = PolicyParams::zeros(shape);
    tensors_from_json(j.at("tensors"), params);
    if (optimizer != nullptr) {
      *optimizer = OptimizerState::create(shape);
      if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        optimizer->step = o.at("step").get<std::int64_t>();
        optimizer->config = {o.at("learning_rate").get<double>(), o.at("beta1").get<double>(),
                             o.at("beta2").get<double>(), o.at("epsilon").get<double>()};
        tensors_from_json(o.at("first_moment"), optimizer->first_moment);
        tensors_from_json(o.at("second_moment"), optimizer->second_moment);
      }
    }
    return params;
  } catch (const json::exception& e) {
    throw ParseError(1, "policy", e.what());
  }
}

void save_params_file(const std::string& path, const PolicyParams& params,
                      const OptimizerState* optimizer) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_params(out, params, optimizer);
}

PolicyParams load_params_file(const std::string& path, OptimizerState* optimizer) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return load_params(in, optimizer);
}

}  // namespace hocrf
