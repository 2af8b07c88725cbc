#include "gfmpath/pipeline.hpp"

#include <fstream>
#include <sstream>

namespace gfmpath {

RunConfig::RunConfig() {
  potential.metric.fit.seed = 3;
  potential.latent.seed = 3;
  train.seed = 11;
  baseline.idpp.seed = 2;
}

namespace {

void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& where) {
  if (!given.is_object()) {
    throw ConfigError("'" + (where.empty() ? std::string("config") : where) + "' must be an object");
  }
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (known.at(key).is_object()) reject_unknown(value, known.at(key), path);
  }
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  const auto& m = potential.metric;
  const auto& a = potential.latent;
  return {
      {"simulate",
       {{"surface", simulate.surface},
        {"dim", simulate.dim},
        {"start_a", simulate.start_a},
        {"start_b", simulate.start_b},
        {"steps", simulate.langevin.n_steps},
        {"dt", simulate.langevin.dt},
        {"xi", simulate.langevin.xi},
        {"seed", simulate.langevin.seed},
        {"samples", simulate.samples}}},
      {"potential",
       {{"kind", potential.kind},
        {"metric",
         {{"clusters", m.clusters},
          {"kappa", m.kappa},
          {"epsilon", m.epsilon},
          {"bandwidth_rule", to_string(m.rule)},
          {"epochs", m.fit.epochs},
          {"lr", m.fit.lr},
          {"batch", m.fit.batch},
          {"seed", m.fit.seed}}},
        {"latent",
         {{"latent_dim", a.latent_dim},
          {"hidden", a.hidden},
          {"activation", to_string(a.activation)},
          {"interpolation", to_string(a.interpolation)},
          {"epochs", a.epochs},
          {"lr", a.lr},
          {"batch", a.batch},
          {"seed", a.seed}}}}},
      {"coupling",
       {{"kind", to_string(coupling.kind)},
        {"batch", coupling.batch},
        {"ode_steps", coupling.ode.steps},
        {"ode_method", to_string(coupling.ode.method)}}},
      {"train", train.to_json()},
      {"sample",
       {{"n_paths", sample.n_paths},
        {"ode_steps", sample.ode_steps},
        {"method", to_string(sample.method)},
        {"seed", sample.seed}}},
      {"evaluate", {{"top_k", evaluate.top_k}, {"svg", evaluate.svg}, {"svg_paths", evaluate.svg_paths}}},
      {"baseline",
       {{"kind", baseline.kind},
        {"coupling", to_string(baseline.coupling)},
        {"n_paths", baseline.n_paths},
        {"n_points", baseline.n_points},
        {"seed", baseline.seed},
        {"system", baseline.system},
        {"n_particles", baseline.layout.n_particles},
        {"spatial_dim", baseline.layout.spatial_dim},
        {"idpp_pairs", baseline.idpp_pairs},
        {"idpp_jitter", baseline.idpp_jitter},
        {"idpp",
         {{"hidden", baseline.idpp.hidden},
          {"epochs", baseline.idpp.epochs},
          {"lr", baseline.idpp.lr},
          {"batch", baseline.idpp.batch},
          {"time_samples", baseline.idpp.time_samples},
          {"seed", baseline.idpp.seed}}}}},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& user) {
  const RunConfig defaults;
  nlohmann::json j = defaults.to_json();
  reject_unknown(user, j, "");
  j.merge_patch(user);
  try {
    RunConfig c = defaults;
    const auto& s = j.at("simulate");
    c.simulate.surface = s.at("surface").get<std::string>();
    c.simulate.dim = s.at("dim").get<std::size_t>();
    c.simulate.start_a = s.at("start_a").get<std::string>();
    c.simulate.start_b = s.at("start_b").get<std::string>();
    c.simulate.langevin.n_steps = s.at("steps").get<long>();
    c.simulate.langevin.dt = s.at("dt").get<double>();
    c.simulate.langevin.xi = s.at("xi").get<double>();
    c.simulate.langevin.seed = s.at("seed").get<std::uint64_t>();
    c.simulate.samples = s.at("samples").get<std::size_t>();

    const auto& p = j.at("potential");
    c.potential.kind = p.at("kind").get<std::string>();
    if (c.potential.kind != "metric" && c.potential.kind != "latent") {
      throw ConfigError("potential.kind must be 'metric' or 'latent'");
    }
    const auto& m = p.at("metric");
    c.potential.metric.clusters = m.at("clusters").get<std::size_t>();
    c.potential.metric.kappa = m.at("kappa").get<double>();
    c.potential.metric.epsilon = m.at("epsilon").get<double>();
    c.potential.metric.rule = bandwidth_rule_from_string(m.at("bandwidth_rule").get<std::string>());
    c.potential.metric.fit.epochs = m.at("epochs").get<int>();
    c.potential.metric.fit.lr = m.at("lr").get<double>();
    c.potential.metric.fit.batch = m.at("batch").get<std::size_t>();
    c.potential.metric.fit.seed = m.at("seed").get<std::uint64_t>();
    const auto& a = p.at("latent");
    c.potential.latent.latent_dim = a.at("latent_dim").get<int>();
    c.potential.latent.hidden = a.at("hidden").get<std::vector<int>>();
    c.potential.latent.activation = activation_from_string(a.at("activation").get<std::string>());
    c.potential.latent.interpolation = interpolation_from_string(a.at("interpolation").get<std::string>());
    c.potential.latent.epochs = a.at("epochs").get<int>();
    c.potential.latent.lr = a.at("lr").get<double>();
    c.potential.latent.batch = a.at("batch").get<std::size_t>();
    c.potential.latent.seed = a.at("seed").get<std::uint64_t>();

    const auto& cp = j.at("coupling");
    c.coupling.kind = coupling_kind_from_string(cp.at("kind").get<std::string>());
    c.coupling.batch = cp.at("batch").get<std::size_t>();
    c.coupling.ode.steps = cp.at("ode_steps").get<int>();
    c.coupling.ode.method = ode_method_from_string(cp.at("ode_method").get<std::string>());

    c.train = TrainConfig::from_json(j.at("train"));

    const auto& sm = j.at("sample");
    c.sample.n_paths = sm.at("n_paths").get<std::size_t>();
    c.sample.ode_steps = sm.at("ode_steps").get<int>();
    c.sample.method = ode_method_from_string(sm.at("method").get<std::string>());
    c.sample.seed = sm.at("seed").get<std::uint64_t>();

    const auto& ev = j.at("evaluate");
    c.evaluate.top_k = ev.at("top_k").get<std::size_t>();
    c.evaluate.svg = ev.at("svg").get<bool>();
    c.evaluate.svg_paths = ev.at("svg_paths").get<std::size_t>();

    const auto& b = j.at("baseline");
    c.baseline.kind = b.at("kind").get<std::string>();
    if (c.baseline.kind != "linear" && c.baseline.kind != "idpp") {
      throw ConfigError("baseline.kind must be 'linear' or 'idpp'");
    }
    c.baseline.coupling = coupling_kind_from_string(b.at("coupling").get<std::string>());
    c.baseline.n_paths = b.at("n_paths").get<std::size_t>();
    c.baseline.n_points = b.at("n_points").get<int>();
    c.baseline.seed = b.at("seed").get<std::uint64_t>();
    c.baseline.system = b.at("system").get<std::string>();
    c.baseline.layout.n_particles = b.at("n_particles").get<int>();
    c.baseline.layout.spatial_dim = b.at("spatial_dim").get<int>();
    c.baseline.idpp_pairs = b.at("idpp_pairs").get<std::size_t>();
    c.baseline.idpp_jitter = b.at("idpp_jitter").get<double>();
    const auto& id = b.at("idpp");
    c.baseline.idpp.hidden = id.at("hidden").get<std::vector<int>>();
    c.baseline.idpp.epochs = id.at("epochs").get<int>();
    c.baseline.idpp.lr = id.at("lr").get<double>();
    c.baseline.idpp.batch = id.at("batch").get<std::size_t>();
    c.baseline.idpp.time_samples = id.at("time_samples").get<int>();
    c.baseline.idpp.seed = id.at("seed").get<std::uint64_t>();

    c.simulate.langevin.validate();
    if (c.simulate.samples == 0) throw ConfigError("simulate.samples must be >= 1");
    if (c.sample.n_paths == 0 || c.sample.ode_steps < 1) {
      throw ConfigError("sample.n_paths and sample.ode_steps must be >= 1");
    }
    if (c.baseline.n_points < 2) throw ConfigError("baseline.n_points must be >= 2");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &config;
  std::stringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) *node = nlohmann::json::object();
    node = &(*node)[path[i]];
  }
  if (!node->is_object()) *node = nlohmann::json::object();
  (*node)[path.back()] = value;
}

std::shared_ptr<const PotentialSurface> surface_for(const SimulateSettings& s) {
  return make_surface(s.surface, s.dim);
}

Vec resolve_start(const std::string& spec, const PotentialSurface& surface) {
  if (spec.size() == 1 && spec[0] >= 'A' && spec[0] <= 'Z') {
    const auto registry = critical_points_for(surface);
    const auto index = static_cast<std::size_t>(spec[0] - 'A');
    if (index >= registry.minima.size()) {
      throw ConfigError("surface '" + surface.name() + "' has no registered minimum '" + spec + "'");
    }
    return registry.minima[index];
  }
  std::vector<double> coords;
  std::stringstream ss(spec);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      coords.push_back(std::stod(cell, &used));
      if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw ConfigError("start '" + spec + "' is neither a minimum label nor coordinates");
    }
  }
  if (coords.size() != surface.dim()) {
    throw ConfigError("start '" + spec + "' has " + std::to_string(coords.size()) +
                      " coordinates, surface dimension is " + std::to_string(surface.dim()));
  }
  return from_std(coords);
}

EndpointDataset run_simulate(const RunConfig& config, const CountingSurface& counted) {
  const auto& s = config.simulate;
  return build_dataset(counted, resolve_start(s.start_a, counted), resolve_start(s.start_b, counted),
                       s.langevin, s.samples);
}

std::shared_ptr<const SurrogatePotential> run_fit_potential(const RunConfig& config,
                                                            const EndpointDataset& dataset) {
  dataset.validate();
  const auto points = dataset.pooled();
  if (config.potential.kind == "latent") {
    return std::make_shared<LatentSurrogate>(train_autoencoder(points, config.potential.latent));
  }
  return std::make_shared<MetricSurrogate>(fit_metric(points, config.potential.metric));
}

TrainResult run_train(const RunConfig& config, const EndpointDataset& dataset,
                      const SurrogatePotential& potential, const CountingSurface* counted,
                      const EpochHook& hook) {
  return train(config.train, dataset, potential, config.coupling.make(), counted, hook);
}

std::vector<TransitionPath> run_sample(const RunConfig& config, const EndpointDataset& dataset,
                                       const VelocityModel& velocity) {
  dataset.validate();
  Rng rng(config.sample.seed);
  std::vector<Vec> starts;
  starts.reserve(config.sample.n_paths);
  for (std::size_t i = 0; i < config.sample.n_paths; ++i) {
    starts.push_back(dataset.pool_a[rng.index(dataset.pool_a.size())]);
  }
  return integrate_paths(velocity, starts, config.sample.ode_steps, config.sample.method);
}

BaselineOutcome run_baseline(const RunConfig& config, const EndpointDataset* dataset) {
  const auto& b = config.baseline;
  BaselineOutcome out;
  Rng rng(b.seed);
  if (b.kind == "linear") {
    if (dataset == nullptr) throw ConfigError("the linear baseline needs a dataset");
    const Coupling coupling(b.coupling == CouplingKind::reflow ? CouplingKind::product : b.coupling,
                            config.coupling.batch);
    for (const auto& p : coupling.sample(*dataset, b.n_paths, rng)) {
      out.paths.push_back(linear_path(p.x0, p.xT, b.n_points));
    }
    return out;
  }
  std::vector<EndpointPair> pairs;
  PairwiseDistanceConfig layout = b.layout;
  if (b.system == "tetramer") {
    auto system = rotating_tetramer(b.idpp_pairs, b.idpp_jitter, rng.fork());
    pairs = std::move(system.pairs);
    layout = system.layout;
  } else if (b.system == "dataset") {
    if (dataset == nullptr) throw ConfigError("baseline.system 'dataset' needs a dataset");
    if (static_cast<int>(dataset->dim()) != layout.state_dim()) {
      throw ConfigError("dataset dimension does not match baseline.n_particles x baseline.spatial_dim");
    }
    const Coupling coupling(b.coupling == CouplingKind::reflow ? CouplingKind::product : b.coupling,
                            config.coupling.batch);
    pairs = coupling.sample(*dataset, b.idpp_pairs, rng);
  } else {
    throw ConfigError("baseline.system must be 'tetramer' or 'dataset'");
  }
  auto fit = fit_idpp(pairs, layout, b.idpp);
  out.idpp_history = std::move(fit.history);
  for (const auto& p : pairs) out.paths.push_back(spline_path(fit.spline, p.x0, p.xT, b.n_points));
  return out;
}

PathSetReport run_evaluate(const RunConfig& config, const std::vector<TransitionPath>& paths,
                           const PotentialSurface& surface) {
  const auto selected =
      config.evaluate.top_k == 0 ? paths : select_top_k(paths, config.evaluate.top_k);
  return report(selected, surface, critical_points_for(surface));
}

}  // namespace gfmpath
