#include "gfmpath/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gfmpath {

double path_cost(const TransitionPath& path, const VelocityModel& velocity,
                 const PotentialSurface& surface) {
  if (path.size() < 2) throw ContractError("path_cost: path needs at least two states");
  const auto n = path.size();
  Mat inputs(velocity.dim() + 1, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    inputs.col(static_cast<Eigen::Index>(i)).head(velocity.dim()) = path.states[i];
    inputs(velocity.dim(), static_cast<Eigen::Index>(i)) = path.times[i];
  }
  const Mat v = velocity.net.forward(inputs);

  std::vector<double> integrand(n);
  for (std::size_t i = 0; i < n; ++i) {
    integrand[i] = 0.5 * v.col(static_cast<Eigen::Index>(i)).squaredNorm() + surface.energy(path.states[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    total += 0.5 * (path.times[i + 1] - path.times[i]) * (integrand[i] + integrand[i + 1]);
  }
  return total;
}

std::vector<double> normalize_weights(const std::vector<double>& costs) {
  if (costs.empty()) return {};
  for (double c : costs) {
    if (!std::isfinite(c)) throw ContractError("normalize_weights: non-finite cost");
  }
  const double lowest = *std::min_element(costs.begin(), costs.end());
  std::vector<double> w(costs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    w[i] = std::exp(-(costs[i] - lowest));
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ContractError("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(TransitionPath path) {
  if (!std::isfinite(path.weight)) throw ContractError("ReplayBuffer::push: path has no weight");
  if (entries_.size() == capacity_) {
    if (path.weight <= entries_.back().weight) {
      ++evictions_;
      return;
    }
    entries_.pop_back();
    ++evictions_;
  }
  // Insert after existing entries of equal weight so older paths keep their rank.
  const auto pos = std::upper_bound(entries_.begin(), entries_.end(), path.weight,
                                    [](double w, const TransitionPath& e) { return w > e.weight; });
  entries_.insert(pos, std::move(path));
}

std::size_t ReplayBuffer::sample_index(Rng& rng) const {
  if (entries_.empty()) throw ContractError("ReplayBuffer::sample_index on an empty buffer");
  double total = 0.0;
  for (const auto& e : entries_) total += e.weight;
  if (!(total > 0.0)) return rng.index(entries_.size());
  double target = rng.uniform() * total;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (target < entries_[i].weight) return i;
    target -= entries_[i].weight;
  }
  // Rounding: fall back to the last entry with positive weight.
  for (std::size_t i = entries_.size(); i-- > 0;) {
    if (entries_[i].weight > 0.0) return i;
  }
  return 0;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"hidden", hidden},
          {"epochs", epochs},
          {"pretrain_epochs", pretrain_epochs},
          {"batch", batch},
          {"iterations_per_epoch", iterations_per_epoch},
          {"time_samples", time_samples},
          {"lr_spline", lr_spline},
          {"lr_flow", lr_flow},
          {"lr_replay", lr_replay},
          {"zero_init_spline", zero_init_spline},
          {"resample_rounds", resample_rounds},
          {"resample_paths", resample_paths},
          {"buffer_capacity", buffer_capacity},
          {"train_ode_steps", train_ode.steps},
          {"train_ode_method", to_string(train_ode.method)},
          {"replay_window", replay_window},
          {"replay_tolerance", replay_tolerance},
          {"replay_max_steps", replay_max_steps},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.epochs = j.value("epochs", c.epochs);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.batch = j.value("batch", c.batch);
  c.iterations_per_epoch = j.value("iterations_per_epoch", c.iterations_per_epoch);
  c.time_samples = j.value("time_samples", c.time_samples);
  c.lr_spline = j.value("lr_spline", c.lr_spline);
  c.lr_flow = j.value("lr_flow", c.lr_flow);
  c.lr_replay = j.value("lr_replay", c.lr_replay);
  c.zero_init_spline = j.value("zero_init_spline", c.zero_init_spline);
  c.resample_rounds = j.value("resample_rounds", c.resample_rounds);
  c.resample_paths = j.value("resample_paths", c.resample_paths);
  c.buffer_capacity = j.value("buffer_capacity", c.buffer_capacity);
  c.train_ode.steps = j.value("train_ode_steps", c.train_ode.steps);
  c.train_ode.method = ode_method_from_string(j.value("train_ode_method", to_string(c.train_ode.method)));
  c.replay_window = j.value("replay_window", c.replay_window);
  c.replay_tolerance = j.value("replay_tolerance", c.replay_tolerance);
  c.replay_max_steps = j.value("replay_max_steps", c.replay_max_steps);
  c.seed = j.value("seed", c.seed);
  return c;
}

nlohmann::json TrainLogEntry::to_json() const {
  return {{"phase", phase},
          {"step", step},
          {"loss_spline", loss_spline},
          {"loss_flow", loss_flow},
          {"u_evaluations", u_evaluations}};
}

namespace {

void validate(const TrainConfig& c) {
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.batch == 0) throw ConfigError("batch must be >= 1");
  if (c.time_samples < 1) throw ConfigError("time_samples must be >= 1");
  if (c.resample_rounds < 0) throw ConfigError("resample_rounds must be >= 0");
  if (c.resample_paths == 0) throw ConfigError("resample_paths must be >= 1");
  if (c.replay_window < 1) throw ConfigError("replay_window must be >= 1");
  if (!(c.lr_spline > 0.0) || !(c.lr_flow > 0.0)) throw ConfigError("learning rates must be > 0");
}

std::uint64_t evaluations(const CountingSurface* surface) {
  return surface ? surface->evaluations() : 0;
}

void check_finite(const Mlp& net, const std::string& what, long step) {
  if (!net.parameters().allFinite()) throw DivergenceError(what + " parameters became non-finite", step);
}

}  // namespace

void resample_and_replay(const TrainConfig& config, const EndpointDataset& dataset,
                         const Coupling& coupling, const CountingSurface& true_surface,
                         TrainResult& state, Rng& rng, const EpochHook& hook) {
  const std::uint64_t base = true_surface.evaluations() - state.u_evaluations;
  const double lr_replay = config.lr_replay > 0.0 ? config.lr_replay : config.lr_spline;
  Adam replay_optimizer(static_cast<std::size_t>(state.spline.net.n_parameters()), {.lr = lr_replay});
  long step = 0;
  for (int round = 0; round < config.resample_rounds; ++round) {
    std::vector<Vec> starts;
    starts.reserve(config.resample_paths);
    for (std::size_t i = 0; i < config.resample_paths; ++i) {
      starts.push_back(dataset.pool_a[rng.index(dataset.pool_a.size())]);
    }
    auto paths = integrate_paths(state.velocity, starts, config.train_ode.steps, config.train_ode.method);
    std::vector<double> costs;
    costs.reserve(paths.size());
    for (auto& p : paths) {
      p.raw_cost = path_cost(p, state.velocity, true_surface);
      costs.push_back(p.raw_cost);
    }
    const auto weights = normalize_weights(costs);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      paths[i].weight = weights[i];
      state.buffer.push(std::move(paths[i]));
    }
    state.u_evaluations = true_surface.evaluations() - base;

    std::vector<double> history;
    const auto window = static_cast<std::size_t>(config.replay_window);
    for (int inner = 0; inner < config.replay_max_steps; ++inner, ++step) {
      const auto& reference = state.buffer[state.buffer.sample_index(rng)];
      const auto pairs = coupling.sample(dataset, config.batch, rng, &state.velocity);
      const auto batch = make_batch(pairs, config.time_samples, rng);
      const auto replay = replay_loss(state.spline, reference, batch);
      const auto flow = flow_loss(state.velocity, state.spline, batch);
      replay_optimizer.step(state.spline.net.parameters(), replay.grad);
      state.flow_optimizer.step(state.velocity.net.parameters(), flow.grad);
      check_finite(state.spline.net, "spline", step);
      check_finite(state.velocity.net, "velocity", step);
      state.log.push_back({"replay", step, replay.value, flow.value, state.u_evaluations});

      history.push_back(replay.value);
      if (history.size() >= 2 * window) {
        const auto end = history.end();
        const double previous = std::accumulate(end - 2 * static_cast<std::ptrdiff_t>(window),
                                                end - static_cast<std::ptrdiff_t>(window), 0.0);
        const double latest = std::accumulate(end - static_cast<std::ptrdiff_t>(window), end, 0.0);
        const double improvement = (previous - latest) / std::max(std::abs(previous), 1e-300);
        if (improvement < config.replay_tolerance) break;
      }
    }
    if (hook) hook(state, "replay", round);
  }
}

TrainResult train(const TrainConfig& config, const EndpointDataset& dataset,
                  const SurrogatePotential& potential, const Coupling& coupling,
                  const CountingSurface* true_surface, const EpochHook& hook) {
  validate(config);
  dataset.validate();
  // Resampling refines trained models; a zero-epoch run leaves them untouched.
  const bool resample = config.resample_rounds > 0 && config.epochs > 0;
  if (resample && true_surface == nullptr) {
    throw ConfigError("resampling needs the true surface");
  }
  const int dim = static_cast<int>(dataset.dim());
  const std::uint64_t u_start = evaluations(true_surface);

  Rng rng(config.seed);
  Rng init_rng(rng.fork());
  TrainResult state{SplineModel::create(dim, config.hidden, init_rng, config.zero_init_spline),
                    VelocityModel::create(dim, config.hidden, init_rng),
                    ReplayBuffer(config.buffer_capacity),
                    {},
                    {},
                    {},
                    0};
  state.spline_optimizer = Adam(static_cast<std::size_t>(state.spline.net.n_parameters()), {.lr = config.lr_spline});
  state.flow_optimizer = Adam(static_cast<std::size_t>(state.velocity.net.n_parameters()), {.lr = config.lr_flow});

  const int iterations =
      config.iterations_per_epoch > 0
          ? config.iterations_per_epoch
          : static_cast<int>((dataset.pool_a.size() + dataset.pool_b.size() + config.batch - 1) /
                             config.batch);
  const int pretrain_epochs = config.pretrain_epochs >= 0 ? config.pretrain_epochs : config.epochs;

  // Straight-line targets: a spline whose network is identically zero.
  SplineModel straight{Mlp(state.spline.net.layer_dims(), Activation::selu)};
  const Coupling initial = coupling.kind() == CouplingKind::reflow
                               ? Coupling(CouplingKind::product, coupling.batch(), coupling.ode())
                               : coupling;
  long step = 0;
  for (int epoch = 0; epoch < pretrain_epochs; ++epoch) {
    for (int it = 0; it < iterations; ++it, ++step) {
      const auto pairs = initial.sample(dataset, config.batch, rng);
      const auto batch = make_batch(pairs, config.time_samples, rng);
      const auto flow = flow_loss(state.velocity, straight, batch);
      state.flow_optimizer.step(state.velocity.net.parameters(), flow.grad);
      check_finite(state.velocity.net, "velocity", step);
      state.log.push_back({"pretrain", step, 0.0, flow.value, evaluations(true_surface) - u_start});
    }
    if (hook) hook(state, "pretrain", epoch);
  }

  step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (int it = 0; it < iterations; ++it, ++step) {
      const auto pairs = coupling.sample(dataset, config.batch, rng, &state.velocity);
      const auto batch = make_batch(pairs, config.time_samples, rng);
      const auto spline = spline_loss(state.spline, batch, potential);
      const auto flow = flow_loss(state.velocity, state.spline, batch);
      state.spline_optimizer.step(state.spline.net.parameters(), spline.grad);
      state.flow_optimizer.step(state.velocity.net.parameters(), flow.grad);
      check_finite(state.spline.net, "spline", step);
      check_finite(state.velocity.net, "velocity", step);
      state.log.push_back({"train", step, spline.value, flow.value, evaluations(true_surface) - u_start});
    }
    if (hook) hook(state, "train", epoch);
  }

  if (resample) {
    resample_and_replay(config, dataset, coupling, *true_surface, state, rng, hook);
  }
  state.u_evaluations = evaluations(true_surface) - u_start;
  return state;
}

}  // namespace gfmpath
