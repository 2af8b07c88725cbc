#include "gfmpath/baselines.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace gfmpath {

TransitionPath linear_path(const Vec& x0, const Vec& xT, int n_points) {
  if (n_points < 2) throw ContractError("linear_path: n_points must be >= 2");
  if (x0.size() != xT.size()) throw ContractError("linear_path: endpoint dimensions differ");
  TransitionPath path;
  path.times.reserve(static_cast<std::size_t>(n_points));
  path.states.reserve(static_cast<std::size_t>(n_points));
  for (int k = 0; k < n_points; ++k) {
    const double t = k + 1 == n_points ? 1.0 : static_cast<double>(k) / (n_points - 1);
    path.times.push_back(t);
    path.states.push_back((1.0 - t) * x0 + t * xT);
  }
  return path;
}

void PairwiseDistanceConfig::validate() const {
  if (n_particles < 2) throw ContractError("pairwise distances need at least two particles");
  if (spatial_dim < 1) throw ContractError("spatial_dim must be >= 1");
}

namespace {

void check_layout(const Vec& x, const PairwiseDistanceConfig& cfg) {
  cfg.validate();
  if (x.size() != cfg.state_dim()) {
    throw ContractError("state of length " + std::to_string(x.size()) + " does not match " +
                        std::to_string(cfg.n_particles) + " particles x " +
                        std::to_string(cfg.spatial_dim) + " coordinates");
  }
}

}  // namespace

Mat pairwise_distances(const Vec& x, const PairwiseDistanceConfig& cfg) {
  check_layout(x, cfg);
  const int n = cfg.n_particles;
  const int s = cfg.spatial_dim;
  Mat d = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      d(i, j) = d(j, i) = (x.segment(i * s, s) - x.segment(j * s, s)).norm();
    }
  }
  return d;
}

LossResult idpp_loss(const SplineModel& spline, const ConditionalBatch& batch,
                     const PairwiseDistanceConfig& cfg) {
  if (spline.dim() != cfg.state_dim()) throw ContractError("idpp_loss: spline dimension mismatch");
  const auto eval = evaluate_spline(spline, batch);
  const auto m = batch.size();
  const int n = cfg.n_particles;
  const int s = cfg.spatial_dim;
  const double scale = 1.0 / static_cast<double>(m);
  Mat grad_x = Mat::Zero(eval.x.rows(), m);
  double total = 0.0;
  for (Eigen::Index c = 0; c < m; ++c) {
    const Vec x = eval.x.col(c);
    const Mat d0 = pairwise_distances(batch.x0.col(c), cfg);
    const Mat dT = pairwise_distances(batch.xT.col(c), cfg);
    const double t = batch.t[c];
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const Vec diff = x.segment(i * s, s) - x.segment(j * s, s);
        const double dist = diff.norm();
        const double residual = dist - ((1.0 - t) * d0(i, j) + t * dT(i, j));
        total += residual * residual;
        // The distance is not differentiable at coincidence; take zero there.
        if (dist > 0.0) {
          const Vec g = (2.0 * scale * residual / dist) * diff;
          grad_x.col(c).segment(i * s, s) += g;
          grad_x.col(c).segment(j * s, s) -= g;
        }
      }
    }
  }
  LossResult result;
  result.value = total * scale;
  if (!std::isfinite(result.value)) throw DivergenceError("IDPP loss is non-finite", 0);
  result.grad = spline_parameter_gradient(spline, batch, grad_x, Mat::Zero(eval.v.rows(), m));
  return result;
}

IdppResult fit_idpp(const std::vector<EndpointPair>& pairs, const PairwiseDistanceConfig& cfg,
                    const IdppConfig& config) {
  cfg.validate();
  if (pairs.empty()) throw ContractError("fit_idpp: no pairs");
  if (config.batch == 0 || config.epochs < 0 || config.time_samples < 1) {
    throw ConfigError("fit_idpp: batch and time_samples must be positive, epochs non-negative");
  }
  Rng rng(config.seed);
  IdppResult result{SplineModel::create(cfg.state_dim(), config.hidden, rng), {}};
  Adam optimizer(static_cast<std::size_t>(result.spline.net.n_parameters()), {.lr = config.lr});

  // Fixed evaluation batch so the history is comparable across epochs.
  Rng eval_rng(rng.fork());
  const auto eval_batch = make_batch(pairs, config.time_samples, eval_rng);
  result.history.push_back(idpp_loss(result.spline, eval_batch, cfg).value);

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch);
      std::vector<EndpointPair> chunk;
      chunk.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) chunk.push_back(pairs[order[k]]);
      const auto loss = idpp_loss(result.spline, make_batch(chunk, config.time_samples, rng), cfg);
      optimizer.step(result.spline.net.parameters(), loss.grad);
    }
    result.history.push_back(idpp_loss(result.spline, eval_batch, cfg).value);
  }
  return result;
}

TransitionPath spline_path(const SplineModel& spline, const Vec& x0, const Vec& xT, int n_points) {
  if (n_points < 2) throw ContractError("spline_path: n_points must be >= 2");
  std::vector<double> times;
  for (int k = 0; k < n_points; ++k) {
    times.push_back(k + 1 == n_points ? 1.0 : static_cast<double>(k) / (n_points - 1));
  }
  const std::vector<EndpointPair> pairs(times.size(), EndpointPair{x0, xT});
  const auto eval = evaluate_spline(spline, make_batch(pairs, times));
  TransitionPath path;
  path.times = times;
  for (Eigen::Index c = 0; c < eval.x.cols(); ++c) path.states.push_back(eval.x.col(c));
  return path;
}

TransitionPath idpp_path(const Vec& x0, const Vec& xT, const PairwiseDistanceConfig& cfg,
                         const IdppConfig& config, int n_points) {
  check_layout(x0, cfg);
  check_layout(xT, cfg);
  const auto fit = fit_idpp({{x0, xT}}, cfg, config);
  return spline_path(fit.spline, x0, xT, n_points);
}

SyntheticSystem rotating_tetramer(std::size_t n_pairs, double jitter, std::uint64_t seed) {
  if (n_pairs == 0) throw ContractError("rotating_tetramer: n_pairs must be >= 1");
  // Off-axis so that no particle sits on the rotation axis.
  const double base[4][3] = {{1.0, 0.2, 0.0}, {-0.3, 1.1, 0.4}, {-0.8, -0.7, -0.3}, {0.4, -0.9, 0.8}};
  Vec start(12), end(12);
  // Just short of a half turn: at exactly pi the straight-line midpoint sits on
  // the axis, where the distance gradient has no radial component.
  const double angle = 0.9 * std::numbers::pi;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  for (int p = 0; p < 4; ++p) {
    const double x = base[p][0], y = base[p][1], z = base[p][2];
    start.segment<3>(3 * p) << x, y, z;
    end.segment<3>(3 * p) << c * x - s * y, s * x + c * y, z;
  }
  Rng rng(seed);
  SyntheticSystem system{{4, 3}, {}};
  system.pairs.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    system.pairs.push_back({start + jitter * rng.normal_vector(12), end + jitter * rng.normal_vector(12)});
  }
  return system;
}

}  // namespace gfmpath
