#include "gfmpath/flow.hpp"

#include <algorithm>
#include <cmath>

namespace gfmpath {

namespace {

std::vector<int> with_ends(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

Mat spline_input(const ConditionalBatch& batch) {
  const auto d = batch.x0.rows();
  Mat in(2 * d + 1, batch.size());
  in.topRows(d) = batch.x0;
  in.middleRows(d, d) = batch.xT;
  in.row(2 * d) = batch.t.transpose();
  return in;
}

Mat velocity_input(const Mat& x, const Vec& t) {
  Mat in(x.rows() + 1, x.cols());
  in.topRows(x.rows()) = x;
  in.row(x.rows()) = t.transpose();
  return in;
}

void check_batch(const SplineModel& spline, const ConditionalBatch& batch) {
  if (batch.x0.rows() != spline.dim() || batch.xT.rows() != spline.dim() ||
      batch.x0.cols() != batch.size() || batch.xT.cols() != batch.size()) {
    throw ContractError("conditional batch does not match the spline dimension");
  }
  if (batch.size() == 0) throw ContractError("empty conditional batch");
}

struct SplineForward {
  Mlp::JetTape tape;
  Mat nn, dnn;
  SplineEvaluation eval;
};

// x = (1-t) x0 + t xT + t(1-t) NN
// v = xT - x0 + t(1-t) dNN/dt + (1-2t) NN
SplineForward spline_forward(const SplineModel& spline, const ConditionalBatch& batch) {
  check_batch(spline, batch);
  SplineForward f;
  auto jet = spline.net.forward_jet(spline_input(batch), spline.time_index(), f.tape);
  f.nn = std::move(jet.value);
  f.dnn = std::move(jet.tangent);
  const Eigen::RowVectorXd t = batch.t.transpose();
  const Eigen::RowVectorXd bump = (t.array() * (1.0 - t.array())).matrix();
  const Eigen::RowVectorXd slope = (1.0 - 2.0 * t.array()).matrix();
  const Eigen::RowVectorXd rest = (1.0 - t.array()).matrix();
  // (1-t) x0 + t xT reproduces both endpoints bit-exactly.
  f.eval.x = batch.x0 * rest.asDiagonal() + batch.xT * t.asDiagonal() + f.nn * bump.asDiagonal();
  f.eval.v = (batch.xT - batch.x0) + f.dnn * bump.asDiagonal() + f.nn * slope.asDiagonal();
  return f;
}

// Chains dL/dx and dL/dv of the spline back into the network parameters.
Vec spline_backward(const SplineModel& spline, const ConditionalBatch& batch,
                    const SplineForward& f, const Mat& grad_x, const Mat& grad_v) {
  const Eigen::RowVectorXd t = batch.t.transpose();
  const Eigen::RowVectorXd bump = (t.array() * (1.0 - t.array())).matrix();
  const Eigen::RowVectorXd slope = (1.0 - 2.0 * t.array()).matrix();
  const Mat grad_nn = grad_x * bump.asDiagonal() + grad_v * slope.asDiagonal();
  const Mat grad_dnn = grad_v * bump.asDiagonal();
  Vec grad = Vec::Zero(spline.net.n_parameters());
  spline.net.backward_jet(f.tape, grad_nn, grad_dnn, grad);
  return grad;
}

}  // namespace

SplineModel SplineModel::create(int dim, const std::vector<int>& hidden, Rng& rng,
                                bool zero_output_layer) {
  return {Mlp::lecun_normal(with_ends(2 * dim + 1, hidden, dim), Activation::selu, rng,
                            zero_output_layer)};
}

VelocityModel VelocityModel::create(int dim, const std::vector<int>& hidden, Rng& rng) {
  return {Mlp::lecun_normal(with_ends(dim + 1, hidden, dim), Activation::selu, rng)};
}

Vec VelocityModel::operator()(const Vec& x, double t) const {
  return evaluate(Mat(x), t).col(0);
}

Mat VelocityModel::evaluate(const Mat& xs, double t) const {
  if (xs.rows() != dim()) throw ContractError("velocity field: state dimension mismatch");
  return net.forward(velocity_input(xs, Vec::Constant(xs.cols(), t)));
}

Vec spline_point(const SplineModel& spline, const Vec& x0, const Vec& xT, double t) {
  return evaluate_spline(spline, make_batch({{x0, xT}}, std::vector<double>{t})).x.col(0);
}

Vec spline_velocity(const SplineModel& spline, const Vec& x0, const Vec& xT, double t) {
  return evaluate_spline(spline, make_batch({{x0, xT}}, std::vector<double>{t})).v.col(0);
}

ConditionalBatch make_batch(const std::vector<EndpointPair>& pairs, int n_time_samples, Rng& rng) {
  if (n_time_samples < 1) throw ContractError("make_batch: n_time_samples must be >= 1");
  std::vector<EndpointPair> repeated;
  std::vector<double> times;
  repeated.reserve(pairs.size() * static_cast<std::size_t>(n_time_samples));
  for (const auto& p : pairs) {
    for (int s = 0; s < n_time_samples; ++s) {
      repeated.push_back(p);
      times.push_back(rng.uniform());
    }
  }
  return make_batch(repeated, times);
}

ConditionalBatch make_batch(const std::vector<EndpointPair>& pairs, const std::vector<double>& times) {
  if (pairs.empty()) throw ContractError("make_batch: no pairs");
  if (times.size() != pairs.size()) throw ContractError("make_batch: one time per pair required");
  const auto d = pairs.front().x0.size();
  const auto n = static_cast<Eigen::Index>(pairs.size());
  ConditionalBatch batch{Mat(d, n), Mat(d, n), Vec(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = pairs[static_cast<std::size_t>(i)];
    if (p.x0.size() != d || p.xT.size() != d) throw ContractError("make_batch: ragged pair dimensions");
    batch.x0.col(i) = p.x0;
    batch.xT.col(i) = p.xT;
    batch.t[i] = times[static_cast<std::size_t>(i)];
  }
  return batch;
}

SplineEvaluation evaluate_spline(const SplineModel& spline, const ConditionalBatch& batch) {
  return spline_forward(spline, batch).eval;
}

Vec spline_parameter_gradient(const SplineModel& spline, const ConditionalBatch& batch,
                              const Mat& grad_x, const Mat& grad_v) {
  const auto f = spline_forward(spline, batch);
  if (grad_x.rows() != f.eval.x.rows() || grad_x.cols() != f.eval.x.cols() ||
      grad_v.rows() != f.eval.v.rows() || grad_v.cols() != f.eval.v.cols()) {
    throw ContractError("spline_parameter_gradient: upstream shape mismatch");
  }
  return spline_backward(spline, batch, f, grad_x, grad_v);
}

LossResult spline_loss(const SplineModel& spline, const ConditionalBatch& batch,
                       const SurrogatePotential& potential) {
  const auto f = spline_forward(spline, batch);
  const auto n = batch.size();
  const double scale = 1.0 / static_cast<double>(n);
  Mat grad_x(f.eval.x.rows(), n);
  Mat grad_v(f.eval.v.rows(), n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec x = f.eval.x.col(i);
    const Vec v = f.eval.v.col(i);
    const auto terms = potential.evaluate(batch.x0.col(i), batch.xT.col(i), batch.t[i], x, v);
    total += 0.5 * v.squaredNorm() + terms.value;
    grad_x.col(i) = scale * terms.grad_x;
    grad_v.col(i) = scale * (v + terms.grad_v);
  }
  LossResult result{total * scale, spline_backward(spline, batch, f, grad_x, grad_v)};
  if (!std::isfinite(result.value)) throw DivergenceError("spline loss is non-finite", 0);
  return result;
}

LossResult spline_loss(const SplineModel& spline, const std::vector<EndpointPair>& pairs,
                       const SurrogatePotential& potential, int n_time_samples, std::uint64_t seed) {
  Rng rng(seed);
  return spline_loss(spline, make_batch(pairs, n_time_samples, rng), potential);
}

FlowLossResult flow_loss(const VelocityModel& velocity, const SplineModel& spline,
                         const ConditionalBatch& batch) {
  if (velocity.dim() != spline.dim()) throw ContractError("flow_loss: model dimensions differ");
  const auto target = evaluate_spline(spline, batch);
  Mlp::Tape tape;
  const Mat pred = velocity.net.forward(velocity_input(target.x, batch.t), tape);
  const Mat residual = pred - target.v;
  const double n = static_cast<double>(batch.size());
  FlowLossResult result;
  result.value = residual.colwise().squaredNorm().sum() / n;
  result.grad = Vec::Zero(velocity.net.n_parameters());
  velocity.net.backward(tape, (2.0 / n) * residual, result.grad);
  result.spline_grad = Vec::Zero(spline.net.n_parameters());
  if (!std::isfinite(result.value)) throw DivergenceError("flow loss is non-finite", 0);
  return result;
}

FlowLossResult flow_loss(const VelocityModel& velocity, const SplineModel& spline,
                         const std::vector<EndpointPair>& pairs, int n_time_samples,
                         std::uint64_t seed) {
  Rng rng(seed);
  return flow_loss(velocity, spline, make_batch(pairs, n_time_samples, rng));
}

Vec TransitionPath::at(double t) const {
  if (states.empty()) throw ContractError("TransitionPath::at on an empty path");
  if (states.size() == 1 || t <= times.front()) return states.front();
  if (t >= times.back()) return states.back();
  const auto upper = std::upper_bound(times.begin(), times.end(), t);
  const auto hi = static_cast<std::size_t>(upper - times.begin());
  const auto lo = hi - 1;
  const double span = times[hi] - times[lo];
  const double w = span > 0.0 ? (t - times[lo]) / span : 0.0;
  return (1.0 - w) * states[lo] + w * states[hi];
}

LossResult replay_loss(const SplineModel& spline, const TransitionPath& path,
                       const ConditionalBatch& batch) {
  if (path.size() < 2) throw ContractError("replay_loss: path needs at least two states");
  const auto f = spline_forward(spline, batch);
  const auto n = batch.size();
  Mat reference(f.eval.x.rows(), n);
  for (Eigen::Index i = 0; i < n; ++i) reference.col(i) = path.at(batch.t[i]);
  const Mat residual = f.eval.x - reference;
  const double scale = 1.0 / static_cast<double>(n);
  LossResult result;
  result.value = scale * (residual.colwise().squaredNorm().sum() + f.eval.v.colwise().squaredNorm().sum());
  result.grad = spline_backward(spline, batch, f, (2.0 * scale) * residual, (2.0 * scale) * f.eval.v);
  return result;
}

LossResult replay_loss(const SplineModel& spline, const TransitionPath& path,
                       const std::vector<EndpointPair>& pairs, std::uint64_t seed) {
  Rng rng(seed);
  return replay_loss(spline, path, make_batch(pairs, 1, rng));
}

std::string to_string(OdeMethod method) { return method == OdeMethod::euler ? "euler" : "rk4"; }

OdeMethod ode_method_from_string(const std::string& name) {
  if (name == "euler") return OdeMethod::euler;
  if (name == "rk4") return OdeMethod::rk4;
  throw ConfigError("unknown ODE method '" + name + "'");
}

std::vector<TransitionPath> integrate_field(const VectorField& field, const std::vector<Vec>& x0s,
                                            int n_steps, OdeMethod method) {
  if (n_steps < 1) throw ContractError("integrate: n_steps must be >= 1");
  if (x0s.empty()) return {};
  const auto d = x0s.front().size();
  const auto n = static_cast<Eigen::Index>(x0s.size());
  Mat x(d, n);
  for (Eigen::Index i = 0; i < n; ++i) x.col(i) = x0s[static_cast<std::size_t>(i)];

  std::vector<TransitionPath> paths(x0s.size());
  const double h = 1.0 / n_steps;
  auto record = [&](int step) {
    const double t = step == n_steps ? 1.0 : step * h;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& p = paths[static_cast<std::size_t>(i)];
      p.times.push_back(t);
      p.states.push_back(x.col(i));
    }
  };
  for (auto& p : paths) {
    p.times.reserve(static_cast<std::size_t>(n_steps) + 1);
    p.states.reserve(static_cast<std::size_t>(n_steps) + 1);
  }
  record(0);
  for (int step = 0; step < n_steps; ++step) {
    const double t = step * h;
    if (method == OdeMethod::euler) {
      x += h * field(x, t);
    } else {
      const Mat k1 = field(x, t);
      const Mat k2 = field(x + 0.5 * h * k1, t + 0.5 * h);
      const Mat k3 = field(x + 0.5 * h * k2, t + 0.5 * h);
      const Mat k4 = field(x + h * k3, t + h);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!x.allFinite()) throw DivergenceError("ODE state became non-finite", step);
    record(step + 1);
  }
  return paths;
}

std::vector<TransitionPath> integrate_paths(const VelocityModel& velocity,
                                            const std::vector<Vec>& x0s, int n_steps,
                                            OdeMethod method) {
  return integrate_field([&velocity](const Mat& xs, double t) { return velocity.evaluate(xs, t); },
                         x0s, n_steps, method);
}

TransitionPath integrate_path(const VelocityModel& velocity, const Vec& x0, int n_steps,
                              OdeMethod method) {
  return integrate_paths(velocity, {x0}, n_steps, method).front();
}

}  // namespace gfmpath
