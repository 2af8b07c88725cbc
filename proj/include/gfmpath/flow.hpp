#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "gfmpath/common.hpp"
#include "gfmpath/neural.hpp"
#include "gfmpath/potential.hpp"

namespace gfmpath {

/// A conditional endpoint sample.
struct EndpointPair {
  Vec x0;
  Vec xT;
};

/// Neural spline between two endpoints on the unit time horizon:
///   x(t) = (1 - t) x0 + t xT + t (1 - t) NN(x0, xT, t)
/// The network input is the concatenation (x0, xT, t).
struct SplineModel {
  Mlp net;

  int dim() const { return net.output_dim(); }
  int time_index() const { return 2 * dim(); }

  /// Hidden widths, e.g. {128, 128}. With zero_output_layer the spline starts
  /// as the straight line.
  static SplineModel create(int dim, const std::vector<int>& hidden, Rng& rng,
                            bool zero_output_layer = true);
};

/// Marginal velocity field v(x, t); network input is (x, t).
struct VelocityModel {
  Mlp net;

  int dim() const { return net.output_dim(); }
  static VelocityModel create(int dim, const std::vector<int>& hidden, Rng& rng);

  Vec operator()(const Vec& x, double t) const;
  /// Columns of xs evaluated at a common time.
  Mat evaluate(const Mat& xs, double t) const;
};

Vec spline_point(const SplineModel& spline, const Vec& x0, const Vec& xT, double t);

/// d/dt of spline_point, using the exact forward-mode time derivative:
///   xT - x0 + t (1 - t) dNN/dt + (1 - 2t) NN
Vec spline_velocity(const SplineModel& spline, const Vec& x0, const Vec& xT, double t);

/// Column-wise conditional samples: x0, xT (dim x B) and times (B).
struct ConditionalBatch {
  Mat x0;
  Mat xT;
  Vec t;

  Eigen::Index size() const { return t.size(); }
};

/// Each pair repeated n_time_samples times, t ~ U(0, 1) drawn from rng.
ConditionalBatch make_batch(const std::vector<EndpointPair>& pairs, int n_time_samples, Rng& rng);
/// Explicit times, one per pair.
ConditionalBatch make_batch(const std::vector<EndpointPair>& pairs, const std::vector<double>& times);

/// Spline positions and velocities for a whole batch.
struct SplineEvaluation {
  Mat x;
  Mat v;
};
SplineEvaluation evaluate_spline(const SplineModel& spline, const ConditionalBatch& batch);

/// Chain rule for any loss on the spline batch: given dL/dx and dL/dv at the
/// columns of evaluate_spline(batch), returns dL/d(parameters).
Vec spline_parameter_gradient(const SplineModel& spline, const ConditionalBatch& batch,
                              const Mat& grad_x, const Mat& grad_v);

struct LossResult {
  double value = 0.0;
  Vec grad;  ///< gradient with respect to the trained network's parameters
};

/// Mean over the batch of 0.5 |v|^2 + V(x, v), with exact gradients in the
/// spline parameters (through both the position and the velocity).
LossResult spline_loss(const SplineModel& spline, const ConditionalBatch& batch,
                       const SurrogatePotential& potential);
LossResult spline_loss(const SplineModel& spline, const std::vector<EndpointPair>& pairs,
                       const SurrogatePotential& potential, int n_time_samples, std::uint64_t seed);

struct FlowLossResult {
  double value = 0.0;
  Vec grad;         ///< with respect to the velocity network
  Vec spline_grad;  ///< always zero: the spline target is a constant
};

/// Mean over the batch of |v_theta(x_t, t) - v_spline|^2, where x_t and the
/// target velocity come from the spline and are treated as constants.
FlowLossResult flow_loss(const VelocityModel& velocity, const SplineModel& spline,
                         const ConditionalBatch& batch);
FlowLossResult flow_loss(const VelocityModel& velocity, const SplineModel& spline,
                         const std::vector<EndpointPair>& pairs, int n_time_samples,
                         std::uint64_t seed);

/// A discretised path on a uniform grid over [0, 1].
struct TransitionPath {
  std::vector<double> times;
  std::vector<Vec> states;
  double raw_cost = std::numeric_limits<double>::quiet_NaN();
  double weight = std::numeric_limits<double>::quiet_NaN();

  std::size_t size() const { return states.size(); }
  /// Linear interpolation between grid points; t is clamped to the grid.
  Vec at(double t) const;
};

/// Mean over the batch of |x_spline - path(t)|^2 + |v_spline|^2.
LossResult replay_loss(const SplineModel& spline, const TransitionPath& path,
                       const ConditionalBatch& batch);
LossResult replay_loss(const SplineModel& spline, const TransitionPath& path,
                       const std::vector<EndpointPair>& pairs, std::uint64_t seed);

enum class OdeMethod { euler, rk4 };

std::string to_string(OdeMethod method);
OdeMethod ode_method_from_string(const std::string& name);

/// Velocity evaluated on columns of states at a common time.
using VectorField = std::function<Mat(const Mat& states, double t)>;

/// Fixed-step integration of every column of x0s over [0, 1] with n_steps
/// uniform steps; returns one path per column with n_steps + 1 states.
/// Throws DivergenceError with the step index on a non-finite state.
std::vector<TransitionPath> integrate_field(const VectorField& field, const std::vector<Vec>& x0s,
                                            int n_steps, OdeMethod method);

std::vector<TransitionPath> integrate_paths(const VelocityModel& velocity,
                                            const std::vector<Vec>& x0s, int n_steps,
                                            OdeMethod method);
TransitionPath integrate_path(const VelocityModel& velocity, const Vec& x0, int n_steps,
                              OdeMethod method);

}  // namespace gfmpath
