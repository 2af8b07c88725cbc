#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfmpath/coupling.hpp"
#include "gfmpath/dynamics.hpp"
#include "gfmpath/flow.hpp"
#include "gfmpath/potential.hpp"
#include "gfmpath/surface.hpp"

namespace gfmpath {

/// Trapezoidal integral over the path grid of 0.5 |v(x_t, t)|^2 + U(x_t),
/// with U the true surface. Costs one energy evaluation per grid point.
double path_cost(const TransitionPath& path, const VelocityModel& velocity,
                 const PotentialSurface& surface);

/// exp(-c_i) / sum_j exp(-c_j), computed after subtracting the minimum cost.
std::vector<double> normalize_weights(const std::vector<double>& costs);

/// Bounded store of weighted paths, kept sorted by weight (highest first).
/// When full, the lowest-weight entry is evicted; a newcomer that weighs less
/// than everything retained is dropped.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<TransitionPath>& entries() const { return entries_; }
  const TransitionPath& operator[](std::size_t i) const { return entries_[i]; }

  /// Inserts a path that already carries a finite weight.
  void push(TransitionPath path);
  /// Index drawn with probability proportional to weight (uniform if all
  /// weights are zero).
  std::size_t sample_index(Rng& rng) const;
  /// Number of entries evicted or rejected so far.
  std::size_t evictions() const { return evictions_; }

 private:
  std::size_t capacity_;
  std::vector<TransitionPath> entries_;
  std::size_t evictions_ = 0;
};

struct TrainConfig {
  std::vector<int> hidden = {128, 128};
  int epochs = 100;
  /// -1: same as epochs.
  int pretrain_epochs = -1;
  std::size_t batch = 256;
  /// 0: one pass over both pools, ceil((|A| + |B|) / batch).
  int iterations_per_epoch = 0;
  int time_samples = 1;
  double lr_spline = 1e-5;
  double lr_flow = 1e-3;
  /// Learning rate of the spline during replay; <= 0 means lr_spline.
  double lr_replay = 0.0;
  bool zero_init_spline = true;

  int resample_rounds = 1;
  std::size_t resample_paths = 100;
  std::size_t buffer_capacity = 1000;
  OdeConfig train_ode{100, OdeMethod::rk4};
  int replay_window = 10;
  double replay_tolerance = 1e-3;
  int replay_max_steps = 500;

  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainLogEntry {
  std::string phase;  ///< "pretrain", "train" or "replay"
  long step = 0;
  double loss_spline = 0.0;  ///< spline loss, or replay loss in the replay phase
  double loss_flow = 0.0;
  std::uint64_t u_evaluations = 0;

  nlohmann::json to_json() const;
};

struct TrainResult {
  SplineModel spline;
  VelocityModel velocity;
  ReplayBuffer buffer;
  std::vector<TrainLogEntry> log;
  Adam spline_optimizer;
  Adam flow_optimizer;
  /// True-surface evaluations made during training (resampling only).
  std::uint64_t u_evaluations = 0;
};

/// Called after every pre-training and training epoch and after every
/// resampling round, e.g. to write checkpoints.
using EpochHook = std::function<void(const TrainResult& state, const std::string& phase, int index)>;

/// The alternating spline/flow training procedure:
///   1. pre-train the velocity on straight-line targets of the initial
///      coupling (the configured one, or product for reflow);
///   2. alternate spline-loss and flow-loss Adam updates for `epochs`;
///   3. per resampling round, integrate `resample_paths` paths from pool A,
///      weight them by true-surface path cost, push them into the replay
///      buffer, then alternate replay-loss and flow-loss updates until the
///      windowed relative improvement drops below replay_tolerance.
/// Only `true_surface` is ever asked for true energies, and only in step 3.
/// Step 3 is skipped when epochs == 0, and `true_surface` may then be null,
/// as it may when resample_rounds == 0.
TrainResult train(const TrainConfig& config, const EndpointDataset& dataset,
                  const SurrogatePotential& potential, const Coupling& coupling,
                  const CountingSurface* true_surface, const EpochHook& hook = {});

/// Resampling rounds on an already trained pair of models.
void resample_and_replay(const TrainConfig& config, const EndpointDataset& dataset,
                         const Coupling& coupling, const CountingSurface& true_surface,
                         TrainResult& state, Rng& rng, const EpochHook& hook = {});

}  // namespace gfmpath
