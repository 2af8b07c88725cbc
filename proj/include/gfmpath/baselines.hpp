#pragma once

#include <cstdint>
#include <vector>

#include "gfmpath/flow.hpp"

namespace gfmpath {

/// Straight line from x0 to xT on a uniform grid of n_points over [0, 1].
TransitionPath linear_path(const Vec& x0, const Vec& xT, int n_points);

/// Layout of a flat state as n_particles rows of spatial_dim coordinates
/// (particle-major: x = (p0_x, p0_y, p0_z, p1_x, ...)).
struct PairwiseDistanceConfig {
  int n_particles = 2;
  int spatial_dim = 3;

  int state_dim() const { return n_particles * spatial_dim; }
  void validate() const;
};

/// Symmetric n_particles x n_particles matrix of Euclidean distances.
Mat pairwise_distances(const Vec& x, const PairwiseDistanceConfig& cfg);

struct IdppConfig {
  std::vector<int> hidden = {128, 128};
  int epochs = 500;
  double lr = 1e-2;
  std::size_t batch = 256;
  /// Time samples per pair and step.
  int time_samples = 8;
  std::uint64_t seed = 0;
};

struct IdppResult {
  SplineModel spline;
  /// Loss on a fixed evaluation batch, before training and after each epoch.
  std::vector<double> history;
};

/// Mean over the batch of sum_{i<j} (d_ij(x(t)) - r_ij(t))^2 where r(t) is the
/// linear interpolation of the endpoint distance matrices.
LossResult idpp_loss(const SplineModel& spline, const ConditionalBatch& batch,
                     const PairwiseDistanceConfig& cfg);

/// Fits one spline shared by all pairs (the network sees (x0, xT, t)).
IdppResult fit_idpp(const std::vector<EndpointPair>& pairs, const PairwiseDistanceConfig& cfg,
                    const IdppConfig& config);

/// Path of n_points read off a fitted spline.
TransitionPath spline_path(const SplineModel& spline, const Vec& x0, const Vec& xT, int n_points);

/// Single-pair convenience: fits a fresh spline to (x0, xT) and returns its path.
TransitionPath idpp_path(const Vec& x0, const Vec& xT, const PairwiseDistanceConfig& cfg,
                         const IdppConfig& config, int n_points);

/// Four particles in 3D carried through 0.9 of a half turn about the z axis,
/// with independent Gaussian jitter on both endpoints. Straight-line
/// interpolation squeezes the particles towards the axis at t = 0.5 while the
/// interpolated distance target stays that of a rigid body.
struct SyntheticSystem {
  PairwiseDistanceConfig layout;
  std::vector<EndpointPair> pairs;
};
SyntheticSystem rotating_tetramer(std::size_t n_pairs, double jitter, std::uint64_t seed);

}  // namespace gfmpath
