#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfmpath/dynamics.hpp"
#include "gfmpath/flow.hpp"

namespace gfmpath {

/// Minimum-cost perfect matching on a square cost matrix (Hungarian
/// algorithm with potentials, O(n^3)). Returns the column assigned to each
/// row. Ties go to the lowest column index.
std::vector<std::size_t> solve_assignment(const Mat& cost);

/// Independent uniform draws (with replacement) from pool A and pool B.
std::vector<EndpointPair> sample_pairs_product(const EndpointDataset& dataset, std::size_t n,
                                               std::uint64_t seed);

/// Exact optimal matching of two equal-size batches under squared Euclidean
/// cost. Pairs are returned in the order of `sources`.
std::vector<EndpointPair> match_optimal(const std::vector<Vec>& sources,
                                        const std::vector<Vec>& targets);

/// Draws `batch` distinct states from each pool and matches them optimally.
std::vector<EndpointPair> sample_pairs_ot(const EndpointDataset& dataset, std::size_t batch,
                                          std::uint64_t seed);

struct OdeConfig {
  int steps = 100;
  OdeMethod method = OdeMethod::rk4;
};

/// x0 from pool A; xT by integrating the velocity field from x0 over [0, 1].
std::vector<EndpointPair> sample_pairs_reflow(const EndpointDataset& dataset,
                                              const VelocityModel& velocity, const OdeConfig& ode,
                                              std::size_t n, std::uint64_t seed);

enum class CouplingKind { product, minibatch_ot, reflow };

std::string to_string(CouplingKind kind);
CouplingKind coupling_kind_from_string(const std::string& name);

/// A pairing policy over the two endpoint pools.
class Coupling {
 public:
  explicit Coupling(CouplingKind kind, std::size_t batch = 256, OdeConfig ode = {});

  CouplingKind kind() const { return kind_; }
  std::size_t batch() const { return batch_; }
  const OdeConfig& ode() const { return ode_; }

  /// n pairs. Minibatch OT solves ceil(n / batch) assignment problems of
  /// size min(batch, pool sizes). Reflow requires `velocity`.
  std::vector<EndpointPair> sample(const EndpointDataset& dataset, std::size_t n, Rng& rng,
                                   const VelocityModel* velocity = nullptr) const;

 private:
  CouplingKind kind_;
  std::size_t batch_;
  OdeConfig ode_;
};

/// JSON Lines, one pair per line: {"x0":[...],"xT":[...]}.
void save_pairs(const std::vector<EndpointPair>& pairs, const std::string& path);

}  // namespace gfmpath
