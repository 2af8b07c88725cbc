#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfmpath/common.hpp"
#include "gfmpath/surface.hpp"

namespace gfmpath {

struct LangevinConfig {
  double dt = 1e-4;
  double xi = 5.0;  ///< noise scale
  long n_steps = 12000;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

/// One Euler step of first-order Langevin dynamics:
///   x' = x - grad U(x) dt + sqrt(dt) xi noise
/// The standard-normal noise vector is supplied by the caller.
/// Throws DivergenceError (step 0) if the result is non-finite.
Vec langevin_step(const PotentialSurface& surface, const Vec& x, const LangevinConfig& cfg,
                  const Vec& noise);

/// Runs cfg.n_steps steps from start and returns n_samples of the visited
/// states x_1..x_n, drawn uniformly without replacement and kept in
/// trajectory order. Noise and subsampling both come from Rng(cfg.seed).
std::vector<Vec> simulate_pool(const PotentialSurface& surface, const Vec& start,
                               const LangevinConfig& cfg, std::size_t n_samples);

/// Two unpaired pools of states around the start and end metastable states.
struct EndpointDataset {
  std::vector<Vec> pool_a;
  std::vector<Vec> pool_b;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t dim() const { return pool_a.empty() ? 0 : pool_a.front().size(); }
  /// Concatenation of both pools.
  std::vector<Vec> pooled() const;
  void validate() const;
};

/// Simulates both pools. Pool A uses cfg.seed, pool B uses cfg.seed + 1.
/// meta records the surface, the configuration, and the number of true
/// energy evaluations spent (one gradient call per step per pool).
EndpointDataset build_dataset(const PotentialSurface& surface, const Vec& start_a,
                              const Vec& start_b, const LangevinConfig& cfg,
                              std::size_t n_samples);

inline constexpr int kDatasetVersion = 1;

/// JSON Lines: a header line
///   {"format":"gfmpath-dataset","version":1,"dim":D,"counts":{"A":n,"B":m},"meta":{...}}
/// followed by one record per state: {"pool":"A"|"B","x":[...]}.
void save_dataset(const EndpointDataset& dataset, const std::string& path);
EndpointDataset load_dataset(const std::string& path);

}  // namespace gfmpath
