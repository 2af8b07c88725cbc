#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfmpath/baselines.hpp"
#include "gfmpath/coupling.hpp"
#include "gfmpath/dynamics.hpp"
#include "gfmpath/evaluate.hpp"
#include "gfmpath/potential.hpp"
#include "gfmpath/surface.hpp"
#include "gfmpath/trainer.hpp"

namespace gfmpath {

struct SimulateSettings {
  std::string surface = "mueller-brown";
  std::size_t dim = 2;  ///< ignored by fixed-dimension surfaces
  /// A minimum label ("A", "B", "C" index the registry minima in order) or
  /// comma-separated coordinates.
  std::string start_a = "A";
  std::string start_b = "B";
  LangevinConfig langevin{1e-4, 5.0, 12000, 2};
  std::size_t samples = 2000;
};

struct PotentialSettings {
  std::string kind = "metric";  ///< metric | latent
  MetricConfig metric;
  AutoencoderConfig latent;
};

struct CouplingSettings {
  CouplingKind kind = CouplingKind::minibatch_ot;
  std::size_t batch = 256;
  OdeConfig ode{100, OdeMethod::rk4};

  Coupling make() const { return Coupling(kind, batch, ode); }
};

struct SampleSettings {
  std::size_t n_paths = 1000;
  int ode_steps = 500;
  OdeMethod method = OdeMethod::rk4;
  std::uint64_t seed = 5;
};

struct EvaluateSettings {
  /// 0 evaluates every path; otherwise the top_k highest-weight paths.
  std::size_t top_k = 0;
  bool svg = true;
  std::size_t svg_paths = 100;
};

struct BaselineSettings {
  std::string kind = "linear";  ///< linear | idpp
  CouplingKind coupling = CouplingKind::product;
  std::size_t n_paths = 1000;
  int n_points = 501;
  std::uint64_t seed = 9;
  /// IDPP runs on the rotating four-particle system unless system == "dataset".
  std::string system = "tetramer";
  PairwiseDistanceConfig layout{4, 3};
  std::size_t idpp_pairs = 32;
  double idpp_jitter = 0.05;
  IdppConfig idpp;
};

/// Every tunable of a run. The JSON form nests the sections under
/// "simulate", "potential", "coupling", "train", "sample", "evaluate" and
/// "baseline"; unknown keys are rejected.
struct RunConfig {
  SimulateSettings simulate;
  PotentialSettings potential;
  CouplingSettings coupling;
  TrainConfig train;
  SampleSettings sample;
  EvaluateSettings evaluate;
  BaselineSettings baseline;

  /// Reference configuration; every stage gets its own seed.
  RunConfig();

  nlohmann::json to_json() const;
  /// Fields missing from `j` keep their defaults. Throws ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
};

RunConfig load_run_config(const std::string& path);

/// Applies "section.key=value" to a JSON config. The value is parsed as JSON
/// when possible and taken as a string otherwise.
void apply_override(nlohmann::json& config, const std::string& assignment);

std::shared_ptr<const PotentialSurface> surface_for(const SimulateSettings& s);
Vec resolve_start(const std::string& spec, const PotentialSurface& surface);

/// Both Langevin pools; true-energy calls go through `counted`.
EndpointDataset run_simulate(const RunConfig& config, const CountingSurface& counted);

std::shared_ptr<const SurrogatePotential> run_fit_potential(const RunConfig& config,
                                                            const EndpointDataset& dataset);

TrainResult run_train(const RunConfig& config, const EndpointDataset& dataset,
                      const SurrogatePotential& potential, const CountingSurface* counted,
                      const EpochHook& hook = {});

/// n_paths ODE paths from uniform draws of pool A.
std::vector<TransitionPath> run_sample(const RunConfig& config, const EndpointDataset& dataset,
                                       const VelocityModel& velocity);

struct BaselineOutcome {
  std::vector<TransitionPath> paths;
  /// IDPP only: loss before training and after each epoch.
  std::vector<double> idpp_history;
};

BaselineOutcome run_baseline(const RunConfig& config, const EndpointDataset* dataset);

/// Selection from evaluate.top_k followed by the metrics.
PathSetReport run_evaluate(const RunConfig& config, const std::vector<TransitionPath>& paths,
                           const PotentialSurface& surface);

}  // namespace gfmpath
