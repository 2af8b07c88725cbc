#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfmpath/flow.hpp"
#include "gfmpath/surface.hpp"

namespace gfmpath {

/// Largest U over the grid points of the path.
double path_max_energy(const TransitionPath& path, const PotentialSurface& surface);
/// Smallest per-path maximum over a set of paths.
double minmax_energy(const std::vector<TransitionPath>& paths, const PotentialSurface& surface);
/// Closest approach of the path's grid points to `saddle`.
double saddle_distance(const TransitionPath& path, const Vec& saddle);

struct PathMetrics {
  double max_energy = 0.0;
  /// One entry per registered saddle, in registry order.
  std::vector<double> saddle_distances;
};

/// Aggregates over a path set. Standard deviations use the population
/// formula (divide by n). d1/d2 are NaN when the surface registers fewer
/// saddles.
struct PathSetReport {
  double minmax_energy = 0.0;
  double max_energy_mean = 0.0;
  double max_energy_std = 0.0;
  double d1_mean = 0.0, d1_std = 0.0;
  double d2_mean = 0.0, d2_std = 0.0;
  std::size_t n_paths = 0;
  std::uint64_t u_evaluations = 0;

  std::vector<PathMetrics> per_path;

  nlohmann::json to_json() const;
};

/// Throws ContractError on an empty path set.
PathSetReport report(const std::vector<TransitionPath>& paths, const PotentialSurface& surface,
                     const CriticalPointRegistry& registry);

/// The k highest-weight paths (ties keep input order); paths without a finite
/// weight rank last. k >= size returns everything.
std::vector<TransitionPath> select_top_k(const std::vector<TransitionPath>& paths, std::size_t k);

/// report.csv (path_id,max_energy,d1,d2) and summary.json into `dir`.
void write_report(const PathSetReport& rep, const std::string& dir);

struct SvgOptions {
  int grid = 300;
  int levels = 24;
  int width = 600;
  int height = 600;
  /// Paths drawn; the rest are skipped to keep the file small. 0 draws all.
  std::size_t max_paths = 100;
  /// Plot window; computed from the surface (Mueller-Brown) or the paths when
  /// left empty.
  double x_min = 0, x_max = 0, y_min = 0, y_max = 0;
};

/// Contour plot of a 2D surface with paths overlaid and saddles starred.
/// Output depends only on the inputs.
std::string render_svg(const std::vector<TransitionPath>& paths, const PotentialSurface& surface,
                       const CriticalPointRegistry& registry, const SvgOptions& options = {});
void write_svg(const std::string& svg, const std::string& path);

/// Path CSV: header path_id,t,x0..x{d-1},U,weight, one row per grid point.
/// U is evaluated on `surface` (left empty when it is null); the weight
/// column is empty when unset.
void save_paths_csv(const std::vector<TransitionPath>& paths, const PotentialSurface* surface,
                    const std::string& path);
std::vector<TransitionPath> load_paths_csv(const std::string& path);

}  // namespace gfmpath
