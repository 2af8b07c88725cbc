#include "gfmpath/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

namespace gfmpath {

namespace {

void check_nonempty(const TransitionPath& path) {
  if (path.states.empty()) throw ContractError("path has no states");
}

std::string fmt(const char* spec, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, value);
  return buf;
}

// 17 significant digits always read back to the same double.
std::string exact(double value) { return fmt("%.17g", value); }

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  const double n = static_cast<double>(xs.size());
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  sd = std::sqrt(acc / n);
}

nlohmann::json number_or_null(double x) {
  return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr);
}

}  // namespace

double path_max_energy(const TransitionPath& path, const PotentialSurface& surface) {
  check_nonempty(path);
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& x : path.states) best = std::max(best, surface.energy(x));
  return best;
}

double minmax_energy(const std::vector<TransitionPath>& paths, const PotentialSurface& surface) {
  if (paths.empty()) throw ContractError("minmax_energy: empty path set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : paths) best = std::min(best, path_max_energy(p, surface));
  return best;
}

double saddle_distance(const TransitionPath& path, const Vec& saddle) {
  check_nonempty(path);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& x : path.states) {
    if (x.size() != saddle.size()) throw ContractError("saddle_distance: dimension mismatch");
    best = std::min(best, (x - saddle).norm());
  }
  return best;
}

nlohmann::json PathSetReport::to_json() const {
  return {{"minmax_energy", minmax_energy},
          {"max_energy_mean", max_energy_mean},
          {"max_energy_std", max_energy_std},
          {"d1_mean", number_or_null(d1_mean)},
          {"d1_std", number_or_null(d1_std)},
          {"d2_mean", number_or_null(d2_mean)},
          {"d2_std", number_or_null(d2_std)},
          {"n_paths", n_paths},
          {"u_evaluations", u_evaluations},
          {"std", "population"}};
}

PathSetReport report(const std::vector<TransitionPath>& paths, const PotentialSurface& surface,
                     const CriticalPointRegistry& registry) {
  if (paths.empty()) throw ContractError("report: empty path set");
  PathSetReport rep;
  rep.n_paths = paths.size();
  std::vector<double> maxima;
  std::vector<std::vector<double>> distances(registry.saddles.size());
  for (const auto& p : paths) {
    PathMetrics m;
    m.max_energy = path_max_energy(p, surface);
    for (std::size_t s = 0; s < registry.saddles.size(); ++s) {
      m.saddle_distances.push_back(saddle_distance(p, registry.saddles[s]));
      distances[s].push_back(m.saddle_distances.back());
    }
    maxima.push_back(m.max_energy);
    rep.per_path.push_back(std::move(m));
  }
  rep.minmax_energy = *std::min_element(maxima.begin(), maxima.end());
  mean_std(maxima, rep.max_energy_mean, rep.max_energy_std);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rep.d1_mean = rep.d1_std = rep.d2_mean = rep.d2_std = nan;
  if (!distances.empty()) mean_std(distances[0], rep.d1_mean, rep.d1_std);
  if (distances.size() > 1) mean_std(distances[1], rep.d2_mean, rep.d2_std);
  return rep;
}

std::vector<TransitionPath> select_top_k(const std::vector<TransitionPath>& paths, std::size_t k) {
  std::vector<std::size_t> order(paths.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const double w = paths[i].weight;
    return std::isfinite(w) ? w : -std::numeric_limits<double>::infinity();
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  order.resize(std::min(k, order.size()));
  std::vector<TransitionPath> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(paths[i]);
  return out;
}

void write_report(const PathSetReport& rep, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto csv_path = (std::filesystem::path(dir) / "report.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot open '" + csv_path + "' for writing");
  csv << "path_id,max_energy,d1,d2\n";
  for (std::size_t i = 0; i < rep.per_path.size(); ++i) {
    const auto& m = rep.per_path[i];
    csv << i << ',' << exact(m.max_energy);
    for (std::size_t s = 0; s < 2; ++s) {
      csv << ',';
      if (s < m.saddle_distances.size()) csv << exact(m.saddle_distances[s]);
    }
    csv << '\n';
  }
  if (!csv) throw IoError("write failed for '" + csv_path + "'");

  const auto json_path = (std::filesystem::path(dir) / "summary.json").string();
  std::ofstream js(json_path);
  if (!js) throw IoError("cannot open '" + json_path + "' for writing");
  js << rep.to_json().dump(2) << '\n';
  if (!js) throw IoError("write failed for '" + json_path + "'");
}

namespace {

struct Window {
  double x0, x1, y0, y1;
};

Window plot_window(const std::vector<TransitionPath>& paths, const PotentialSurface& surface,
                   const SvgOptions& o) {
  if (o.x_max > o.x_min && o.y_max > o.y_min) return {o.x_min, o.x_max, o.y_min, o.y_max};
  if (surface.name() == "mueller-brown") return {-1.5, 1.2, -0.5, 2.0};
  Window w{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
           std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& p : paths) {
    for (const auto& x : p.states) {
      w.x0 = std::min(w.x0, x[0]);
      w.x1 = std::max(w.x1, x[0]);
      w.y0 = std::min(w.y0, x[1]);
      w.y1 = std::max(w.y1, x[1]);
    }
  }
  if (!std::isfinite(w.x0)) return {-1.0, 1.0, -1.0, 1.0};
  const double mx = std::max(0.1, 0.1 * (w.x1 - w.x0));
  const double my = std::max(0.1, 0.1 * (w.y1 - w.y0));
  return {w.x0 - mx, w.x1 + mx, w.y0 - my, w.y1 + my};
}

// Marching squares over a regular grid of values; appends "M..L.." segments
// for the iso-line at `level`.
void iso_segments(const Mat& values, double level, const std::function<std::string(double, double)>& point,
                  std::string& out) {
  const auto n = values.rows();
  auto cross = [&](Eigen::Index i0, Eigen::Index j0, Eigen::Index i1, Eigen::Index j1) {
    const double a = values(i0, j0), b = values(i1, j1);
    const double w = (level - a) / (b - a);
    return point(i0 + w * static_cast<double>(i1 - i0), j0 + w * static_cast<double>(j1 - j0));
  };
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    for (Eigen::Index j = 0; j + 1 < values.cols(); ++j) {
      // Corners: 0=(i,j) 1=(i+1,j) 2=(i+1,j+1) 3=(i,j+1); edges between them.
      const int code = (values(i, j) > level ? 1 : 0) | (values(i + 1, j) > level ? 2 : 0) |
                       (values(i + 1, j + 1) > level ? 4 : 0) | (values(i, j + 1) > level ? 8 : 0);
      if (code == 0 || code == 15) continue;
      const std::string e0 = ((code & 1) != 0) != ((code & 2) != 0) ? cross(i, j, i + 1, j) : "";
      const std::string e1 = ((code & 2) != 0) != ((code & 4) != 0) ? cross(i + 1, j, i + 1, j + 1) : "";
      const std::string e2 = ((code & 4) != 0) != ((code & 8) != 0) ? cross(i + 1, j + 1, i, j + 1) : "";
      const std::string e3 = ((code & 8) != 0) != ((code & 1) != 0) ? cross(i, j + 1, i, j) : "";
      std::vector<std::string> hits;
      for (const auto* e : {&e0, &e1, &e2, &e3}) {
        if (!e->empty()) hits.push_back(*e);
      }
      if (hits.size() == 2) {
        out += "M" + hits[0] + "L" + hits[1];
      } else if (hits.size() == 4) {
        // Ambiguous cell: resolve with the cell-centre average.
        const double centre =
            0.25 * (values(i, j) + values(i + 1, j) + values(i + 1, j + 1) + values(i, j + 1));
        const bool corner0_high = (code & 1) != 0;
        if ((centre > level) == corner0_high) {
          out += "M" + e0 + "L" + e1 + "M" + e2 + "L" + e3;
        } else {
          out += "M" + e0 + "L" + e3 + "M" + e1 + "L" + e2;
        }
      }
    }
  }
}

void star(std::ostringstream& svg, double cx, double cy, double r) {
  svg << "<polygon points=\"";
  for (int k = 0; k < 10; ++k) {
    const double radius = k % 2 == 0 ? r : 0.4 * r;
    const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
    svg << (k ? " " : "") << fmt("%.2f", cx + radius * std::cos(a)) << ','
        << fmt("%.2f", cy + radius * std::sin(a));
  }
  svg << "\" fill=\"#d62728\" stroke=\"black\" stroke-width=\"0.8\"/>\n";
}

}  // namespace

std::string render_svg(const std::vector<TransitionPath>& paths, const PotentialSurface& surface,
                       const CriticalPointRegistry& registry, const SvgOptions& options) {
  if (surface.dim() != 2) throw ContractError("render_svg: only two-dimensional surfaces can be drawn");
  if (options.grid < 2 || options.levels < 1) throw ContractError("render_svg: grid >= 2 and levels >= 1");
  const Window w = plot_window(paths, surface, options);
  const int g = options.grid;
  const double sx = options.width / (w.x1 - w.x0);
  const double sy = options.height / (w.y1 - w.y0);
  auto px = [&](double x) { return (x - w.x0) * sx; };
  auto py = [&](double y) { return options.height - (y - w.y0) * sy; };

  Mat values(g, g);
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(g) * g);
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const Vec x{{w.x0 + (w.x1 - w.x0) * i / (g - 1), w.y0 + (w.y1 - w.y0) * j / (g - 1)}};
      values(i, j) = surface.energy(x);
      flat.push_back(values(i, j));
    }
  }
  // Levels are log-spaced above the grid minimum up to the 95th percentile,
  // so the wells get most of the lines and the steep walls do not swamp them.
  std::sort(flat.begin(), flat.end());
  const double lo = flat.front();
  const double hi = flat[static_cast<std::size_t>(0.95 * static_cast<double>(flat.size() - 1))];
  const double top = std::log1p(std::max(hi - lo, 1e-12));

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\""
      << options.height << "\" viewBox=\"0 0 " << options.width << ' ' << options.height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  auto grid_point = [&](double gi, double gj) {
    const double x = w.x0 + (w.x1 - w.x0) * gi / (g - 1);
    const double y = w.y0 + (w.y1 - w.y0) * gj / (g - 1);
    return fmt("%.2f", px(x)) + "," + fmt("%.2f", py(y));
  };
  for (int l = 1; l <= options.levels; ++l) {
    const double level = lo + std::expm1(top * l / (options.levels + 1));
    std::string d;
    iso_segments(values, level, grid_point, d);
    if (d.empty()) continue;
    const int shade = 40 + (170 * l) / options.levels;
    svg << "<path d=\"" << d << "\" fill=\"none\" stroke=\"rgb(" << shade << ',' << shade << ','
        << shade << ")\" stroke-width=\"0.7\"/>\n";
  }
  const std::size_t n_draw =
      options.max_paths == 0 ? paths.size() : std::min(options.max_paths, paths.size());
  for (std::size_t k = 0; k < n_draw; ++k) {
    svg << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-opacity=\"0.5\" stroke-width=\"1\" points=\"";
    bool first = true;
    for (const auto& x : paths[k].states) {
      svg << (first ? "" : " ") << fmt("%.2f", px(x[0])) << ',' << fmt("%.2f", py(x[1]));
      first = false;
    }
    svg << "\"/>\n";
  }
  for (const auto& s : registry.saddles) star(svg, px(s[0]), py(s[1]), 9.0);
  svg << "</svg>\n";
  return svg.str();
}

void write_svg(const std::string& svg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << svg;
  if (!out) throw IoError("write failed for '" + path + "'");
}

void save_paths_csv(const std::vector<TransitionPath>& paths, const PotentialSurface* surface,
                    const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const auto d = paths.empty() ? (surface ? surface->dim() : 0)
                               : static_cast<std::size_t>(paths.front().states.front().size());
  out << "path_id,t";
  for (std::size_t k = 0; k < d; ++k) out << ",x" << k;
  out << ",U,weight\n";
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const auto& p = paths[i];
    if (p.times.size() != p.states.size() || p.states.empty()) {
      throw ContractError("save_paths_csv: path " + std::to_string(i) + " is empty or ragged");
    }
    const std::string weight = std::isfinite(p.weight) ? exact(p.weight) : "";
    for (std::size_t k = 0; k < p.states.size(); ++k) {
      out << i << ',' << exact(p.times[k]);
      for (Eigen::Index c = 0; c < p.states[k].size(); ++c) out << ',' << exact(p.states[k][c]);
      out << ',' << (surface ? exact(surface->energy(p.states[k])) : std::string()) << ',' << weight
          << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<TransitionPath> load_paths_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("'" + path + "': empty path file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 5 || header[0] != "path_id" || header[1] != "t" ||
      header[header.size() - 2] != "U" || header.back() != "weight") {
    throw SchemaError("'" + path + "': unexpected path CSV header");
  }
  const std::size_t d = header.size() - 4;
  std::vector<TransitionPath> paths;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != header.size()) {
      throw SchemaError("'" + path + "' line " + std::to_string(line_no) + ": wrong column count");
    }
    try {
      const auto id = static_cast<std::size_t>(std::stoull(cells[0]));
      if (id != paths.size() && id + 1 != paths.size()) {
        throw SchemaError("'" + path + "' line " + std::to_string(line_no) + ": path ids must be contiguous");
      }
      if (id == paths.size()) paths.emplace_back();
      auto& p = paths.back();
      p.times.push_back(std::stod(cells[1]));
      Vec x(static_cast<Eigen::Index>(d));
      for (std::size_t k = 0; k < d; ++k) x[static_cast<Eigen::Index>(k)] = std::stod(cells[2 + k]);
      p.states.push_back(std::move(x));
      if (!cells.back().empty()) p.weight = std::stod(cells.back());
    } catch (const std::logic_error&) {
      throw SchemaError("'" + path + "' line " + std::to_string(line_no) + ": malformed number");
    }
  }
  return paths;
}

}  // namespace gfmpath
