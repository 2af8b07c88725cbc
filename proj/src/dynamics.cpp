#include "gfmpath/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace gfmpath {

void LangevinConfig::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ContractError("Langevin dt must be > 0");
  if (!std::isfinite(xi) || xi < 0.0) throw ContractError("Langevin xi must be >= 0");
  if (n_steps < 1) throw ContractError("Langevin n_steps must be >= 1");
}

nlohmann::json LangevinConfig::to_json() const {
  return {{"dt", dt}, {"xi", xi}, {"n_steps", n_steps}, {"seed", seed}};
}

Vec langevin_step(const PotentialSurface& surface, const Vec& x, const LangevinConfig& cfg,
                  const Vec& noise) {
  if (noise.size() != x.size()) throw ContractError("langevin_step: noise dimension mismatch");
  Vec next = x - surface.gradient(x) * cfg.dt + (std::sqrt(cfg.dt) * cfg.xi) * noise;
  if (!next.allFinite()) throw DivergenceError("Langevin state became non-finite", 0);
  return next;
}

std::vector<Vec> simulate_pool(const PotentialSurface& surface, const Vec& start,
                               const LangevinConfig& cfg, std::size_t n_samples) {
  cfg.validate();
  const auto n_steps = static_cast<std::size_t>(cfg.n_steps);
  if (n_samples > n_steps) throw ContractError("simulate_pool: n_samples exceeds n_steps");

  Rng rng(cfg.seed);
  std::vector<Vec> visited;
  visited.reserve(n_steps);
  Vec x = start;
  for (std::size_t step = 0; step < n_steps; ++step) {
    const Vec noise = rng.normal_vector(x.size());
    try {
      x = langevin_step(surface, x, cfg, noise);
    } catch (const DivergenceError&) {
      throw DivergenceError("Langevin state became non-finite", static_cast<long>(step));
    }
    visited.push_back(x);
  }

  // Partial Fisher-Yates over indices, then restore trajectory order.
  std::vector<std::size_t> order(n_steps);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < n_samples; ++i) {
    std::swap(order[i], order[i + rng.index(n_steps - i)]);
  }
  order.resize(n_samples);
  std::sort(order.begin(), order.end());

  std::vector<Vec> samples;
  samples.reserve(n_samples);
  for (auto i : order) samples.push_back(visited[i]);
  return samples;
}

std::vector<Vec> EndpointDataset::pooled() const {
  std::vector<Vec> all(pool_a);
  all.insert(all.end(), pool_b.begin(), pool_b.end());
  return all;
}

void EndpointDataset::validate() const {
  if (pool_a.empty() || pool_b.empty()) throw SchemaError("dataset pools must be non-empty");
  const auto d = pool_a.front().size();
  auto same = [d](const Vec& x) { return x.size() == d; };
  if (!std::all_of(pool_a.begin(), pool_a.end(), same) ||
      !std::all_of(pool_b.begin(), pool_b.end(), same)) {
    throw SchemaError("dataset states have inconsistent dimensions");
  }
}

EndpointDataset build_dataset(const PotentialSurface& surface, const Vec& start_a,
                              const Vec& start_b, const LangevinConfig& cfg,
                              std::size_t n_samples) {
  EndpointDataset data;
  LangevinConfig cfg_b = cfg;
  cfg_b.seed = cfg.seed + 1;
  data.pool_a = simulate_pool(surface, start_a, cfg, n_samples);
  data.pool_b = simulate_pool(surface, start_b, cfg_b, n_samples);
  data.meta = {
      {"surface", surface.name()},
      {"langevin", cfg.to_json()},
      {"start_a", to_std(start_a)},
      {"start_b", to_std(start_b)},
      {"samples_per_pool", n_samples},
      {"u_evaluations", 2 * cfg.n_steps},
  };
  return data;
}

void save_dataset(const EndpointDataset& dataset, const std::string& path) {
  dataset.validate();
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  nlohmann::json header = {
      {"format", "gfmpath-dataset"},
      {"version", kDatasetVersion},
      {"dim", dataset.dim()},
      {"counts", {{"A", dataset.pool_a.size()}, {"B", dataset.pool_b.size()}}},
      {"meta", dataset.meta},
  };
  out << header.dump() << '\n';
  for (const auto& x : dataset.pool_a) out << nlohmann::json{{"pool", "A"}, {"x", to_std(x)}}.dump() << '\n';
  for (const auto& x : dataset.pool_b) out << nlohmann::json{{"pool", "B"}, {"x", to_std(x)}}.dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

EndpointDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(path + ": empty dataset file");

  EndpointDataset data;
  std::size_t dim = 0;
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "gfmpath-dataset") throw SchemaError(path + ": not a dataset file");
    if (header.at("version").get<int>() != kDatasetVersion) {
      throw SchemaError(path + ": unsupported dataset version " + header.at("version").dump());
    }
    dim = header.at("dim").get<std::size_t>();
    data.meta = header.value("meta", nlohmann::json::object());

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto record = nlohmann::json::parse(line);
      const auto x = record.at("x").get<std::vector<double>>();
      if (x.size() != dim) {
        throw SchemaError(path + ":" + std::to_string(line_no) + ": state has dimension " +
                          std::to_string(x.size()) + ", header says " + std::to_string(dim));
      }
      const auto pool = record.at("pool").get<std::string>();
      if (pool == "A") {
        data.pool_a.push_back(from_std(x));
      } else if (pool == "B") {
        data.pool_b.push_back(from_std(x));
      } else {
        throw SchemaError(path + ":" + std::to_string(line_no) + ": unknown pool '" + pool + "'");
      }
    }
    const auto& counts = header.at("counts");
    if (counts.at("A").get<std::size_t>() != data.pool_a.size() ||
        counts.at("B").get<std::size_t>() != data.pool_b.size()) {
      throw SchemaError(path + ": record count does not match header");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ": malformed dataset: " + e.what());
  }
  data.validate();
  return data;
}

}  // namespace gfmpath
