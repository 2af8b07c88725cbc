#include "gfmpath/coupling.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <numeric>

namespace gfmpath {

std::vector<std::size_t> solve_assignment(const Mat& cost) {
  if (cost.rows() != cost.cols()) throw ContractError("solve_assignment: cost matrix must be square");
  if (!cost.allFinite()) throw ContractError("solve_assignment: non-finite cost");
  const auto n = static_cast<std::size_t>(cost.rows());
  if (n == 0) return {};

  // 1-based shortest augmenting path formulation; row 0 / column 0 are sentinels.
  const double inf = std::numeric_limits<double>::infinity();
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rows = cost;
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col0] = 1;
      const std::size_t r = match[col0];
      const double* cost_row = rows.data() + (r - 1) * n - 1;  // 1-based column index
      const double ur = u[r];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double reduced = cost_row[c] - ur - v[c];
        if (reduced < minv[c]) {
          minv[c] = reduced;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t prev = way[col0];
      match[col0] = match[prev];
      col0 = prev;
    } while (col0 != 0);
  }

  std::vector<std::size_t> assignment(n);
  for (std::size_t c = 1; c <= n; ++c) assignment[match[c] - 1] = c - 1;
  return assignment;
}

std::vector<EndpointPair> sample_pairs_product(const EndpointDataset& dataset, std::size_t n,
                                               std::uint64_t seed) {
  if (dataset.pool_a.empty() || dataset.pool_b.empty()) {
    throw ContractError("product coupling: empty pool");
  }
  Rng rng(seed);
  std::vector<EndpointPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = dataset.pool_a[rng.index(dataset.pool_a.size())];
    const auto& b = dataset.pool_b[rng.index(dataset.pool_b.size())];
    pairs.push_back({a, b});
  }
  return pairs;
}

std::vector<EndpointPair> match_optimal(const std::vector<Vec>& sources,
                                        const std::vector<Vec>& targets) {
  if (sources.size() != targets.size()) throw ContractError("match_optimal: batch sizes differ");
  const auto n = static_cast<Eigen::Index>(sources.size());
  Mat cost(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      cost(i, j) = (sources[static_cast<std::size_t>(i)] - targets[static_cast<std::size_t>(j)]).squaredNorm();
    }
  }
  const auto assignment = solve_assignment(cost);
  std::vector<EndpointPair> pairs;
  pairs.reserve(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) pairs.push_back({sources[i], targets[assignment[i]]});
  return pairs;
}

namespace {

std::vector<Vec> draw_distinct(const std::vector<Vec>& pool, std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(order[i], order[i + rng.index(pool.size() - i)]);
    out.push_back(pool[order[i]]);
  }
  return out;
}

std::vector<EndpointPair> ot_batch(const EndpointDataset& dataset, std::size_t batch, Rng& rng) {
  if (batch == 0) throw ContractError("OT coupling: batch must be >= 1");
  if (batch > dataset.pool_a.size() || batch > dataset.pool_b.size()) {
    throw ContractError("OT coupling: batch exceeds a pool size");
  }
  const auto sources = draw_distinct(dataset.pool_a, batch, rng);
  const auto targets = draw_distinct(dataset.pool_b, batch, rng);
  return match_optimal(sources, targets);
}

}  // namespace

std::vector<EndpointPair> sample_pairs_ot(const EndpointDataset& dataset, std::size_t batch,
                                          std::uint64_t seed) {
  Rng rng(seed);
  return ot_batch(dataset, batch, rng);
}

std::vector<EndpointPair> sample_pairs_reflow(const EndpointDataset& dataset,
                                              const VelocityModel& velocity, const OdeConfig& ode,
                                              std::size_t n, std::uint64_t seed) {
  if (dataset.pool_a.empty()) throw ContractError("reflow coupling: empty pool A");
  Rng rng(seed);
  std::vector<Vec> starts;
  starts.reserve(n);
  for (std::size_t i = 0; i < n; ++i) starts.push_back(dataset.pool_a[rng.index(dataset.pool_a.size())]);
  const auto paths = integrate_paths(velocity, starts, ode.steps, ode.method);
  std::vector<EndpointPair> pairs;
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pairs.push_back({starts[i], paths[i].states.back()});
  return pairs;
}

std::string to_string(CouplingKind kind) {
  switch (kind) {
    case CouplingKind::product: return "product";
    case CouplingKind::minibatch_ot: return "minibatch-ot";
    case CouplingKind::reflow: return "reflow";
  }
  return "?";
}

CouplingKind coupling_kind_from_string(const std::string& name) {
  if (name == "product") return CouplingKind::product;
  if (name == "minibatch-ot" || name == "ot") return CouplingKind::minibatch_ot;
  if (name == "reflow") return CouplingKind::reflow;
  throw ConfigError("unknown coupling '" + name + "'");
}

Coupling::Coupling(CouplingKind kind, std::size_t batch, OdeConfig ode)
    : kind_(kind), batch_(batch), ode_(ode) {
  if (batch_ == 0) throw ContractError("Coupling: batch must be >= 1");
}

std::vector<EndpointPair> Coupling::sample(const EndpointDataset& dataset, std::size_t n, Rng& rng,
                                           const VelocityModel* velocity) const {
  switch (kind_) {
    case CouplingKind::product:
      return sample_pairs_product(dataset, n, rng.fork());
    case CouplingKind::reflow:
      if (velocity == nullptr) throw ContractError("reflow coupling needs a velocity field");
      return sample_pairs_reflow(dataset, *velocity, ode_, n, rng.fork());
    case CouplingKind::minibatch_ot: {
      const std::size_t chunk =
          std::min({batch_, dataset.pool_a.size(), dataset.pool_b.size()});
      std::vector<EndpointPair> pairs;
      pairs.reserve(n);
      while (pairs.size() < n) {
        auto part = ot_batch(dataset, chunk, rng);
        const auto take = std::min(part.size(), n - pairs.size());
        pairs.insert(pairs.end(), part.begin(), part.begin() + static_cast<std::ptrdiff_t>(take));
      }
      return pairs;
    }
  }
  return {};
}

void save_pairs(const std::vector<EndpointPair>& pairs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& p : pairs) {
    out << nlohmann::json{{"x0", to_std(p.x0)}, {"xT", to_std(p.xT)}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace gfmpath
