#include "gfmpath/surface.hpp"

#include <cmath>

namespace gfmpath {

void PotentialSurface::check(const Vec& x) const {
  if (static_cast<std::size_t>(x.size()) != dim()) {
    throw ContractError(name() + ": expected state of dimension " + std::to_string(dim()) +
                        ", got " + std::to_string(x.size()));
  }
  if (!x.allFinite()) throw DomainError(name() + ": non-finite state");
}

double PotentialSurface::energy(const Vec& x) const {
  check(x);
  return energy_unchecked(x);
}

Vec PotentialSurface::gradient(const Vec& x) const {
  check(x);
  return gradient_unchecked(x);
}

double MuellerBrown::energy_unchecked(const Vec& x) const {
  double total = 0.0;
  for (const auto& term : kTerms) {
    const double dx = x[0] - term.x0;
    const double dy = x[1] - term.y0;
    total += term.amplitude * std::exp(term.a * dx * dx + term.b * dx * dy + term.c * dy * dy);
  }
  return total;
}

Vec MuellerBrown::gradient_unchecked(const Vec& x) const {
  Vec g = Vec::Zero(2);
  for (const auto& term : kTerms) {
    const double dx = x[0] - term.x0;
    const double dy = x[1] - term.y0;
    const double e =
        term.amplitude * std::exp(term.a * dx * dx + term.b * dx * dy + term.c * dy * dy);
    g[0] += e * (2.0 * term.a * dx + term.b * dy);
    g[1] += e * (term.b * dx + 2.0 * term.c * dy);
  }
  return g;
}

std::shared_ptr<const PotentialSurface> make_surface(std::string_view name, std::size_t dim) {
  if (name == "mueller-brown") return std::make_shared<MuellerBrown>();
  if (name == "quadratic") return std::make_shared<QuadraticSurface>(dim);
  if (name == "flat") return std::make_shared<FlatSurface>(dim);
  throw ConfigError("unknown surface '" + std::string(name) + "'");
}

Vec finite_difference_gradient(const PotentialSurface& surface, const Vec& x, double h) {
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = surface.energy(probe);
    probe[i] = x[i] - h;
    const double down = surface.energy(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Mat finite_difference_hessian(const PotentialSurface& surface, const Vec& x, double h) {
  const auto n = x.size();
  Mat hess(n, n);
  Vec probe = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    probe[i] = x[i] + h;
    const Vec up = surface.gradient(probe);
    probe[i] = x[i] - h;
    const Vec down = surface.gradient(probe);
    probe[i] = x[i];
    hess.col(i) = (up - down) / (2.0 * h);
  }
  return 0.5 * (hess + hess.transpose());
}

namespace {

Vec newton_on_gradient(const PotentialSurface& surface, const Vec& x0,
                       const RefineOptions& options);

// Gradient descent with Armijo backtracking into the basin, then Newton on
// the gradient for the last digits: near 1e-8 the Armijo energy decrease is
// below double resolution and descent stalls.
Vec descend_to_minimum(const PotentialSurface& surface, const Vec& x0,
                       const RefineOptions& options) {
  constexpr double kPolishBelow = 1e-4;
  Vec x = x0;
  double step = 1e-3;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Vec g = surface.gradient(x);
    const double gnorm2 = g.squaredNorm();
    if (std::sqrt(gnorm2) < std::max(options.tolerance, kPolishBelow)) break;
    const double e = surface.energy(x);
    double trial = step * 2.0;
    Vec candidate = x - trial * g;
    while (surface.energy(candidate) > e - 1e-4 * trial * gnorm2) {
      trial *= 0.5;
      if (trial < 1e-16) break;
      candidate = x - trial * g;
    }
    if (trial < 1e-16) break;
    step = trial;
    x = candidate;
  }
  if (surface.gradient(x).norm() < options.tolerance) return x;
  Vec polished;
  try {
    polished = newton_on_gradient(surface, x, options);
  } catch (const ConvergenceError&) {
    throw ConvergenceError("gradient descent did not converge", x);
  }
  const Eigen::SelfAdjointEigenSolver<Mat> eig(finite_difference_hessian(surface, polished));
  if (eig.eigenvalues().minCoeff() <= 0.0) {
    throw ConvergenceError("minimum refinement ended at a non-minimum", polished);
  }
  return polished;
}

Vec newton_on_gradient(const PotentialSurface& surface, const Vec& x0,
                       const RefineOptions& options) {
  Vec x = x0;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Vec g = surface.gradient(x);
    if (g.norm() < options.tolerance) return x;
    const Mat hess = finite_difference_hessian(surface, x);
    const Vec delta = hess.fullPivLu().solve(g);
    if (!delta.allFinite()) break;
    x -= delta;
    if (!x.allFinite()) break;
  }
  if (x.allFinite() && surface.gradient(x).norm() < options.tolerance) return x;
  throw ConvergenceError("Newton saddle refinement did not converge", x);
}

}  // namespace

Vec refine_critical_point(const PotentialSurface& surface, const Vec& x0, CriticalKind kind,
                          const RefineOptions& options) {
  return kind == CriticalKind::minimum ? descend_to_minimum(surface, x0, options)
                                       : newton_on_gradient(surface, x0, options);
}

nlohmann::json CriticalPointRegistry::to_json() const {
  auto dump = [](const std::vector<Vec>& points) {
    auto arr = nlohmann::json::array();
    for (const auto& p : points) arr.push_back(to_std(p));
    return arr;
  };
  return {{"minima", dump(minima)}, {"saddles", dump(saddles)}};
}

const CriticalPointRegistry& mueller_brown_critical_points() {
  static const CriticalPointRegistry registry = [] {
    const MuellerBrown surface;
    CriticalPointRegistry r;
    for (auto [x, y] : {std::pair{-0.56, 1.44}, {-0.05, 0.47}, {0.62, 0.03}}) {
      r.minima.push_back(refine_critical_point(surface, Vec{{x, y}}, CriticalKind::minimum));
    }
    for (auto [x, y] : {std::pair{-0.77, 0.64}, {0.22, 0.3}}) {
      r.saddles.push_back(refine_critical_point(surface, Vec{{x, y}}, CriticalKind::saddle));
    }
    return r;
  }();
  return registry;
}

CriticalPointRegistry critical_points_for(const PotentialSurface& surface) {
  if (surface.name() == "mueller-brown") return mueller_brown_critical_points();
  return {};
}

}  // namespace gfmpath
