#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gfmpath/common.hpp"

namespace gfmpath {

/// Analytic energy surface over R^dim with an exact gradient.
///
/// energy() and gradient() validate the input (length and finiteness) and
/// then dispatch to the surface-specific implementation. Surfaces are
/// immutable once built and safe to share between threads.
class PotentialSurface {
 public:
  virtual ~PotentialSurface() = default;

  virtual std::size_t dim() const = 0;
  virtual std::string name() const = 0;

  double energy(const Vec& x) const;
  Vec gradient(const Vec& x) const;

 protected:
  virtual double energy_unchecked(const Vec& x) const = 0;
  virtual Vec gradient_unchecked(const Vec& x) const = 0;

 private:
  void check(const Vec& x) const;
};

/// Four-term Mueller-Brown surface in 2D.
class MuellerBrown final : public PotentialSurface {
 public:
  struct Term {
    double amplitude, a, b, c, x0, y0;
  };
  static constexpr std::array<Term, 4> kTerms{{
      {-200.0, -1.0, 0.0, -10.0, 1.0, 0.0},
      {-100.0, -1.0, 0.0, -10.0, 0.0, 0.5},
      {-170.0, -6.5, 11.0, -6.5, -0.5, 1.5},
      {15.0, 0.7, 0.6, 0.7, -1.0, 1.0},
  }};

  std::size_t dim() const override { return 2; }
  std::string name() const override { return "mueller-brown"; }

 protected:
  double energy_unchecked(const Vec& x) const override;
  Vec gradient_unchecked(const Vec& x) const override;
};

/// 0.5 * |x|^2.
class QuadraticSurface final : public PotentialSurface {
 public:
  explicit QuadraticSurface(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "quadratic"; }

 protected:
  double energy_unchecked(const Vec& x) const override { return 0.5 * x.squaredNorm(); }
  Vec gradient_unchecked(const Vec& x) const override { return x; }

 private:
  std::size_t dim_;
};

/// U = 0 everywhere.
class FlatSurface final : public PotentialSurface {
 public:
  explicit FlatSurface(std::size_t dim) : dim_(dim) {}
  std::size_t dim() const override { return dim_; }
  std::string name() const override { return "flat"; }

 protected:
  double energy_unchecked(const Vec&) const override { return 0.0; }
  Vec gradient_unchecked(const Vec& x) const override { return Vec::Zero(x.size()); }

 private:
  std::size_t dim_;
};

/// Wraps a surface and counts every energy or gradient call.
///
/// This is the bookkeeping behind the "true energy evaluations" figure: one
/// Langevin step costs one gradient call, one path grid point costs one
/// energy call.
class CountingSurface final : public PotentialSurface {
 public:
  explicit CountingSurface(std::shared_ptr<const PotentialSurface> inner)
      : inner_(std::move(inner)) {}

  std::size_t dim() const override { return inner_->dim(); }
  std::string name() const override { return inner_->name(); }

  std::uint64_t evaluations() const { return count_.load(); }
  const PotentialSurface& inner() const { return *inner_; }

 protected:
  double energy_unchecked(const Vec& x) const override {
    ++count_;
    return inner_->energy(x);
  }
  Vec gradient_unchecked(const Vec& x) const override {
    ++count_;
    return inner_->gradient(x);
  }

 private:
  std::shared_ptr<const PotentialSurface> inner_;
  mutable std::atomic<std::uint64_t> count_{0};
};

/// Looks a surface up by CLI name: "mueller-brown", "quadratic", "flat".
/// dim is ignored by fixed-dimension surfaces.
std::shared_ptr<const PotentialSurface> make_surface(std::string_view name,
                                                     std::size_t dim = 2);

/// Central finite-difference gradient, used by tests and refinement.
Vec finite_difference_gradient(const PotentialSurface& surface, const Vec& x,
                               double h = 1e-6);

/// Symmetrised Hessian from central differences of the analytic gradient.
Mat finite_difference_hessian(const PotentialSurface& surface, const Vec& x,
                              double h = 1e-5);

enum class CriticalKind { minimum, saddle };

struct RefineOptions {
  double tolerance = 1e-8;
  int max_iterations = 200000;
};

/// Refines x0 to a nearby critical point.
///
/// Minima: gradient descent with Armijo backtracking.
/// Saddles: Newton iteration on the gradient with a finite-difference
/// Hessian.
/// Throws ConvergenceError (with the last iterate) if the gradient norm does
/// not drop below options.tolerance within the budget.
Vec refine_critical_point(const PotentialSurface& surface, const Vec& x0,
                          CriticalKind kind, const RefineOptions& options = {});

struct CriticalPointRegistry {
  std::vector<Vec> minima;
  std::vector<Vec> saddles;

  nlohmann::json to_json() const;
};

/// The three minima and two saddles of Mueller-Brown, refined from their
/// two-decimal coordinates. Minima are ordered A (upper left), B (middle),
/// C (lower right); saddles are ordered A-B then B-C.
const CriticalPointRegistry& mueller_brown_critical_points();

/// Registry for a named surface; empty for surfaces without known points.
CriticalPointRegistry critical_points_for(const PotentialSurface& surface);

}  // namespace gfmpath
