#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "gfmpath/common.hpp"
#include "gfmpath/neural.hpp"

namespace gfmpath {

// ---------------------------------------------------------------------------
// Surrogate potentials used while training the spline. They see the whole
// conditional sample (x0, xT, t) as well as the spline position and velocity;
// each implementation uses whichever part it depends on.

struct PotentialTerms {
  double value = 0.0;
  Vec grad_x;  ///< dV/dx at the spline position
  Vec grad_v;  ///< dV/dv at the spline velocity
};

class SurrogatePotential {
 public:
  virtual ~SurrogatePotential() = default;
  virtual std::string kind() const = 0;
  virtual PotentialTerms evaluate(const Vec& x0, const Vec& xT, double t, const Vec& x,
                                  const Vec& v) const = 0;
};

class ZeroPotential final : public SurrogatePotential {
 public:
  std::string kind() const override { return "zero"; }
  PotentialTerms evaluate(const Vec&, const Vec&, double, const Vec& x,
                          const Vec& v) const override {
    return {0.0, Vec::Zero(x.size()), Vec::Zero(v.size())};
  }
};

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  std::vector<Vec> centroids;
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
  int iterations = 0;
};

/// Lloyd's iteration from k-means++ seeding. Stops when assignments no longer
/// change or after max_iterations. A cluster that empties is re-seeded with
/// the point farthest from its current centroid.
KMeansResult kmeans(const std::vector<Vec>& points, std::size_t k, std::uint64_t seed,
                    int max_iterations = 300);

// ---------------------------------------------------------------------------
// RBF metric

/// How the per-cluster spread enters the bandwidth
///   lambda_k = 0.5 * (kappa * spread_k)^-2.
/// mean_squared_distance: spread_k = mean |x - c_k|^2
/// mean_distance:         spread_k = mean |x - c_k|
enum class BandwidthRule { mean_squared_distance, mean_distance };

std::string to_string(BandwidthRule rule);
BandwidthRule bandwidth_rule_from_string(const std::string& name);

inline constexpr double kMaxBandwidth = 1e8;

/// One bandwidth per cluster. Zero-spread clusters, and any bandwidth above
/// kMaxBandwidth, are set to kMaxBandwidth.
std::vector<double> fit_bandwidths(const std::vector<Vec>& points, const KMeansResult& clusters,
                                   double kappa, BandwidthRule rule);

/// Diagonal metric G(x) = (h(x) + eps)^-1 I with
///   h(x) = sum_k w_k exp(-lambda_k / 2 |x - c_k|^2).
class RbfMetric {
 public:
  RbfMetric() = default;
  RbfMetric(std::vector<Vec> centroids, std::vector<double> bandwidths,
            std::vector<double> weights, double epsilon);

  std::size_t n_centers() const { return bandwidths_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(centroids_.rows()); }
  double epsilon() const { return epsilon_; }
  const Mat& centroids() const { return centroids_; }
  const Vec& bandwidths() const { return bandwidths_; }
  const Vec& weights() const { return weights_; }
  Vec& weights() { return weights_; }

  /// exp(-lambda_k / 2 |x - c_k|^2) for every center.
  Vec kernels(const Vec& x) const;
  double h(const Vec& x) const { return weights_.dot(kernels(x)); }
  Vec h_gradient(const Vec& x) const;
  /// The common diagonal entry 1 / (h(x) + eps).
  double metric_scale(const Vec& x) const { return 1.0 / (h(x) + epsilon_); }

  /// v^T (G(x) - I) v.
  double potential(const Vec& x, const Vec& v) const;
  PotentialTerms potential_terms(const Vec& x, const Vec& v) const;

  nlohmann::json to_json() const;
  static RbfMetric from_json(const nlohmann::json& j);

 private:
  Mat centroids_;  ///< dim x K
  Vec bandwidths_;
  Vec weights_;
  double epsilon_ = 1e-3;
};

inline double metric_potential(const RbfMetric& metric, const Vec& x, const Vec& v) {
  return metric.potential(x, v);
}

struct RbfFitOptions {
  int epochs = 100;
  double lr = 1e-2;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
};

/// Sum over points of (1 - h(x))^2.
double rbf_loss(const RbfMetric& metric, const std::vector<Vec>& points);

/// Fits the weights by Adam on minibatches of the squared-deviation loss,
/// starting from the metric's current weights. Returns the full-data loss
/// before training followed by the loss after each epoch.
/// Throws DivergenceError on a non-finite loss.
std::vector<double> fit_rbf_weights(const std::vector<Vec>& points, RbfMetric& metric,
                                    const RbfFitOptions& options);

struct MetricConfig {
  std::size_t clusters = 100;
  double kappa = 1.5;
  double epsilon = 1e-3;
  BandwidthRule rule = BandwidthRule::mean_distance;
  RbfFitOptions fit;
};

/// k-means, bandwidths, then weights (from zero).
RbfMetric fit_metric(const std::vector<Vec>& points, const MetricConfig& config);

class MetricSurrogate final : public SurrogatePotential {
 public:
  explicit MetricSurrogate(RbfMetric metric) : metric_(std::move(metric)) {}
  std::string kind() const override { return "metric"; }
  PotentialTerms evaluate(const Vec&, const Vec&, double, const Vec& x,
                          const Vec& v) const override {
    return metric_.potential_terms(x, v);
  }
  const RbfMetric& metric() const { return metric_; }

 private:
  RbfMetric metric_;
};

// ---------------------------------------------------------------------------
// Latent interpolation

enum class Interpolation { linear, spherical };

std::string to_string(Interpolation kind);
Interpolation interpolation_from_string(const std::string& name);

/// Spherical interpolation falls back to linear when the endpoints are
/// (anti)parallel within 1e-8 or either is zero.
Vec interpolate(const Vec& z0, const Vec& zT, double t, Interpolation kind);

struct LatentInterpolant {
  Mlp encoder;
  Mlp decoder;
  Interpolation interpolation = Interpolation::linear;
  double final_loss = 0.0;

  int latent_dim() const { return encoder.output_dim(); }
  Vec encode(const Vec& x) const { return encoder.forward(x); }
  Vec decode(const Vec& z) const { return decoder.forward(z); }
  Vec reconstruct(const Vec& x) const { return decode(encode(x)); }
  /// Decoder(I(Encoder(x0), Encoder(xT), t)).
  Vec anchor(const Vec& x0, const Vec& xT, double t) const;

  nlohmann::json to_json() const;
  static LatentInterpolant from_json(const nlohmann::json& j);
};

/// |x_t - Decoder(I(z0, zT, t))|^2.
double latent_potential(const LatentInterpolant& model, const Vec& x0, const Vec& xT, double t,
                        const Vec& x_t);

struct AutoencoderConfig {
  int latent_dim = 2;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::selu;
  Interpolation interpolation = Interpolation::linear;
  int epochs = 100;
  double lr = 1e-3;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
};

/// Mean over points of |x - Decoder(Encoder(x))|^2.
double reconstruction_loss(const LatentInterpolant& model, const std::vector<Vec>& points);

/// Builds encoder/decoder from the config and minimises mean reconstruction
/// error with Adam. With epochs == 0 the untrained model is returned.
LatentInterpolant train_autoencoder(const std::vector<Vec>& points, const AutoencoderConfig& config);

class LatentSurrogate final : public SurrogatePotential {
 public:
  explicit LatentSurrogate(LatentInterpolant model) : model_(std::move(model)) {}
  std::string kind() const override { return "latent"; }
  PotentialTerms evaluate(const Vec& x0, const Vec& xT, double t, const Vec& x,
                          const Vec& v) const override;
  const LatentInterpolant& model() const { return model_; }

 private:
  LatentInterpolant model_;
};

/// Surrogate file: {"format":"gfmpath-potential","version":1,"kind":"metric"|"latent",...}.
void save_potential(const SurrogatePotential& potential, const std::string& path);
std::shared_ptr<const SurrogatePotential> load_potential(const std::string& path);

}  // namespace gfmpath
