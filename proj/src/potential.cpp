#include "gfmpath/potential.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace gfmpath {

// ---------------------------------------------------------------------------
// k-means

namespace {

std::size_t nearest(const std::vector<Vec>& centroids, const Vec& x, double* dist2 = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = (x - centroids[c]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

std::vector<Vec> kmeans_plus_plus(const std::vector<Vec>& points, std::size_t k, Rng& rng) {
  std::vector<Vec> centroids;
  centroids.push_back(points[rng.index(points.size())]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = (points[i] - centroids[0]).squaredNorm();
  while (centroids.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (d2[i] <= 0.0) continue;
        if (target < d2[i]) {
          pick = i;
          break;
        }
        target -= d2[i];
      }
      // Rounding can land on an already chosen point; take the last eligible one instead.
      if (d2[pick] <= 0.0) {
        for (std::size_t i = points.size(); i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      pick = rng.index(points.size());
    }
    centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = std::min(d2[i], (points[i] - centroids.back()).squaredNorm());
    }
  }
  return centroids;
}

}  // namespace

KMeansResult kmeans(const std::vector<Vec>& points, std::size_t k, std::uint64_t seed,
                    int max_iterations) {
  if (k == 0) throw ContractError("kmeans: k must be >= 1");
  if (k > points.size()) throw ContractError("kmeans: k exceeds the number of points");
  Rng rng(seed);
  KMeansResult result;
  result.centroids = kmeans_plus_plus(points, k, rng);
  result.assignments.assign(points.size(), k);  // k marks "unassigned"

  const auto dim = points.front().size();
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto c = nearest(result.centroids, points[i]);
      if (c != result.assignments[i]) {
        result.assignments[i] = c;
        changed = true;
      }
    }
    result.iterations = it + 1;
    if (!changed) break;

    std::vector<Vec> sums(k, Vec::Zero(dim));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      sums[result.assignments[i]] += points[i];
      ++counts[result.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        result.centroids[c] = sums[c] / static_cast<double>(counts[c]);
        continue;
      }
      // Empty cluster: move it onto the point farthest from its centroid.
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = (points[i] - result.centroids[result.assignments[i]]).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      result.centroids[c] = points[far];
      result.assignments[far] = c;
    }
  }

  result.inertia = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    result.inertia += (points[i] - result.centroids[result.assignments[i]]).squaredNorm();
  }
  return result;
}

// ---------------------------------------------------------------------------
// RBF metric

std::string to_string(BandwidthRule rule) {
  return rule == BandwidthRule::mean_distance ? "mean-distance" : "mean-squared-distance";
}

BandwidthRule bandwidth_rule_from_string(const std::string& name) {
  if (name == "mean-distance") return BandwidthRule::mean_distance;
  if (name == "mean-squared-distance") return BandwidthRule::mean_squared_distance;
  throw ConfigError("unknown bandwidth rule '" + name + "'");
}

std::vector<double> fit_bandwidths(const std::vector<Vec>& points, const KMeansResult& clusters,
                                   double kappa, BandwidthRule rule) {
  const auto k = clusters.centroids.size();
  std::vector<double> spread(k, 0.0);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto c = clusters.assignments[i];
    const double d2 = (points[i] - clusters.centroids[c]).squaredNorm();
    spread[c] += rule == BandwidthRule::mean_squared_distance ? d2 : std::sqrt(d2);
    ++counts[c];
  }
  std::vector<double> lambda(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) throw ContractError("fit_bandwidths: empty cluster");
    const double scaled = kappa * spread[c] / static_cast<double>(counts[c]);
    lambda[c] = scaled > 0.0 ? std::min(0.5 / (scaled * scaled), kMaxBandwidth) : kMaxBandwidth;
  }
  return lambda;
}

RbfMetric::RbfMetric(std::vector<Vec> centroids, std::vector<double> bandwidths,
                     std::vector<double> weights, double epsilon)
    : epsilon_(epsilon) {
  const auto k = centroids.size();
  if (k == 0) throw ContractError("RbfMetric needs at least one center");
  if (bandwidths.size() != k || weights.size() != k) {
    throw ContractError("RbfMetric: centers, bandwidths and weights differ in length");
  }
  if (!(epsilon > 0.0)) throw ContractError("RbfMetric: epsilon must be > 0");
  centroids_.resize(centroids.front().size(), static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) centroids_.col(static_cast<Eigen::Index>(c)) = centroids[c];
  bandwidths_ = from_std(bandwidths);
  weights_ = from_std(weights);
  if ((bandwidths_.array() <= 0.0).any()) throw ContractError("RbfMetric: bandwidths must be > 0");
}

Vec RbfMetric::kernels(const Vec& x) const {
  const Vec d2 = (centroids_.colwise() - x).colwise().squaredNorm().transpose();
  return (-0.5 * bandwidths_.array() * d2.array()).exp().matrix();
}

Vec RbfMetric::h_gradient(const Vec& x) const {
  const Vec k = kernels(x);
  // d/dx w_k exp(-l_k/2 |x-c_k|^2) = -w_k l_k exp(...) (x - c_k)
  const Vec coeff = (weights_.array() * bandwidths_.array() * k.array()).matrix();
  return -(x * coeff.sum() - centroids_ * coeff);
}

double RbfMetric::potential(const Vec& x, const Vec& v) const {
  return (metric_scale(x) - 1.0) * v.squaredNorm();
}

PotentialTerms RbfMetric::potential_terms(const Vec& x, const Vec& v) const {
  const Vec k = kernels(x);
  const double hx = weights_.dot(k);
  const double scale = 1.0 / (hx + epsilon_);
  const double v2 = v.squaredNorm();
  const Vec coeff = (weights_.array() * bandwidths_.array() * k.array()).matrix();
  const Vec grad_h = -(x * coeff.sum() - centroids_ * coeff);
  PotentialTerms terms;
  terms.value = (scale - 1.0) * v2;
  terms.grad_v = 2.0 * (scale - 1.0) * v;
  terms.grad_x = -(scale * scale * v2) * grad_h;
  return terms;
}

nlohmann::json RbfMetric::to_json() const {
  auto centers = nlohmann::json::array();
  for (Eigen::Index c = 0; c < centroids_.cols(); ++c) centers.push_back(to_std(centroids_.col(c)));
  return {{"centroids", centers},
          {"bandwidths", to_std(bandwidths_)},
          {"weights", to_std(weights_)},
          {"epsilon", epsilon_}};
}

RbfMetric RbfMetric::from_json(const nlohmann::json& j) {
  std::vector<Vec> centers;
  for (const auto& c : j.at("centroids")) centers.push_back(from_std(c.get<std::vector<double>>()));
  return {std::move(centers), j.at("bandwidths").get<std::vector<double>>(),
          j.at("weights").get<std::vector<double>>(), j.at("epsilon").get<double>()};
}

double rbf_loss(const RbfMetric& metric, const std::vector<Vec>& points) {
  double loss = 0.0;
  for (const auto& x : points) {
    const double r = 1.0 - metric.h(x);
    loss += r * r;
  }
  return loss;
}

std::vector<double> fit_rbf_weights(const std::vector<Vec>& points, RbfMetric& metric,
                                    const RbfFitOptions& options) {
  if (points.empty()) throw ContractError("fit_rbf_weights: no data");
  // Kernel values do not depend on the weights; compute them once.
  Mat kernels(static_cast<Eigen::Index>(metric.n_centers()), static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) kernels.col(static_cast<Eigen::Index>(i)) = metric.kernels(points[i]);

  auto full_loss = [&] {
    return (Vec::Ones(kernels.cols()) - kernels.transpose() * metric.weights()).squaredNorm();
  };

  Rng rng(options.seed);
  Adam adam(metric.n_centers(), {.lr = options.lr});
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> history{full_loss()};
  const std::size_t batch = std::max<std::size_t>(1, options.batch);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto end = std::min(order.size(), start + batch);
      Vec grad = Vec::Zero(static_cast<Eigen::Index>(metric.n_centers()));
      for (std::size_t i = start; i < end; ++i) {
        const auto col = kernels.col(static_cast<Eigen::Index>(order[i]));
        const double residual = 1.0 - metric.weights().dot(col);
        grad -= 2.0 * residual * col;
      }
      adam.step(metric.weights(), grad);
    }
    history.push_back(full_loss());
    if (!std::isfinite(history.back())) throw DivergenceError("RBF weight fit diverged", epoch);
  }
  return history;
}

RbfMetric fit_metric(const std::vector<Vec>& points, const MetricConfig& config) {
  const auto clusters = kmeans(points, config.clusters, config.fit.seed);
  auto lambda = fit_bandwidths(points, clusters, config.kappa, config.rule);
  RbfMetric metric(clusters.centroids, std::move(lambda),
                   std::vector<double>(clusters.centroids.size(), 0.0), config.epsilon);
  fit_rbf_weights(points, metric, config.fit);
  return metric;
}

// ---------------------------------------------------------------------------
// Latent interpolation

std::string to_string(Interpolation kind) {
  return kind == Interpolation::linear ? "linear" : "spherical";
}

Interpolation interpolation_from_string(const std::string& name) {
  if (name == "linear") return Interpolation::linear;
  if (name == "spherical") return Interpolation::spherical;
  throw ConfigError("unknown interpolation '" + name + "'");
}

Vec interpolate(const Vec& z0, const Vec& zT, double t, Interpolation kind) {
  if (kind == Interpolation::spherical) {
    const double n0 = z0.norm();
    const double nT = zT.norm();
    if (n0 > 0.0 && nT > 0.0) {
      const double cosine = std::clamp(z0.dot(zT) / (n0 * nT), -1.0, 1.0);
      const double omega = std::acos(cosine);
      const double s = std::sin(omega);
      if (s > 1e-8) {
        return (std::sin((1.0 - t) * omega) / s) * z0 + (std::sin(t * omega) / s) * zT;
      }
    }
  }
  return (1.0 - t) * z0 + t * zT;
}

Vec LatentInterpolant::anchor(const Vec& x0, const Vec& xT, double t) const {
  return decode(interpolate(encode(x0), encode(xT), t, interpolation));
}

nlohmann::json LatentInterpolant::to_json() const {
  return {{"encoder", encoder.to_json()},
          {"decoder", decoder.to_json()},
          {"interpolation", to_string(interpolation)},
          {"final_loss", final_loss}};
}

LatentInterpolant LatentInterpolant::from_json(const nlohmann::json& j) {
  LatentInterpolant model;
  model.encoder = Mlp::from_json(j.at("encoder"));
  model.decoder = Mlp::from_json(j.at("decoder"));
  model.interpolation = interpolation_from_string(j.at("interpolation").get<std::string>());
  model.final_loss = j.value("final_loss", 0.0);
  if (model.encoder.input_dim() != model.decoder.output_dim() ||
      model.encoder.output_dim() != model.decoder.input_dim()) {
    throw SchemaError("latent model: encoder and decoder dimensions disagree");
  }
  return model;
}

double latent_potential(const LatentInterpolant& model, const Vec& x0, const Vec& xT, double t,
                        const Vec& x_t) {
  return (x_t - model.anchor(x0, xT, t)).squaredNorm();
}

double reconstruction_loss(const LatentInterpolant& model, const std::vector<Vec>& points) {
  if (points.empty()) throw ContractError("reconstruction_loss: no data");
  Mat x(points.front().size(), static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = points[i];
  const Mat recon = model.decoder.forward(model.encoder.forward(x));
  return (recon - x).colwise().squaredNorm().mean();
}

LatentInterpolant train_autoencoder(const std::vector<Vec>& points, const AutoencoderConfig& config) {
  if (points.empty()) throw ContractError("train_autoencoder: no data");
  const int dim = static_cast<int>(points.front().size());
  Rng rng(config.seed);

  std::vector<int> enc_dims{dim};
  enc_dims.insert(enc_dims.end(), config.hidden.begin(), config.hidden.end());
  enc_dims.push_back(config.latent_dim);
  std::vector<int> dec_dims{config.latent_dim};
  dec_dims.insert(dec_dims.end(), config.hidden.rbegin(), config.hidden.rend());
  dec_dims.push_back(dim);

  LatentInterpolant model;
  model.encoder = Mlp::lecun_normal(enc_dims, config.activation, rng);
  model.decoder = Mlp::lecun_normal(dec_dims, config.activation, rng);
  model.interpolation = config.interpolation;

  Adam enc_opt(static_cast<std::size_t>(model.encoder.n_parameters()), {.lr = config.lr});
  Adam dec_opt(static_cast<std::size_t>(model.decoder.n_parameters()), {.lr = config.lr});
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, config.batch);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const auto end = std::min(order.size(), start + batch);
      const auto n = static_cast<Eigen::Index>(end - start);
      Mat x(dim, n);
      for (Eigen::Index c = 0; c < n; ++c) x.col(c) = points[order[start + static_cast<std::size_t>(c)]];

      Mlp::Tape enc_tape, dec_tape;
      const Mat z = model.encoder.forward(x, enc_tape);
      const Mat recon = model.decoder.forward(z, dec_tape);
      const Mat upstream = (2.0 / static_cast<double>(n)) * (recon - x);
      Vec dec_grad = Vec::Zero(model.decoder.n_parameters());
      Vec enc_grad = Vec::Zero(model.encoder.n_parameters());
      const Mat gz = model.decoder.backward(dec_tape, upstream, dec_grad);
      model.encoder.backward(enc_tape, gz, enc_grad);
      dec_opt.step(model.decoder.parameters(), dec_grad);
      enc_opt.step(model.encoder.parameters(), enc_grad);
    }
    if (!model.encoder.parameters().allFinite() || !model.decoder.parameters().allFinite()) {
      throw DivergenceError("autoencoder training diverged", epoch);
    }
  }
  model.final_loss = reconstruction_loss(model, points);
  return model;
}

PotentialTerms LatentSurrogate::evaluate(const Vec& x0, const Vec& xT, double t, const Vec& x,
                                         const Vec& v) const {
  const Vec residual = x - model_.anchor(x0, xT, t);
  return {residual.squaredNorm(), 2.0 * residual, Vec::Zero(v.size())};
}

// ---------------------------------------------------------------------------

void save_potential(const SurrogatePotential& potential, const std::string& path) {
  nlohmann::json j = {{"format", "gfmpath-potential"}, {"version", 1}, {"kind", potential.kind()}};
  if (const auto* m = dynamic_cast<const MetricSurrogate*>(&potential)) {
    j["metric"] = m->metric().to_json();
  } else if (const auto* l = dynamic_cast<const LatentSurrogate*>(&potential)) {
    j["latent"] = l->model().to_json();
  } else if (potential.kind() != "zero") {
    throw ContractError("save_potential: unsupported potential kind " + potential.kind());
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::shared_ptr<const SurrogatePotential> load_potential(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  try {
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "gfmpath-potential" || j.value("version", 0) != 1) {
      throw SchemaError(path + ": not a version-1 potential file");
    }
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "metric") return std::make_shared<MetricSurrogate>(RbfMetric::from_json(j.at("metric")));
    if (kind == "latent") return std::make_shared<LatentSurrogate>(LatentInterpolant::from_json(j.at("latent")));
    if (kind == "zero") return std::make_shared<ZeroPotential>();
    throw SchemaError(path + ": unknown potential kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path + ": malformed potential: " + e.what());
  }
}

}  // namespace gfmpath
