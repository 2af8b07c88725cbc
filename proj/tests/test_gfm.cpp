#include <cmath>

#include "doctest.h"

#include "gfmpath/trainer.hpp"

using namespace gfmpath;

namespace {

Vec v2(double x, double y) { return (Vec(2) << x, y).finished(); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

SplineModel random_spline(int dim, std::uint64_t seed, std::vector<int> hidden = {8, 8}) {
  Rng rng(seed);
  SplineModel s = SplineModel::create(dim, hidden, rng, false);
  for (auto& p : s.net.parameters()) p += 0.1 * rng.normal();
  return s;
}

// Constant field c: zero weights, output bias c.
VelocityModel constant_field(const Vec& c) {
  VelocityModel v{Mlp({static_cast<int>(c.size()) + 1, 4, static_cast<int>(c.size())})};
  v.net.bias(1) = c;
  return v;
}

RbfMetric small_metric() {
  return RbfMetric({v2(0, 0), v2(1, 0.5)}, {2.0, 3.0}, {0.7, 0.4}, 1e-3);
}

std::vector<EndpointPair> random_pairs(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<EndpointPair> pairs;
  for (int i = 0; i < n; ++i) pairs.push_back({rng.normal_vector(2), rng.normal_vector(2)});
  return pairs;
}

// Central-difference check of an analytic parameter gradient.
template <typename Loss>
void check_parameter_gradient(Mlp& net, const Vec& grad, Loss loss, int probes, std::uint64_t seed) {
  Rng rng(seed);
  for (int i = 0; i < probes; ++i) {
    const auto k = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(net.n_parameters())));
    const double saved = net.parameters()[k];
    net.parameters()[k] = saved + 1e-5;
    const double up = loss();
    net.parameters()[k] = saved - 1e-5;
    const double down = loss();
    net.parameters()[k] = saved;
    CHECK(rel_err(grad[k], (up - down) / 2e-5) < 1e-4);
  }
}

}  // namespace

TEST_CASE("spline point") {
  SUBCASE("boundaries are exact for random nets and endpoints") {
    Rng rng(1);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto s = random_spline(2, static_cast<std::uint64_t>(trial), {4});
      const Vec x0 = rng.normal_vector(2), xT = rng.normal_vector(2);
      CHECK(spline_point(s, x0, xT, 0.0) == x0);
      CHECK(spline_point(s, x0, xT, 1.0) == xT);
    }
  }
  SUBCASE("zero network gives the straight line") {
    Rng rng(2);
    const auto s = SplineModel::create(2, {8}, rng, true);
    CHECK((spline_point(s, v2(0, 0), v2(2, 4), 0.5) - v2(1, 2)).norm() == 0.0);
    CHECK((spline_velocity(s, v2(0, 0), v2(2, 4), 0.3) - v2(2, 4)).norm() == 0.0);
  }
  SUBCASE("formula, with the network evaluated separately") {
    const auto s = random_spline(2, 3);
    const Vec x0 = v2(0.1, -0.4), xT = v2(1.2, 0.9);
    const double t = 0.37;
    Vec in(5);
    in << x0, xT, t;
    const Vec expected = (1 - t) * x0 + t * xT + t * (1 - t) * s.net.forward(in);
    CHECK((spline_point(s, x0, xT, t) - expected).norm() < 1e-15);
  }
}

TEST_CASE("spline velocity") {
  SUBCASE("constant network at t = 0.5") {
    SplineModel s{Mlp({5, 4, 2})};
    s.net.bias(1) = v2(3, -1);
    CHECK((spline_velocity(s, v2(0, 0), v2(1, 1), 0.5) - v2(1, 1)).norm() < 1e-15);
  }
  SUBCASE("time derivative of the spline point") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      const auto s = random_spline(2, 50 + static_cast<std::uint64_t>(trial));
      const Vec x0 = rng.normal_vector(2), xT = rng.normal_vector(2);
      const double t = 0.05 + 0.9 * rng.uniform();
      const Vec v = spline_velocity(s, x0, xT, t);
      const Vec fd = (spline_point(s, x0, xT, t + 1e-5) - spline_point(s, x0, xT, t - 1e-5)) / 2e-5;
      CHECK((v - fd).norm() / std::max(v.norm(), 1e-6) < 1e-4);
    }
  }
  SUBCASE("batched evaluation agrees with the single-sample path") {
    const auto s = random_spline(2, 5);
    const auto batch = make_batch(random_pairs(6, 6), {0.0, 0.2, 0.4, 0.6, 0.8, 1.0});
    const auto ev = evaluate_spline(s, batch);
    for (Eigen::Index i = 0; i < batch.size(); ++i) {
      CHECK((ev.x.col(i) - spline_point(s, batch.x0.col(i), batch.xT.col(i), batch.t[i])).norm() < 1e-14);
      CHECK((ev.v.col(i) - spline_velocity(s, batch.x0.col(i), batch.xT.col(i), batch.t[i])).norm() < 1e-13);
    }
  }
}

TEST_CASE("spline loss") {
  const auto pairs = random_pairs(5, 7);
  const ZeroPotential zero;
  SUBCASE("zero network, zero potential") {
    Rng rng(1);
    const auto s = SplineModel::create(2, {8}, rng, true);
    double expected = 0;
    for (const auto& p : pairs) expected += 0.5 * (p.xT - p.x0).squaredNorm() / 5.0;
    CHECK(spline_loss(s, pairs, zero, 1, 3).value == doctest::Approx(expected).epsilon(1e-14));
    CHECK(spline_loss(s, {{v2(1, 1), v2(1, 1)}}, zero, 4, 3).value == 0.0);
  }
  SUBCASE("gradients with each surrogate") {
    Rng init(1);
    LatentInterpolant latent;
    latent.encoder = Mlp::lecun_normal({2, 4, 2}, Activation::selu, init);
    latent.decoder = Mlp::lecun_normal({2, 4, 2}, Activation::selu, init);
    const MetricSurrogate metric(small_metric());
    const LatentSurrogate lat(latent);
    for (const SurrogatePotential* pot : std::initializer_list<const SurrogatePotential*>{&zero, &metric, &lat}) {
      auto s = random_spline(2, 8);
      Rng rng(9);
      const auto batch = make_batch(pairs, 3, rng);
      const auto res = spline_loss(s, batch, *pot);
      check_parameter_gradient(s.net, res.grad, [&] { return spline_loss(s, batch, *pot).value; }, 25, 10);
    }
  }
}

TEST_CASE("flow loss") {
  const auto pairs = random_pairs(4, 11);
  SUBCASE("exact velocity gives zero") {
    Rng rng(1);
    const auto s = SplineModel::create(2, {8}, rng, true);
    const EndpointPair p{v2(0, 0), v2(1, -2)};
    CHECK(flow_loss(constant_field(v2(1, -2)), s, {p}, 8, 0).value == 0.0);
  }
  SUBCASE("stop-gradient and parameter gradient") {
    const auto s = random_spline(2, 12);
    Rng vr(13);
    auto v = VelocityModel::create(2, {8, 8}, vr);
    Rng rng(14);
    const auto batch = make_batch(pairs, 2, rng);
    const auto res = flow_loss(v, s, batch);
    CHECK(res.spline_grad.size() == s.net.n_parameters());
    CHECK(res.spline_grad.norm() == 0.0);
    check_parameter_gradient(v.net, res.grad, [&] { return flow_loss(v, s, batch).value; }, 25, 15);
  }
  SUBCASE("training on one pair recovers the constant target") {
    Rng rng(16);
    const auto s = SplineModel::create(2, {8}, rng, true);
    auto v = VelocityModel::create(2, {32, 32}, rng);
    const EndpointPair p{v2(-0.5, 1.4), v2(0.6, 0.0)};
    const std::vector<EndpointPair> pairs1(64, p);
    Adam opt(static_cast<std::size_t>(v.net.n_parameters()), {.lr = 1e-3});
    for (int step = 0; step < 3000; ++step) {
      const auto batch = make_batch(pairs1, 1, rng);
      opt.step(v.net.parameters(), flow_loss(v, s, batch).grad);
    }
    double worst = 0;
    for (int i = 0; i <= 100; ++i) {
      const double t = i / 100.0;
      const Vec x = (1 - t) * p.x0 + t * p.xT;
      worst = std::max(worst, (v(x, t) - (p.xT - p.x0)).lpNorm<Eigen::Infinity>());
    }
    CHECK(worst < 1e-2);
  }
}

TEST_CASE("ode integration") {
  SUBCASE("constant field") {
    const auto path = integrate_path(constant_field(v2(0.5, -1)), v2(1, 1), 10, OdeMethod::rk4);
    REQUIRE(path.size() == 11);
    CHECK(path.times.front() == 0.0);
    CHECK(path.times.back() == 1.0);
    for (std::size_t i = 0; i < path.size(); ++i) {
      CHECK((path.states[i] - (v2(1, 1) + path.times[i] * v2(0.5, -1))).norm() < 1e-14);
    }
  }
  SUBCASE("linear growth recovers e x0") {
    const VectorField grow = [](const Mat& x, double) { return x; };
    const auto paths = integrate_field(grow, {v2(1, -2), v2(0.3, 0.7)}, 100, OdeMethod::rk4);
    CHECK((paths[0].states.back() - std::exp(1.0) * v2(1, -2)).norm() < 1e-5);
    CHECK((paths[1].states.back() - std::exp(1.0) * v2(0.3, 0.7)).norm() < 1e-5);
  }
  SUBCASE("one Euler step") {
    Rng rng(1);
    const auto v = VelocityModel::create(2, {8}, rng);
    const auto path = integrate_path(v, v2(0.2, 0.1), 1, OdeMethod::euler);
    CHECK((path.states.back() - (v2(0.2, 0.1) + v(v2(0.2, 0.1), 0.0))).norm() < 1e-15);
  }
  SUBCASE("divergence reports the step") {
    const VectorField blow = [](const Mat& x, double) { return Mat(x.array().square() * 1e200); };
    try {
      integrate_field(blow, {v2(1e100, 0)}, 5, OdeMethod::euler);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(e.step() >= 0);
    }
  }
  SUBCASE("interpolation along a path") {
    const auto path = integrate_path(constant_field(v2(1, 0)), v2(0, 0), 4, OdeMethod::euler);
    CHECK((path.at(0.375) - v2(0.375, 0)).norm() < 1e-15);
    CHECK((path.at(2.0) - v2(1, 0)).norm() == 0.0);
  }
}

TEST_CASE("path cost") {
  SUBCASE("stationary path at a zero-velocity point") {
    MuellerBrown mb;
    const Vec p = v2(0.1, 0.4);
    TransitionPath path;
    for (int i = 0; i <= 10; ++i) path.times.push_back(i / 10.0), path.states.push_back(p);
    CHECK(path_cost(path, constant_field(Vec::Zero(2)), mb) == doctest::Approx(mb.energy(p)).epsilon(1e-14));
  }
  SUBCASE("zero field on the flat surface") {
    const auto path = integrate_path(constant_field(v2(1, 1)), v2(0, 0), 20, OdeMethod::euler);
    CHECK(path_cost(path, constant_field(Vec::Zero(2)), FlatSurface(2)) == 0.0);
  }
  SUBCASE("straight line on the quadratic") {
    // x(t) = a + t d with |x'| constant:
    // integral = |d|^2 / 2 + (|a|^2 + a.d + |d|^2 / 3) / 2.
    const Vec a = v2(1, 0), d = v2(-1, 2);
    const auto field = constant_field(d);
    const auto path = integrate_path(field, a, 100, OdeMethod::rk4);
    const double exact = 0.5 * d.squaredNorm() + 0.5 * (a.squaredNorm() + a.dot(d) + d.squaredNorm() / 3.0);
    CHECK(std::abs(path_cost(path, field, QuadraticSurface(2)) - exact) < 1e-3);
  }
  SUBCASE("one energy call per grid point") {
    CountingSurface counted(std::make_shared<MuellerBrown>());
    const auto path = integrate_path(constant_field(v2(0.1, 0)), v2(0, 0.5), 100, OdeMethod::rk4);
    path_cost(path, constant_field(v2(0.1, 0)), counted);
    CHECK(counted.evaluations() == 101);
  }
}

TEST_CASE("weights") {
  SUBCASE("closed forms") {
    const auto eq = normalize_weights({2.5, 2.5});
    CHECK(eq[0] == 0.5);
    CHECK(eq[1] == 0.5);
    const auto w = normalize_weights({0.0, std::log(3.0)});
    CHECK(w[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(0.25).epsilon(1e-15));
  }
  SUBCASE("sum to one, non-negative, shift invariant") {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> costs(1 + rng.index(50));
      // Multiples of 1/8 keep the shifted differences exact.
      for (auto& c : costs) c = std::floor(rng.uniform() * 800.0) / 8.0 - 50.0;
      const auto w = normalize_weights(costs);
      double total = 0;
      for (double x : w) {
        CHECK(x >= 0.0);
        total += x;
      }
      CHECK(std::abs(total - 1.0) < 1e-14);
      auto shifted = costs;
      const double k = std::floor(rng.uniform() * 1000.0) - 500.0;
      for (auto& c : shifted) c += k;
      CHECK(normalize_weights(shifted) == w);
    }
  }
  SUBCASE("huge costs stay finite") {
    const auto w = normalize_weights({1e6, 1e6 + 1.0});
    CHECK(w[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK_THROWS_AS(normalize_weights({0.0, NAN}), ContractError);
  }
}

TEST_CASE("replay loss") {
  SUBCASE("degenerate constant path") {
    Rng rng(1);
    const auto s = SplineModel::create(2, {8}, rng, true);
    const Vec g = v2(0.3, 0.3);
    TransitionPath path{{0.0, 1.0}, {g, g}};
    CHECK(replay_loss(s, path, {{g, g}}, 3).value == 0.0);
  }
  SUBCASE("zero network on the straight line") {
    Rng rng(2);
    const auto s = SplineModel::create(2, {8}, rng, true);
    const Vec x0 = v2(0, 0), xT = v2(1, 2);
    TransitionPath line{{0.0, 0.5, 1.0}, {x0, 0.5 * (x0 + xT), xT}};
    CHECK(replay_loss(s, line, {{x0, xT}}, 4).value == doctest::Approx((xT - x0).squaredNorm()).epsilon(1e-14));
  }
  SUBCASE("gradient") {
    auto s = random_spline(2, 3);
    const auto path = integrate_path(constant_field(v2(0.8, -0.3)), v2(0.1, 0.1), 20, OdeMethod::rk4);
    Rng rng(4);
    const auto batch = make_batch(random_pairs(4, 5), 3, rng);
    const auto res = replay_loss(s, path, batch);
    check_parameter_gradient(s.net, res.grad, [&] { return replay_loss(s, path, batch).value; }, 25, 6);
  }
}

TEST_CASE("replay buffer") {
  auto weighted = [](double w) {
    TransitionPath p{{0.0, 1.0}, {v2(0, 0), v2(1, 1)}};
    p.weight = w;
    return p;
  };
  ReplayBuffer buf(3);
  Rng rng(1);
  for (double w : {0.1, 0.5, 0.3, 0.05, 0.7, 0.2, 0.9}) {
    const double floor_before = buf.size() == buf.capacity() ? buf[buf.size() - 1].weight : -1.0;
    const auto evicted_before = buf.evictions();
    buf.push(weighted(w));
    CHECK(buf.size() <= buf.capacity());
    if (buf.evictions() > evicted_before) {
      // Whatever left weighed no more than anything still held.
      CHECK(std::min(floor_before, w) <= buf[buf.size() - 1].weight);
    }
    for (std::size_t i = 1; i < buf.size(); ++i) CHECK(buf[i - 1].weight >= buf[i].weight);
  }
  CHECK(buf[0].weight == 0.9);
  CHECK(buf[1].weight == 0.7);
  CHECK(buf[2].weight == 0.5);
  CHECK(buf.evictions() == 4);
  CHECK_THROWS_AS(buf.push(TransitionPath{{0.0, 1.0}, {v2(0, 0), v2(1, 1)}}), ContractError);

  std::vector<int> counts(3, 0);
  for (int i = 0; i < 21000; ++i) ++counts[buf.sample_index(rng)];
  CHECK(counts[0] / 21000.0 == doctest::Approx(0.9 / 2.1).epsilon(0.05));
  CHECK(counts[2] / 21000.0 == doctest::Approx(0.5 / 2.1).epsilon(0.05));
}

TEST_CASE("training loop") {
  // Two small Gaussian pools on Mueller-Brown.
  MuellerBrown mb;
  const auto& reg = mueller_brown_critical_points();
  EndpointDataset data;
  Rng rng(3);
  for (int i = 0; i < 128; ++i) {
    data.pool_a.push_back(reg.minima[0] + 0.05 * rng.normal_vector(2));
    data.pool_b.push_back(reg.minima[1] + 0.05 * rng.normal_vector(2));
  }
  const MetricSurrogate potential(small_metric());
  TrainConfig cfg;
  cfg.hidden = {16, 16};
  cfg.batch = 32;
  cfg.lr_spline = 1e-3;
  cfg.resample_rounds = 0;
  cfg.seed = 4;
  const Coupling ot(CouplingKind::minibatch_ot, 32);

  SUBCASE("zero epochs return the initialized models") {
    cfg.epochs = 0;
    cfg.resample_rounds = 1;
    const auto r = train(cfg, data, potential, ot, nullptr);
    Rng seed_rng(cfg.seed);
    Rng init(seed_rng.fork());
    const auto s = SplineModel::create(2, cfg.hidden, init, true);
    const auto v = VelocityModel::create(2, cfg.hidden, init);
    CHECK(r.spline.net.parameters() == s.net.parameters());
    CHECK(r.velocity.net.parameters() == v.net.parameters());
    CHECK(r.log.empty());
    CHECK(r.buffer.empty());
  }
  SUBCASE("spline loss decreases and training spends no true energy") {
    cfg.epochs = 20;
    CountingSurface counted(std::make_shared<MuellerBrown>());
    int hooks = 0;
    const auto r = train(cfg, data, potential, ot, &counted, [&](const TrainResult&, const std::string&, int) { ++hooks; });
    CHECK(counted.evaluations() == 0);
    CHECK(r.u_evaluations == 0);
    CHECK(hooks == 40);
    // 256 states, batch 32: 8 iterations per epoch.
    CHECK(r.log.size() == 2 * 20 * 8);
    double first = 0, last = 0;
    for (int i = 0; i < 8; ++i) {
      first += r.log[160 + static_cast<std::size_t>(i)].loss_spline;
      last += r.log[r.log.size() - 1 - static_cast<std::size_t>(i)].loss_spline;
    }
    CHECK(last < first);
    for (const auto& e : r.log) CHECK(e.u_evaluations == 0);
  }
  SUBCASE("a resampling round costs paths x grid points") {
    cfg.epochs = 2;
    cfg.resample_rounds = 1;
    cfg.resample_paths = 7;
    cfg.train_ode = {20, OdeMethod::rk4};
    cfg.replay_max_steps = 15;
    CountingSurface counted(std::make_shared<MuellerBrown>());
    const auto r = train(cfg, data, potential, ot, &counted);
    CHECK(counted.evaluations() == 7 * 21);
    CHECK(r.u_evaluations == 7 * 21);
    CHECK(r.buffer.size() == 7);
    for (std::size_t i = 1; i < r.buffer.size(); ++i) CHECK(r.buffer[i - 1].weight >= r.buffer[i].weight);
    std::size_t replays = 0;
    for (const auto& e : r.log) replays += e.phase == "replay";
    CHECK(replays >= 1);
    CHECK(replays <= 15);
    CHECK(r.log.back().u_evaluations == 7 * 21);
    CHECK_THROWS_AS(train(cfg, data, potential, ot, nullptr), ConfigError);
  }
  SUBCASE("seeded runs are identical") {
    cfg.epochs = 2;
    const auto a = train(cfg, data, potential, ot, nullptr);
    const auto b = train(cfg, data, potential, ot, nullptr);
    CHECK(a.velocity.net.parameters() == b.velocity.net.parameters());
    CHECK(a.spline.net.parameters() == b.spline.net.parameters());
  }
  SUBCASE("config round trip") {
    cfg.epochs = 7;
    const auto back = TrainConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
  }
}
