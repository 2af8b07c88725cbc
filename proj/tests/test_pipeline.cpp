#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"

#include "gfmpath/pipeline.hpp"

using namespace gfmpath;
using nlohmann::json;

TEST_CASE("run config") {
  SUBCASE("defaults round trip") {
    const RunConfig c;
    CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK(RunConfig::from_json(json::object()).to_json() == c.to_json());
  }
  SUBCASE("reference defaults") {
    const auto j = RunConfig{}.to_json();
    CHECK(j["simulate"]["steps"] == 12000);
    CHECK(j["simulate"]["dt"] == 1e-4);
    CHECK(j["simulate"]["xi"] == 5.0);
    CHECK(j["simulate"]["samples"] == 2000);
    CHECK(j["potential"]["metric"]["clusters"] == 100);
    CHECK(j["potential"]["metric"]["kappa"] == 1.5);
    CHECK(j["potential"]["metric"]["epsilon"] == 1e-3);
    CHECK(j["coupling"]["kind"] == "minibatch-ot");
    CHECK(j["train"]["epochs"] == 100);
    CHECK(j["train"]["batch"] == 256);
    CHECK(j["train"]["lr_spline"] == 1e-5);
    CHECK(j["train"]["lr_flow"] == 1e-3);
    CHECK(j["sample"]["n_paths"] == 1000);
    CHECK(j["sample"]["ode_steps"] == 500);
  }
  SUBCASE("partial documents keep the other defaults") {
    const auto c = RunConfig::from_json({{"train", {{"epochs", 3}}}, {"simulate", {{"start_b", "C"}}}});
    CHECK(c.train.epochs == 3);
    CHECK(c.train.batch == 256);
    CHECK(c.simulate.start_b == "C");
    CHECK(c.simulate.langevin.n_steps == 12000);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(RunConfig::from_json({{"train", {{"epoch", 3}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"trian", json::object()}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"train", {{"epochs", "many"}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"coupling", {{"kind", "sinkhorn"}}}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"simulate", {{"dt", -1.0}}}}), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), IoError);
  }
}

TEST_CASE("overrides") {
  json j = json::object();
  apply_override(j, "train.epochs=7");
  apply_override(j, "simulate.start_a=0.1,0.2");
  apply_override(j, "coupling.kind=product");
  apply_override(j, "train.hidden=[16,16]");
  CHECK(j["train"]["epochs"] == 7);
  CHECK(j["simulate"]["start_a"] == "0.1,0.2");
  CHECK(j["coupling"]["kind"] == "product");
  const auto c = RunConfig::from_json(j);
  CHECK(c.train.hidden == std::vector<int>{16, 16});
  CHECK(c.coupling.kind == CouplingKind::product);
  CHECK_THROWS_AS(apply_override(j, "no-equals-sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "=3"), ConfigError);
}

TEST_CASE("start resolution") {
  MuellerBrown mb;
  const auto& reg = mueller_brown_critical_points();
  CHECK(resolve_start("A", mb) == reg.minima[0]);
  CHECK(resolve_start("C", mb) == reg.minima[2]);
  CHECK(resolve_start("0.5, -0.25", mb) == (Vec(2) << 0.5, -0.25).finished());
  CHECK_THROWS_AS(resolve_start("D", mb), ConfigError);
  CHECK_THROWS_AS(resolve_start("1,2,3", mb), ConfigError);
  CHECK_THROWS_AS(resolve_start("x,y", mb), ConfigError);
  CHECK_THROWS_AS(resolve_start("A", QuadraticSurface(2)), ConfigError);
}

TEST_CASE("simulation spends two gradient calls per step") {
  RunConfig c;
  c.simulate.langevin.n_steps = 300;
  c.simulate.samples = 100;
  const CountingSurface counted(surface_for(c.simulate));
  const auto data = run_simulate(c, counted);
  CHECK(counted.evaluations() == 600);
  CHECK(data.meta["u_evaluations"] == 600);
  CHECK(data.pool_a.size() == 100);
}

TEST_CASE("stages at small scale") {
  RunConfig c;
  c.simulate.langevin.n_steps = 600;
  c.simulate.samples = 200;
  c.potential.metric.clusters = 10;
  c.potential.metric.fit.epochs = 5;
  c.train.hidden = {8, 8};
  c.train.epochs = 2;
  c.train.batch = 64;
  c.train.resample_rounds = 0;
  c.coupling.batch = 64;
  c.sample.n_paths = 12;
  c.sample.ode_steps = 20;
  c.baseline.n_paths = 12;
  c.baseline.n_points = 21;

  const CountingSurface counted(surface_for(c.simulate));
  const auto data = run_simulate(c, counted);
  const auto potential = run_fit_potential(c, data);
  CHECK(potential->kind() == "metric");
  const auto trained = run_train(c, data, *potential, &counted);
  CHECK(counted.evaluations() == 1200);

  const auto paths = run_sample(c, data, trained.velocity);
  REQUIRE(paths.size() == 12);
  CHECK(paths[0].size() == 21);
  // Starts come from pool A.
  for (const auto& p : paths) {
    CHECK(std::find(data.pool_a.begin(), data.pool_a.end(), p.states.front()) != data.pool_a.end());
  }
  const auto again = run_sample(c, data, trained.velocity);
  CHECK(again[3].states.back() == paths[3].states.back());

  const auto rep = run_evaluate(c, paths, counted.inner());
  CHECK(rep.n_paths == 12);

  const auto linear = run_baseline(c, &data);
  REQUIRE(linear.paths.size() == 12);
  CHECK(linear.paths[0].size() == 21);
  CHECK(linear.idpp_history.empty());

  SUBCASE("top-k evaluation uses weights") {
    auto weighted = paths;
    for (std::size_t i = 0; i < weighted.size(); ++i) weighted[i].weight = static_cast<double>(i);
    RunConfig k = c;
    k.evaluate.top_k = 4;
    CHECK(run_evaluate(k, weighted, counted.inner()).n_paths == 4);
  }
  SUBCASE("latent surrogate") {
    RunConfig l = c;
    l.potential.kind = "latent";
    l.potential.latent.epochs = 2;
    CHECK(run_fit_potential(l, data)->kind() == "latent");
  }
  SUBCASE("idpp baseline on the tetramer") {
    RunConfig b = c;
    b.baseline.kind = "idpp";
    b.baseline.idpp_pairs = 4;
    b.baseline.idpp.epochs = 5;
    b.baseline.idpp.hidden = {8};
    const auto out = run_baseline(b, nullptr);
    CHECK(out.idpp_history.size() == 6);
    REQUIRE(out.paths.size() == 4);
    CHECK(out.paths[0].states[0].size() == 12);
  }
}
