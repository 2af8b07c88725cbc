// gfmpath: transition-path sampling by generalized flow matching.
//
//   gfmpath simulate --out run/          # Langevin pools around two minima
//   gfmpath fit-potential --out run/     # learned surrogate energy
//   gfmpath train --out run/             # spline + velocity (+ resampling)
//   gfmpath sample --out run/            # ODE paths from pool A
//   gfmpath evaluate --out run/          # metrics, report.csv, paths.svg
//   gfmpath baseline --out run/          # linear or IDPP paths
//
// Every stage reads and writes artifacts in the run directory and records
// itself in run/manifest.json.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "gfmpath/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gfmpath;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitIo = 4;

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "run";
  // Stage inputs; empty means the default artifact inside the run directory.
  std::string dataset, potential, paths;
  // Shorthand flags, applied before --set.
  std::vector<std::string> shorthand;
  bool weights = false;
  bool all = false;
  std::optional<std::size_t> top_k;
};

// Flag that becomes a "section.key=value" override.
template <typename T>
void shorthand(CLI::App* app, Options& o, const std::string& flag, const std::string& key,
               const std::string& help) {
  app->add_option_function<T>(
      flag, [&o, key](const T& value) { o.shorthand.push_back(key + "=" + json(value).dump()); },
      help);
}

void common(CLI::App* app, Options& o) {
  app->add_option("-c,--config", o.config_path, "JSON run configuration");
  app->add_option("--set", o.sets, "override, e.g. --set train.epochs=10 (repeatable)");
  app->add_option("-o,--out", o.out, "run directory")->capture_default_str();
}

RunConfig effective_config(const Options& o) {
  json j = json::object();
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw IoError("cannot open config '" + o.config_path + "'");
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config '" + o.config_path + "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& s : o.shorthand) apply_override(j, s);
  for (const auto& s : o.sets) apply_override(j, s);
  return RunConfig::from_json(j);
}

std::string in_run(const Options& o, const std::string& name) { return (fs::path(o.out) / name).string(); }

std::string input(const std::string& given, const Options& o, const std::string& name) {
  const std::string path = given.empty() ? in_run(o, name) : given;
  if (!fs::exists(path)) throw IoError("missing input '" + path + "'");
  return path;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

json read_manifest(const std::string& dir) {
  const auto path = (fs::path(dir) / "manifest.json").string();
  if (!fs::exists(path)) return {{"format", "gfmpath-manifest"}, {"version", 1}, {"stages", json::object()}};
  std::ifstream in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("manifest '" + path + "' is corrupt: " + e.what());
  }
  if (j.value("format", "") != "gfmpath-manifest") throw SchemaError("'" + path + "' is not a manifest");
  return j;
}

std::uint64_t manifest_total(const json& manifest) {
  std::uint64_t total = 0;
  for (const auto& [name, stage] : manifest.at("stages").items()) {
    total += stage.value("u_evaluations", std::uint64_t{0});
  }
  return total;
}

// Records a stage and re-derives the run-wide true-energy evaluation count.
void record_stage(const std::string& dir, const std::string& stage, json record) {
  fs::create_directories(dir);
  json manifest = read_manifest(dir);
  manifest["stages"][stage] = std::move(record);
  manifest["u_evaluations"] = manifest_total(manifest);
  write_json(manifest, (fs::path(dir) / "manifest.json").string());
}

void write_log(const std::vector<TrainLogEntry>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& e : log) out << e.to_json().dump() << '\n';
  if (!out) throw IoError("write failed for '" + path + "'");
}

void save_models(const TrainResult& state, const std::string& spline_path, const std::string& velocity_path) {
  save_checkpoint(state.spline.net, spline_path);
  save_checkpoint(state.velocity.net, velocity_path);
}

int cmd_simulate(const Options& o) {
  const RunConfig config = effective_config(o);
  std::string dir = o.out;
  std::string dataset_path = in_run(o, "dataset.jsonl");
  if (fs::path(o.out).extension() == ".jsonl") {
    dataset_path = o.out;
    dir = fs::path(o.out).has_parent_path() ? fs::path(o.out).parent_path().string() : ".";
  }
  fs::create_directories(dir);
  const CountingSurface counted(surface_for(config.simulate));
  const auto dataset = run_simulate(config, counted);
  save_dataset(dataset, dataset_path);
  record_stage(dir, "simulate",
               {{"config", config.to_json()["simulate"]},
                {"outputs", {{"dataset", dataset_path}}},
                {"seeds", {{"pool_a", config.simulate.langevin.seed}, {"pool_b", config.simulate.langevin.seed + 1}}},
                {"u_evaluations", counted.evaluations()}});
  std::cout << "simulate: " << dataset.pool_a.size() << " + " << dataset.pool_b.size() << " states, "
            << counted.evaluations() << " energy evaluations -> " << dataset_path << '\n';
  return 0;
}

int cmd_fit_potential(const Options& o) {
  const RunConfig config = effective_config(o);
  const auto dataset_path = input(o.dataset, o, "dataset.jsonl");
  const auto dataset = load_dataset(dataset_path);
  const auto potential = run_fit_potential(config, dataset);
  const auto out = in_run(o, "potential.json");
  fs::create_directories(o.out);
  save_potential(*potential, out);
  json summary = {{"kind", potential->kind()}};
  if (const auto* m = dynamic_cast<const MetricSurrogate*>(potential.get())) {
    const auto points = dataset.pooled();
    double mean_h = 0.0;
    for (const auto& x : points) mean_h += m->metric().h(x);
    summary["mean_h"] = mean_h / static_cast<double>(points.size());
    summary["loss"] = rbf_loss(m->metric(), points);
  } else if (const auto* l = dynamic_cast<const LatentSurrogate*>(potential.get())) {
    summary["reconstruction_loss"] = l->model().final_loss;
  }
  record_stage(o.out, "fit-potential",
               {{"config", config.to_json()["potential"]},
                {"inputs", {{"dataset", dataset_path}}},
                {"outputs", {{"potential", out}}},
                {"summary", summary},
                {"u_evaluations", 0}});
  std::cout << "fit-potential: " << summary.dump() << " -> " << out << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig config = effective_config(o);
  const auto dataset_path = input(o.dataset, o, "dataset.jsonl");
  const auto potential_path = input(o.potential, o, "potential.json");
  const auto dataset = load_dataset(dataset_path);
  const auto potential = load_potential(potential_path);
  fs::create_directories(o.out);
  const CountingSurface counted(surface_for(config.simulate));

  // The latest epoch is always on disk, so a divergence keeps the last good models.
  const auto ckpt_spline = in_run(o, "checkpoint_spline.json");
  const auto ckpt_velocity = in_run(o, "checkpoint_velocity.json");
  const EpochHook hook = [&](const TrainResult& state, const std::string&, int) {
    save_models(state, ckpt_spline, ckpt_velocity);
  };
  TrainResult result;
  try {
    result = run_train(config, dataset, *potential, &counted, hook);
  } catch (const DivergenceError&) {
    std::cerr << "train: diverged; last checkpoint kept in " << ckpt_spline << " and " << ckpt_velocity << '\n';
    throw;
  }
  save_models(result, in_run(o, "spline.json"), in_run(o, "velocity.json"));
  save_models(result, ckpt_spline, ckpt_velocity);
  write_log(result.log, in_run(o, "train_log.jsonl"));
  json outputs = {{"spline", in_run(o, "spline.json")},
                  {"velocity", in_run(o, "velocity.json")},
                  {"log", in_run(o, "train_log.jsonl")}};
  if (!result.buffer.empty()) {
    save_paths_csv(result.buffer.entries(), &counted.inner(), in_run(o, "buffer.csv"));
    outputs["buffer"] = in_run(o, "buffer.csv");
  }
  record_stage(o.out, "train",
               {{"config", {{"train", config.to_json()["train"]}, {"coupling", config.to_json()["coupling"]}}},
                {"inputs", {{"dataset", dataset_path}, {"potential", potential_path}}},
                {"outputs", outputs},
                {"seeds", {{"train", config.train.seed}}},
                {"final", result.log.empty() ? json(nullptr) : result.log.back().to_json()},
                {"u_evaluations", result.u_evaluations}});
  std::cout << "train: " << result.log.size() << " updates, " << result.u_evaluations
            << " energy evaluations -> " << o.out << '\n';
  return 0;
}

int cmd_sample(const Options& o) {
  const RunConfig config = effective_config(o);
  const auto dataset_path = input(o.dataset, o, "dataset.jsonl");
  const auto velocity_path = input("", o, "velocity.json");
  const auto dataset = load_dataset(dataset_path);
  const VelocityModel velocity{load_checkpoint(velocity_path)};
  const auto surface = surface_for(config.simulate);
  const CountingSurface counted(surface);
  auto paths = run_sample(config, dataset, velocity);
  if (o.weights) {
    std::vector<double> costs;
    for (auto& p : paths) {
      p.raw_cost = path_cost(p, velocity, counted);
      costs.push_back(p.raw_cost);
    }
    const auto w = normalize_weights(costs);
    for (std::size_t i = 0; i < paths.size(); ++i) paths[i].weight = w[i];
  }
  const auto out = in_run(o, "paths.csv");
  save_paths_csv(paths, surface.get(), out);
  record_stage(o.out, "sample",
               {{"config", config.to_json()["sample"]},
                {"inputs", {{"dataset", dataset_path}, {"velocity", velocity_path}}},
                {"outputs", {{"paths", out}}},
                {"seeds", {{"sample", config.sample.seed}}},
                {"weighted", o.weights},
                {"u_evaluations", counted.evaluations()}});
  std::cout << "sample: " << paths.size() << " paths -> " << out << '\n';
  return 0;
}

void write_evaluation(const RunConfig& config, const std::vector<TransitionPath>& paths,
                      const PotentialSurface& surface, const std::string& dir, std::uint64_t u_evaluations) {
  auto rep = run_evaluate(config, paths, surface);
  rep.u_evaluations = u_evaluations;
  write_report(rep, dir);
  if (config.evaluate.svg && surface.dim() == 2) {
    SvgOptions svg;
    svg.max_paths = config.evaluate.svg_paths;
    const auto selected = config.evaluate.top_k == 0 ? paths : select_top_k(paths, config.evaluate.top_k);
    write_svg(render_svg(selected, surface, critical_points_for(surface), svg),
              (fs::path(dir) / "paths.svg").string());
  }
  std::cout << rep.to_json().dump(2) << '\n';
}

int cmd_evaluate(Options o) {
  if (o.all) o.shorthand.push_back("evaluate.top_k=0");
  if (o.top_k) o.shorthand.push_back("evaluate.top_k=" + std::to_string(*o.top_k));
  const RunConfig config = effective_config(o);
  const auto paths_path = input(o.paths, o, "paths.csv");
  const auto paths = load_paths_csv(paths_path);
  const auto surface = surface_for(config.simulate);
  fs::create_directories(o.out);
  const std::uint64_t total = read_manifest(o.out).value("u_evaluations", std::uint64_t{0});
  write_evaluation(config, paths, *surface, o.out, total);
  record_stage(o.out, "evaluate",
               {{"config", config.to_json()["evaluate"]},
                {"inputs", {{"paths", paths_path}}},
                {"outputs",
                 {{"report", in_run(o, "report.csv")}, {"summary", in_run(o, "summary.json")}}},
                {"u_evaluations", 0}});
  return 0;
}

int cmd_baseline(const Options& o) {
  const RunConfig config = effective_config(o);
  const auto dir = in_run(o, "baseline");
  fs::create_directories(dir);
  std::optional<EndpointDataset> dataset;
  std::string dataset_path;
  const bool needs_dataset = config.baseline.kind == "linear" || config.baseline.system == "dataset";
  if (needs_dataset) {
    dataset_path = input(o.dataset, o, "dataset.jsonl");
    dataset = load_dataset(dataset_path);
  }
  const auto outcome = run_baseline(config, dataset ? &*dataset : nullptr);
  const auto paths_path = (fs::path(dir) / "paths.csv").string();
  json record = {{"config", config.to_json()["baseline"]},
                 {"outputs", {{"paths", paths_path}}},
                 {"seeds", {{"baseline", config.baseline.seed}}},
                 {"u_evaluations", 0}};
  if (needs_dataset) record["inputs"] = {{"dataset", dataset_path}};
  if (config.baseline.kind == "linear") {
    const auto surface = surface_for(config.simulate);
    save_paths_csv(outcome.paths, surface.get(), paths_path);
    write_evaluation(config, outcome.paths, *surface, dir, 0);
  } else {
    save_paths_csv(outcome.paths, nullptr, paths_path);
    const auto& h = outcome.idpp_history;
    json summary = {{"loss_initial", h.front()}, {"loss_final", h.back()}, {"reduction", h.front() / h.back()}};
    write_json(summary, (fs::path(dir) / "idpp_summary.json").string());
    write_json(h, (fs::path(dir) / "idpp_history.json").string());
    record["summary"] = summary;
    std::cout << summary.dump(2) << '\n';
  }
  record_stage(o.out, "baseline", record);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transition-path sampling with generalized flow matching"};
  app.require_subcommand(1);
  Options o;

  auto* simulate = app.add_subcommand("simulate", "Langevin pools around two metastable states");
  common(simulate, o);
  shorthand<std::string>(simulate, o, "--surface", "simulate.surface", "surface name");
  shorthand<std::string>(simulate, o, "--start", "simulate.start_a", "start of pool A: label or x,y,...");
  shorthand<std::string>(simulate, o, "--end", "simulate.start_b", "start of pool B: label or x,y,...");
  shorthand<long>(simulate, o, "--steps", "simulate.steps", "Langevin steps per pool");
  shorthand<std::size_t>(simulate, o, "--samples", "simulate.samples", "states kept per pool");
  shorthand<double>(simulate, o, "--dt", "simulate.dt", "time step");
  shorthand<double>(simulate, o, "--xi", "simulate.xi", "noise scale");
  shorthand<std::uint64_t>(simulate, o, "--seed", "simulate.seed", "seed (pool B uses seed + 1)");

  auto* fit = app.add_subcommand("fit-potential", "fit the surrogate energy to the pooled data");
  common(fit, o);
  fit->add_option("--dataset", o.dataset, "dataset file (default: <out>/dataset.jsonl)");
  shorthand<std::string>(fit, o, "--kind", "potential.kind", "metric | latent");

  auto* trn = app.add_subcommand("train", "train the spline and velocity networks");
  common(trn, o);
  trn->add_option("--dataset", o.dataset, "dataset file");
  trn->add_option("--potential", o.potential, "surrogate file (default: <out>/potential.json)");
  shorthand<int>(trn, o, "--epochs", "train.epochs", "training epochs");
  shorthand<int>(trn, o, "--rounds", "train.resample_rounds", "resampling rounds");
  shorthand<std::string>(trn, o, "--coupling", "coupling.kind", "product | minibatch-ot | reflow");
  shorthand<std::uint64_t>(trn, o, "--seed", "train.seed", "training seed");

  auto* smp = app.add_subcommand("sample", "integrate paths from pool A");
  common(smp, o);
  smp->add_option("--dataset", o.dataset, "dataset file");
  shorthand<std::size_t>(smp, o, "-n,--n-paths", "sample.n_paths", "number of paths");
  shorthand<int>(smp, o, "--steps", "sample.ode_steps", "ODE steps per path");
  shorthand<std::uint64_t>(smp, o, "--seed", "sample.seed", "sampling seed");
  smp->add_flag("--weights", o.weights, "weight paths by true path cost (counts energy evaluations)");

  auto* ev = app.add_subcommand("evaluate", "path metrics, report.csv, summary.json, paths.svg");
  common(ev, o);
  ev->add_option("--paths", o.paths, "path CSV (default: <out>/paths.csv)");
  ev->add_option("--top-k", o.top_k, "evaluate the k highest-weight paths");
  ev->add_flag("--all", o.all, "evaluate every path");

  auto* base = app.add_subcommand("baseline", "linear or IDPP baseline paths");
  common(base, o);
  base->add_option("--dataset", o.dataset, "dataset file");
  shorthand<std::string>(base, o, "--kind", "baseline.kind", "linear | idpp");
  shorthand<std::string>(base, o, "--coupling", "baseline.coupling", "product | minibatch-ot");
  shorthand<std::size_t>(base, o, "-n,--n-paths", "baseline.n_paths", "number of linear paths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(o);
    if (fit->parsed()) return cmd_fit_potential(o);
    if (trn->parsed()) return cmd_train(o);
    if (smp->parsed()) return cmd_sample(o);
    if (ev->parsed()) return cmd_evaluate(o);
    if (base->parsed()) return cmd_baseline(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const SchemaError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
