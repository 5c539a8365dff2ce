// Command-line front end: radio-map generation and fitting, single-plan
// debugging, episode simulation, and benchmark suites with CSV/markdown
// and SVG reports.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mpcom/log.hpp"
#include "mpcom/planner.hpp"
#include "mpcom/radio.hpp"
#include "mpcom/sim.hpp"
#include "mpcom/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char * kToolVersion = "0.1.0";

// sysexits-style contract: 0 ok, 2 planner failure, 64 usage,
// 65 data/parse error, 74 IO error.
constexpr int kExitPlanner = 2;
constexpr int kExitUsage = 64;
constexpr int kExitData = 65;
constexpr int kExitIo = 74;

struct IoError : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

struct Overrides
{
  std::optional<double> rho;
  std::optional<int> horizon;
  std::optional<double> tau;
  std::optional<std::uint64_t> seed;

  json to_json() const
  {
    json j = json::object();
    if (rho) { j["rho"] = *rho; }
    if (horizon) { j["horizon"] = *horizon; }
    if (tau) { j["tau"] = *tau; }
    if (seed) { j["seed"] = *seed; }
    return j;
  }
};

std::string format_double(double v)
{
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void ensure_dir(const fs::path & dir)
{
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) { throw IoError("cannot create output directory: " + dir.string()); }
}

void write_text(const fs::path & path, const std::string & content)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw IoError("cannot write: " + path.string()); }
  out << content;
  if (!out) { throw IoError("short write: " + path.string()); }
}

/// Manifest goes to disk before any result file.
void write_manifest(const fs::path & out_dir, const std::string & command,
                    const std::string & scenario_path, const Overrides & overrides)
{
  ensure_dir(out_dir);
  json j;
  j["command"] = command;
  j["scenario"] = scenario_path;
  j["overrides"] = overrides.to_json();
  j["seed"] = overrides.seed ? json(*overrides.seed) : json(nullptr);
  j["output_directory"] = out_dir.string();
  j["tool_version"] = kToolVersion;
  write_text(out_dir / "manifest.json", j.dump(2) + "\n");
}

mpcom::sim::Scenario load_scenario_checked(const std::string & path)
{
  if (!fs::exists(path)) { throw IoError("scenario file not found: " + path); }
  std::ifstream in(path);
  if (!in) { throw IoError("cannot open scenario file: " + path); }
  json j;
  in >> j;  // throws json::parse_error -> mapped to kExitData
  return mpcom::sim::scenario_from_json(j);
}

mpcom::plan::PlannerConfig build_config(const std::string & method, const Overrides & ov)
{
  mpcom::plan::PlannerConfig base;
  if (ov.rho) { base.rho = *ov.rho; }
  if (ov.horizon) { base.horizon = *ov.horizon; }
  if (ov.tau) { base.slot = *ov.tau; }
  return mpcom::plan::make_baseline(method, base);
}

void apply_seed(mpcom::sim::Scenario & sc, const Overrides & ov)
{
  if (ov.seed) { sc.seed = *ov.seed; }
  if (sc.obstacle_jitter > 0.0) {
    sc = mpcom::sim::derive_repeat(sc, 0);
  }
}

int cmd_radio_generate(const std::string & scenario_path, const std::string & out,
                       const Overrides & ov)
{
  auto scenario = load_scenario_checked(scenario_path);
  write_manifest(out, "radio-generate", scenario_path, ov);
  mpcom::sim::prepare_scenario(scenario);
  for (std::size_t k = 0; k < scenario.sensors.size(); ++k) {
    const auto & sensor = scenario.sensors[k];
    const fs::path base = fs::path(out) / ("radio_k" + std::to_string(k));
    write_text(base.string() + ".json", sensor.map.to_json().dump() + "\n");
    write_text(base.string() + ".svg", mpcom::svg::render_heatmap(sensor.map));
  }
  std::cout << "wrote " << scenario.sensors.size() << " radio map(s) to " << out << "\n";
  return 0;
}

int cmd_radio_fit(const std::string & map_path, const std::string & zones_source,
                  const std::string & scenario_path, int sensor_index, const std::string & out,
                  const Overrides & ov)
{
  if (!fs::exists(map_path)) { throw IoError("map file not found: " + map_path); }
  std::ifstream in(map_path);
  if (!in) { throw IoError("cannot open map file: " + map_path); }
  json j;
  in >> j;
  const auto map = mpcom::radio::RadioMapGrid::from_json(j);

  std::vector<mpcom::geom::ConvexPolytope> zones;
  mpcom::radio::MultiZoneFitConstraints constraints;
  if (zones_source == "scenario") {
    if (scenario_path.empty()) {
      throw CLI::ValidationError("--scenario is required when --zones scenario");
    }
    const auto scenario = load_scenario_checked(scenario_path);
    if (sensor_index < 0 || sensor_index >= static_cast<int>(scenario.sensors.size())) {
      throw IoError("sensor index out of range");
    }
    zones = scenario.sensors[sensor_index].zones;
    constraints.rho0 = scenario.sensors[sensor_index].rho0;
    constraints.d_min = scenario.sensors[sensor_index].d_min;
  }
  if (zones.empty()) { zones = mpcom::radio::segment_zones(map, 6.0, 25); }
  if (zones.empty()) {
    zones.push_back(mpcom::geom::ConvexPolytope::axis_aligned_box(
      map.origin, {map.origin.x + map.width * map.resolution,
                   map.origin.y + map.height * map.resolution}));
  }

  write_manifest(out, "radio-fit", scenario_path.empty() ? map_path : scenario_path, ov);

  mpcom::radio::MultiZoneFit mz;
  try {
    mz = mpcom::radio::fit_multizone(map, zones, constraints);
  } catch (const mpcom::radio::EmptyZone & e) {
    std::cerr << "error: zone " << e.zone_index << ": " << e.what() << "\n";
    return kExitData;
  }
  const auto [dm, dm_rmse] = mpcom::radio::fit_distance_model(map, constraints.d_min);

  json mz_json;
  mz_json["sensor"] = {mz.model.sensor.x, mz.model.sensor.y};
  mz_json["d_min"] = mz.model.d_min;
  mz_json["beta"] = mz.model.beta;
  mz_json["alpha"] = mz.model.alpha;
  auto zones_json = json::array();
  for (const auto & z : mz.model.zones) {
    auto verts = json::array();
    for (const auto & v : z.vertices()) { verts.push_back({v.x, v.y}); }
    zones_json.push_back({{"vertices", verts}});
  }
  mz_json["zones"] = zones_json;
  mz_json["zone_rmse_db"] = mz.zone_rmse_db;
  mz_json["total_rmse_db"] = mz.total_rmse_db;
  write_text(fs::path(out) / "multizone.json", mz_json.dump(2) + "\n");

  json dm_json;
  dm_json["rho0"] = dm.rho0;
  dm_json["lambda"] = dm.lambda;
  dm_json["d_min"] = dm.d_min;
  dm_json["rmse_db"] = dm_rmse;
  write_text(fs::path(out) / "distance.json", dm_json.dump(2) + "\n");

  std::string csv = "model,rmse_db\n";
  csv += "multizone," + format_double(mz.total_rmse_db) + "\n";
  csv += "distance," + format_double(dm_rmse) + "\n";
  write_text(fs::path(out) / "rmse.csv", csv);
  std::cout << "multizone rmse " << format_double(mz.total_rmse_db) << " dB, distance rmse "
            << format_double(dm_rmse) << " dB\n";
  return 0;
}

int cmd_simulate(const std::string & scenario_path, const std::string & method,
                 const Overrides & ov, const std::string & out)
{
  auto scenario = load_scenario_checked(scenario_path);
  apply_seed(scenario, ov);
  const auto config = build_config(method, ov);
  write_manifest(out, "simulate", scenario_path, ov);
  mpcom::sim::prepare_scenario(scenario);

  mpcom::sim::EpisodeResult episode;
  try {
    episode = mpcom::sim::run_episode(scenario, config);
  } catch (const mpcom::sim::PlannerFailure & e) {
    write_text(fs::path(out) / "error.txt", std::string("planner failure: ") + e.what() + "\n");
    std::cerr << "planner failure: " << e.what() << "\n";
    return kExitPlanner;
  }

  write_text(fs::path(out) / "result.json", episode.to_json().dump() + "\n");
  const auto * underlay = scenario.sensors.empty() ? nullptr : &scenario.sensors[0].map;
  write_text(fs::path(out) / "trajectory.svg",
             mpcom::svg::render_trajectory(scenario, episode, underlay));
  write_text(fs::path(out) / "speed.svg",
             mpcom::svg::render_speed_profile(episode, config.slot));
  std::cout << method << ": " << (episode.success ? "success" : "failure") << ", "
            << format_double(episode.total_megabytes) << " MB in "
            << format_double(episode.navigation_time) << " s (efficiency "
            << format_double(episode.rdg_efficiency) << " MB/s)\n";
  return 0;
}

int cmd_plan_debug(const std::string & scenario_path, const std::string & method,
                   const Overrides & ov, const std::string & out)
{
  auto scenario = load_scenario_checked(scenario_path);
  apply_seed(scenario, ov);
  const auto config = build_config(method, ov);
  write_manifest(out, "plan-debug", scenario_path, ov);
  mpcom::sim::prepare_scenario(scenario);

  std::vector<mpcom::plan::ObstaclePrediction> predictions;
  for (const auto & obs : scenario.obstacles) {
    mpcom::plan::ObstaclePrediction p;
    p.shape = obs.shape;
    const auto now = obs.pose_at(0.0);
    const auto vel = obs.velocity_at(0.0);
    for (int h = 0; h <= config.horizon; ++h) {
      mpcom::geom::Pose ph;
      ph.position = now.position + vel.position * (h * config.slot);
      ph.heading = now.heading + vel.heading * (h * config.slot);
      p.poses.push_back(ph);
    }
    predictions.push_back(std::move(p));
  }
  const auto ref = mpcom::plan::extract_local_reference(
    scenario.global_path, scenario.start, config.horizon,
    1.5 * config.limits.u_max.v * config.slot);

  mpcom::plan::PlanResult plan;
  try {
    plan = mpcom::plan::mm_solve(scenario.start, ref,
                                 mpcom::sim::planner_sensors(scenario, config.comm_mode),
                                 predictions, config, scenario.robot_body);
  } catch (const mpcom::plan::Infeasible & e) {
    write_text(fs::path(out) / "error.txt", std::string("infeasible: ") + e.what() + "\n");
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitPlanner;
  }
  write_text(fs::path(out) / "plan.json", plan.to_json().dump(2) + "\n");
  std::cout << "status " << mpcom::plan::to_string(plan.status) << ", objective trace:\n";
  for (std::size_t i = 0; i < plan.objective_trace.size(); ++i) {
    std::cout << "  [" << i << "] " << format_double(plan.objective_trace[i]) << "\n";
  }
  return 0;
}

int cmd_bench(const std::string & suite_path, const Overrides & ov, const std::string & out,
              int jobs)
{
  if (!fs::exists(suite_path)) { throw IoError("suite file not found: " + suite_path); }
  std::ifstream in(suite_path);
  if (!in) { throw IoError("cannot open suite file: " + suite_path); }
  json j;
  in >> j;

  const fs::path suite_dir = fs::path(suite_path).parent_path();
  std::vector<mpcom::sim::Scenario> scenarios;
  for (const auto & rel : j.at("scenarios")) {
    const fs::path p = suite_dir / rel.get<std::string>();
    auto sc = load_scenario_checked(p.string());
    apply_seed(sc, ov);
    scenarios.push_back(std::move(sc));
  }
  std::vector<std::pair<std::string, mpcom::plan::PlannerConfig>> configs;
  for (const auto & m : j.at("methods")) {
    const std::string name = m.get<std::string>();
    configs.emplace_back(name, build_config(name, ov));
  }
  const int repeats = j.value("repeats", 1);

  write_manifest(out, "bench", suite_path, ov);
  const auto rows = mpcom::sim::evaluate_suite(scenarios, configs, repeats, jobs);

  // Wall-clock latency stays out of the CSV so identical runs produce
  // identical bytes; per-episode latency lives in the episode JSON.
  std::string csv =
    "scenario,method,repeats,rdg_efficiency_mb_s,navigation_time_s,data_throughput_mb,"
    "efficiency_delta_pct,min_clearance_m,collisions,successes,failed,error\n";
  for (const auto & r : rows) {
    csv += r.scenario + "," + r.label + "," + std::to_string(r.repeats) + "," +
           format_double(r.rdg_efficiency) + "," + format_double(r.navigation_time) + "," +
           format_double(r.data_megabytes) + "," + format_double(r.efficiency_delta_pct) + "," +
           format_double(r.min_clearance) + "," + std::to_string(r.collisions) + "," +
           std::to_string(r.successes) + "," + (r.failed ? "yes" : "no") + "," + r.error + "\n";
  }
  write_text(fs::path(out) / "bench.csv", csv);

  // Markdown, Table-I column order: efficiency, navigation time, throughput.
  std::string md = "| Scenario | Method | RDG Efficiency (MB/s) | Navigation Time (s) | "
                   "Data Throughput (MB) | Success | Collisions |\n";
  md += "|---|---|---|---|---|---|---|\n";
  for (const auto & r : rows) {
    if (r.failed) {
      md += "| " + r.scenario + " | " + r.label + " | failed | | | | |\n";
      continue;
    }
    std::string eff = format_double(r.rdg_efficiency);
    if (r.efficiency_delta_pct != 0.0) {
      const char sign = r.efficiency_delta_pct >= 0 ? '+' : '-';
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.2f", std::abs(r.efficiency_delta_pct));
      eff += std::string(" (") + sign + buf + "%)";
    }
    md += "| " + r.scenario + " | " + r.label + " | " + eff + " | " +
          format_double(r.navigation_time) + " | " + format_double(r.data_megabytes) + " | " +
          std::to_string(r.successes) + "/" + std::to_string(r.repeats) + " | " +
          std::to_string(r.collisions) + " |\n";
  }
  write_text(fs::path(out) / "bench.md", md);
  std::cout << md;
  return 0;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"desk-scale robotic data gathering: radio maps, model fitting, and "
               "communication-aware model-predictive planning"};
  app.require_subcommand(1);

  Overrides ov;
  std::string scenario_path, map_path, out_dir = "out", method = "mpcom";
  std::string zones_source = "auto", suite_path;
  int sensor_index = 0;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  const auto add_common = [&](CLI::App * cmd) {
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", ov.seed, "seed override");
  };
  const auto add_planner_flags = [&](CLI::App * cmd) {
    cmd->add_option("--method", method, "mpcom|rda|pcamp|sdcamp");
    cmd->add_option("--rho", ov.rho, "communication regularizer weight");
    cmd->add_option("--horizon", ov.horizon, "prediction horizon H");
    cmd->add_option("--tau", ov.tau, "slot length in seconds");
  };

  auto * gen = app.add_subcommand("radio-generate", "generate ground-truth radio maps");
  gen->add_option("--scenario", scenario_path, "scenario JSON")->required();
  add_common(gen);

  auto * fit = app.add_subcommand("radio-fit", "fit multi-zone and distance models to a map");
  fit->add_option("--map", map_path, "radio map JSON")->required();
  fit->add_option("--zones", zones_source, "auto|scenario")
    ->check(CLI::IsMember({"auto", "scenario"}));
  fit->add_option("--scenario", scenario_path, "scenario JSON (zone source)");
  fit->add_option("--sensor", sensor_index, "sensor index for scenario zones");
  add_common(fit);

  auto * simulate = app.add_subcommand("simulate", "run one episode");
  simulate->add_option("--scenario", scenario_path, "scenario JSON")->required();
  add_planner_flags(simulate);
  add_common(simulate);

  auto * debug = app.add_subcommand("plan-debug", "run one planner solve and dump the trace");
  debug->add_option("--scenario", scenario_path, "scenario JSON")->required();
  add_planner_flags(debug);
  add_common(debug);

  auto * bench = app.add_subcommand("bench", "run a benchmark suite");
  bench->add_option("--suite", suite_path, "suite JSON")->required();
  bench->add_option("--jobs", jobs, "worker pool size");
  add_planner_flags(bench);
  add_common(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError & e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (gen->parsed()) { return cmd_radio_generate(scenario_path, out_dir, ov); }
    if (fit->parsed()) {
      return cmd_radio_fit(map_path, zones_source, scenario_path, sensor_index, out_dir, ov);
    }
    if (simulate->parsed()) { return cmd_simulate(scenario_path, method, ov, out_dir); }
    if (debug->parsed()) { return cmd_plan_debug(scenario_path, method, ov, out_dir); }
    if (bench->parsed()) { return cmd_bench(suite_path, ov, out_dir, jobs); }
  } catch (const CLI::ValidationError & e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument & e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError & e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const json::exception & e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitData;
  } catch (const mpcom::sim::ScenarioError & e) {
    std::cerr << "scenario error: " << e.what() << "\n";
    return kExitData;
  } catch (const mpcom::radio::InvalidGrid & e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
