// floodwatch operator CLI.
//
//   floodwatch run --config pipeline.json
//   floodwatch round --once --config pipeline.json
//   floodwatch simulate --fleet 2379 --registry-out fleet.json
//   floodwatch sweep --pools 32,64,128,256,512 --fleet 2379
//   floodwatch validate-registry cameras.json

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "floodwatch/ingest.hpp"
#include "floodwatch/pipeline.hpp"
#include "floodwatch/registry.hpp"
#include "floodwatch/simulator.hpp"

using namespace floodwatch;

namespace {

constexpr int kUsageExit = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path);
}

// Blocks SIGINT/SIGTERM in every thread and waits for one; call before
// spawning worker threads.
sigset_t block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

int wait_for_signal(const sigset_t& set, double seconds) {
  if (seconds <= 0) {
    int sig = 0;
    sigwait(&set, &sig);
    return sig;
  }
  timespec ts{static_cast<time_t>(seconds),
              static_cast<long>((seconds - static_cast<time_t>(seconds)) * 1e9)};
  return sigtimedwait(&set, nullptr, &ts);
}

void print_metrics(const RoundMetrics& m) {
  std::printf("round %llu (%zu cameras)\n", static_cast<unsigned long long>(m.round_id), m.cameras);
  std::printf("  capture   %8lld ms\n", static_cast<long long>(m.capture_wall_ms));
  std::printf("  classify  %8lld ms\n", static_cast<long long>(m.classify_wall_ms));
  std::printf("  map       %8lld ms\n", static_cast<long long>(m.map_wall_ms));
  std::printf("  notify    %8lld ms\n", static_cast<long long>(m.notify_wall_ms));
  std::printf("  total     %8lld ms\n", static_cast<long long>(m.total_wall_ms));
  std::printf("  status    red %zu  green %zu  gray %zu  white %zu\n", m.counts.red,
              m.counts.green, m.counts.gray, m.counts.white);
  std::printf("  failures ");
  for (const auto& [kind, n] : m.failures) std::printf(" %s %zu", kind.c_str(), n);
  std::printf("\n  deliveries %zu\n", m.deliveries);
}

SimScenario scenario_from(const std::string& scenario_path, std::size_t fleet_size, std::uint64_t seed) {
  if (!scenario_path.empty()) return SimScenario::parse(read_file(scenario_path));
  return reference_fleet(fleet_size, seed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flood sensing pipeline over a camera fleet"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  // run
  auto* run = app.add_subcommand("run", "Run the scheduler and the HTTP read API");
  std::string run_config;
  std::string run_listen;
  std::string run_mode;
  run->add_option("--config", run_config, "Pipeline config file")->required();
  run->add_option("--listen", run_listen, "host:port (overrides config and FLOODWATCH_LISTEN)");
  run->add_option("--mode", run_mode, "storm_advisory or normal")
      ->check(CLI::IsMember({"storm_advisory", "normal"}));

  // round --once
  auto* round = app.add_subcommand("round", "Run a single round and print its metrics");
  bool once = false;
  std::string round_config;
  std::string round_registry;
  std::string round_data = "floodwatch-data";
  std::size_t round_pool = 0;
  long round_deadline = 0;
  round->add_flag("--once", once, "Run exactly one round")->required();
  auto* rc = round->add_option("--config", round_config, "Pipeline config file");
  auto* rr = round->add_option("--registry", round_registry, "Registry (without a config file)");
  rc->excludes(rr);
  round->add_option("--data-dir", round_data, "Data directory (with --registry)");
  round->add_option("--pool", round_pool, "Capture pool size override")->check(CLI::PositiveNumber);
  round->add_option("--deadline-ms", round_deadline, "Per-stream deadline override")
      ->check(CLI::PositiveNumber);

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Serve a synthetic camera fleet");
  std::string sim_scenario;
  std::size_t sim_fleet = 0;
  std::uint64_t sim_seed = 2379;
  std::string sim_registry_out;
  int sim_admin_port = -1;
  int sim_base_port = 0;
  double sim_duration = 0;
  auto* ss = simulate->add_option("--scenario", sim_scenario, "Scenario file")->check(CLI::ExistingFile);
  auto* st = simulate->add_option("--fleet", sim_fleet, "Generate the reference fleet with N cameras")
                 ->check(CLI::PositiveNumber);
  ss->excludes(st);
  simulate->add_option("--seed", sim_seed, "Seed for generated fleets");
  simulate->add_option("--registry-out", sim_registry_out, "Write a registry pointing at the fleet");
  simulate->add_option("--admin-port", sim_admin_port, "Start the admin endpoint (0 = any port)")
      ->check(CLI::Range(0, 65535));
  simulate->add_option("--base-port", sim_base_port, "First camera port (0 = ephemeral)")
      ->check(CLI::Range(0, 65535));
  simulate->add_option("--duration", sim_duration, "Seconds to serve (0 = until SIGINT/SIGTERM)")
      ->check(CLI::NonNegativeNumber);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Capture wall time per pool size");
  std::vector<std::size_t> sweep_pools;
  std::string sweep_registry;
  std::size_t sweep_fleet = 0;
  long sweep_deadline = 15000;
  sweep->add_option("--pools", sweep_pools, "Comma-separated pool sizes")
      ->required()
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  auto* sr = sweep->add_option("--registry", sweep_registry, "Registry to capture from");
  auto* sw = sweep->add_option("--fleet", sweep_fleet, "Spawn a generated fleet in-process")
                 ->check(CLI::PositiveNumber);
  sr->excludes(sw);
  sweep->add_option("--deadline-ms", sweep_deadline, "Per-stream deadline")->check(CLI::PositiveNumber);

  // validate-registry
  auto* validate = app.add_subcommand("validate-registry", "Parse a registry and summarize it");
  std::string validate_path;
  validate->add_option("path", validate_path, "Registry file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageExit;
  }
  if (round->parsed() && round_config.empty() && round_registry.empty()) {
    std::cerr << "round: one of --config or --registry is required\n" << round->help();
    return kUsageExit;
  }
  if (simulate->parsed() && sim_scenario.empty() && sim_fleet == 0) {
    std::cerr << "simulate: one of --scenario or --fleet is required\n" << simulate->help();
    return kUsageExit;
  }
  if (sweep->parsed() && sweep_registry.empty() && sweep_fleet == 0) {
    std::cerr << "sweep: one of --registry or --fleet is required\n" << sweep->help();
    return kUsageExit;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (validate->parsed()) {
      const CameraRegistry reg = CameraRegistry::load(validate_path);
      std::printf("%s: %zu cameras\n", validate_path.c_str(), reg.size());
      for (const auto& [network, count] : reg.network_summary()) {
        std::printf("  %-8s %6zu\n", network.c_str(), count);
      }
      return 0;
    }

    if (run->parsed()) {
      PipelineConfig cfg = PipelineConfig::load(run_config);
      cfg.apply_env();
      if (!run_listen.empty()) cfg.listen_address = run_listen;
      if (!run_mode.empty()) cfg.mode = *refresh_mode_from_string(run_mode);
      cfg.validate();
      const sigset_t signals = block_shutdown_signals();
      Pipeline pipeline(cfg);
      ApiServer api(pipeline);
      const auto [host, port] = parse_listen_address(cfg.listen_address);
      const auto bound = api.start(host, port);
      spdlog::info("API on {}:{}; {} mode, interval {} s, {} cameras", host, bound,
                   to_string(cfg.mode), cfg.interval().count(), pipeline.registry().size());
      std::jthread scheduler([&pipeline](std::stop_token stop) { pipeline.run(stop); });
      const int sig = wait_for_signal(signals, 0);
      spdlog::info("signal {}: draining the round in flight", sig);
      scheduler.request_stop();
      scheduler.join();
      api.stop();
      return 0;
    }

    if (round->parsed()) {
      PipelineConfig cfg;
      if (!round_config.empty()) {
        cfg = PipelineConfig::load(round_config);
        cfg.apply_env();
      } else {
        cfg.registry_path = round_registry;
        cfg.data_dir = round_data;
      }
      if (round_pool) cfg.capture.pool_size = round_pool;
      if (round_deadline) cfg.capture.per_stream_deadline = std::chrono::milliseconds(round_deadline);
      cfg.validate();
      Pipeline pipeline(cfg);
      print_metrics(pipeline.run_once());
      return 0;
    }

    if (simulate->parsed()) {
      SimScenario scenario = scenario_from(sim_scenario, sim_fleet, sim_seed);
      scenario.base_port = static_cast<std::uint16_t>(sim_base_port);
      const sigset_t signals = block_shutdown_signals();
      auto fleet = FleetSimulator::spawn(std::move(scenario));
      std::printf("serving %zu cameras\n", fleet->size());
      if (!sim_registry_out.empty()) {
        write_file(sim_registry_out, fleet->registry().serialize());
        std::printf("registry written to %s\n", sim_registry_out.c_str());
      }
      if (sim_admin_port >= 0) {
        std::printf("admin endpoint on port %u\n",
                    fleet->start_admin(static_cast<std::uint16_t>(sim_admin_port)));
      }
      std::fflush(stdout);
      wait_for_signal(signals, sim_duration);
      fleet->stop();
      std::printf("frames served: %llu\n", static_cast<unsigned long long>(fleet->frames_served()));
      return 0;
    }

    if (sweep->parsed()) {
      std::unique_ptr<FleetSimulator> fleet;
      CameraRegistry reg;
      if (sweep_fleet) {
        fleet = FleetSimulator::spawn(reference_fleet(sweep_fleet));
        reg = fleet->registry();
      } else {
        reg = CameraRegistry::load(sweep_registry);
      }
      CaptureConfig base;
      base.per_stream_deadline = std::chrono::milliseconds(sweep_deadline);
      const auto rows = measure_pool_sweep(reg, sweep_pools, base);
      std::printf("%8s %10s %10s %10s\n", "pool", "wall_ms", "ok", "cameras");
      for (const auto& r : rows) {
        std::printf("%8zu %10lld %10zu %10zu\n", r.pool_size, static_cast<long long>(r.wall.count()),
                    r.successes, reg.size());
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "floodwatch: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
