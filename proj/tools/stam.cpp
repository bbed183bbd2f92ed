// Command line front end: simulation runs, the demonstration-count experiment,
// model fitting, map export and the realtime server.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stam/dataset.hpp"
#include "stam/error.hpp"
#include "stam/gmr.hpp"
#include "stam/ws_server.hpp"

using namespace stam;

namespace {

std::shared_ptr<const OccupancyGrid> map_or_default(const std::string& path) {
  return std::make_shared<const OccupancyGrid>(path.empty() ? default_room() : load_map(path));
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, path + ": " + e.what());
  }
}

// Accepts either a bare mixture or a serialized signature wrapping one.
nlohmann::json model_json(const nlohmann::json& j) {
  return j.contains("task_id") ? signature_from_json(j).params : j;
}

std::vector<sim::TimedCommand> read_commands(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidArgument, "cannot open " + path);
  std::vector<sim::TimedCommand> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("t").get<double>(), {j.at("v").get<double>(), j.at("omega").get<double>()}});
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, path + ": " + e.what());
    }
  }
  return out;
}

planner::GoalVariant goal_variant(const std::string& s) {
  if (s == "top") return planner::GoalVariant::TopScore;
  if (s == "nearest") return planner::GoalVariant::NearestRegion;
  return planner::GoalVariant::LargestRegion;
}

struct SimArgs {
  std::string map, policy = "expert", record, model, commands, strategy;
  std::uint64_t seed = 1;
  double duration = 60.0, dmin = 1.0, dmax = 3.0, lambda = -1.0, separation = 2.0, threshold = -1.0;
  int demo_id = 1;
};

int sim_run(const SimArgs& a) {
  sim::RunConfig rc;
  rc.grid = map_or_default(a.map);
  rc.policy = sim::policy_from_string(a.policy);
  rc.seed = a.seed;
  rc.duration = a.duration;
  rc.separation = a.separation;
  rc.demo_id = a.demo_id;
  rc.sim.d_min = a.dmin;
  rc.sim.d_max = a.dmax;
  if (a.lambda >= 0.0) rc.follow.lambda = a.lambda;
  if (!a.strategy.empty()) rc.follow.strategy.variant = goal_variant(a.strategy);
  if (a.threshold > 0.0) rc.follow.strategy.region_threshold = a.threshold;

  if (rc.policy == sim::PolicyKind::Follow) {
    if (a.model.empty()) throw Error(Errc::InvalidArgument, "--policy follow needs --model");
    const nlohmann::json model = model_json(read_json(a.model));
    gmm::model_from_json(model);
    auto registry = std::make_shared<Registry>();
    registry->register_descriptor(follow::kTaskId, follow::descriptor(), follow::make_signature(model, 0, a.seed));
    rc.registry = registry;
  }
  if (rc.policy == sim::PolicyKind::Teleop && !a.commands.empty()) rc.teleop = read_commands(a.commands);

  const sim::RunResult result = sim::run(rc);
  if (!a.record.empty()) write_jsonl(result.records, a.record);
  std::cout << "records " << result.records.size() << " follower_collisions " << result.follower_collisions
            << " diagnostics " << result.diagnostics.size() << "\n";
  for (const auto& d : result.diagnostics) std::cerr << "diagnostic: " << d << "\n";
  return 0;
}

struct EvalArgs {
  int runs = 20, demos = 3, threads = 1, k_max = 8;
  std::uint64_t seed = 1;
  double duration = 30.0;
  std::string out, records, map;
};

int eval_run(const EvalArgs& a) {
  dataset::ExperimentConfig cfg;
  cfg.runs = a.runs;
  cfg.demos = a.demos;
  cfg.seed = a.seed;
  cfg.demo_duration = a.duration;
  cfg.threads = a.threads;
  cfg.k_max = a.k_max;
  cfg.grid = map_or_default(a.map);
  if (!a.records.empty()) cfg.records_dir = a.records;
  const std::string csv = dataset::to_csv(dataset::run_experiment(cfg));
  if (a.out.empty() || a.out == "-") {
    std::cout << csv;
  } else {
    std::ofstream out(a.out);
    if (!(out << csv)) throw Error(Errc::InvalidArgument, "cannot write " + a.out);
  }
  return 0;
}

struct FitArgs {
  std::vector<std::string> records;
  std::string out;
  std::uint64_t seed = 1;
  int k_max = 8, restarts = 1;
};

int fit(const FitArgs& a) {
  std::vector<DemonstrationRecord> records;
  for (const auto& path : a.records) {
    auto r = read_jsonl(path);
    records.insert(records.end(), r.begin(), r.end());
  }
  const auto samples = dataset::relative_samples(records);
  gmm::SelectOptions options;
  options.seed = a.seed;
  options.k_max = a.k_max;
  options.restarts = a.restarts;
  const gmm::SelectionResult result = gmr::fit_relative_model(samples, options);
  const AffordanceSignature signature =
      follow::make_signature(gmm::to_json(result.model), samples.size(), options.seed);
  const std::string text = to_json(signature).dump(2) + "\n";
  if (a.out.empty() || a.out == "-") {
    std::cout << text;
  } else {
    std::ofstream out(a.out);
    if (!(out << text)) throw Error(Errc::InvalidArgument, "cannot write " + a.out);
  }
  std::cerr << "samples " << samples.size() << " selected_k " << result.selected_k << "\nbic";
  for (double b : result.bic_scores) std::cerr << " " << format_double(b);
  std::cerr << "\n";
  return 0;
}

struct ServeArgs {
  std::string map, records, address = "127.0.0.1";
  unsigned short port = 8765;
  std::uint64_t seed = 1;
  double speed = 1.0;
};

int serve(const ServeArgs& a) {
  service::ServiceConfig cfg;
  cfg.grid = map_or_default(a.map);
  cfg.seed = a.seed;
  cfg.records_dir = a.records;
  service::ServerOptions options;
  options.address = a.address;
  options.port = a.port;
  options.speed = a.speed;
  options.handle_signals = true;
  service::WsServer server(std::move(cfg), options);
  std::cout << "listening on ws://" << a.address << ":" << server.port() << std::endl;
  server.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal affordance maps: simulation, learning and serving"};
  app.require_subcommand(1);

  auto* sim_cmd = app.add_subcommand("sim", "Simulator");
  sim_cmd->require_subcommand(1);
  SimArgs sim_args;
  auto* sim_run_cmd = sim_cmd->add_subcommand("run", "Run one headless episode");
  sim_run_cmd->add_option("--map", sim_args.map, "Map file (built-in room when omitted)");
  sim_run_cmd->add_option("--policy", sim_args.policy, "Follower policy")
      ->check(CLI::IsMember({"expert", "teleop", "follow"}));
  sim_run_cmd->add_option("--seed", sim_args.seed);
  sim_run_cmd->add_option("--duration", sim_args.duration, "Seconds");
  sim_run_cmd->add_option("--record", sim_args.record, "Write records as JSON lines");
  sim_run_cmd->add_option("--dmin", sim_args.dmin);
  sim_run_cmd->add_option("--dmax", sim_args.dmax);
  sim_run_cmd->add_option("--lambda", sim_args.lambda, "Gainmap weight of the costmap");
  sim_run_cmd->add_option("--model", sim_args.model, "Model or signature JSON for --policy follow");
  sim_run_cmd->add_option("--commands", sim_args.commands, "JSON lines {t,v,omega} for --policy teleop");
  sim_run_cmd->add_option("--separation", sim_args.separation, "Initial target-follower distance");
  sim_run_cmd->add_option("--demo-id", sim_args.demo_id);
  sim_run_cmd->add_option("--strategy", sim_args.strategy, "Goal selection")
      ->check(CLI::IsMember({"top", "nearest", "largest"}));
  sim_run_cmd->add_option("--threshold", sim_args.threshold, "Region threshold as a fraction of the map max");

  auto* eval_cmd = app.add_subcommand("eval", "Demonstration-count experiment");
  eval_cmd->require_subcommand(1);
  EvalArgs eval_args;
  auto* eval_run_cmd = eval_cmd->add_subcommand("run", "Run the experiment and write the CSV report");
  eval_run_cmd->add_option("--runs", eval_args.runs);
  eval_run_cmd->add_option("--demos", eval_args.demos);
  eval_run_cmd->add_option("--out", eval_args.out, "CSV path (stdout when omitted)");
  eval_run_cmd->add_option("--records", eval_args.records, "Demo directory: read when present, else written");
  eval_run_cmd->add_option("--seed", eval_args.seed);
  eval_run_cmd->add_option("--duration", eval_args.duration, "Seconds per demonstration");
  eval_run_cmd->add_option("--threads", eval_args.threads);
  eval_run_cmd->add_option("--k-max", eval_args.k_max);
  eval_run_cmd->add_option("--map", eval_args.map);

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a follow model to recorded demonstrations");
  fit_cmd->add_option("records", fit_args.records, "JSON lines files")->required();
  fit_cmd->add_option("--out", fit_args.out, "Signature JSON (stdout when omitted)");
  fit_cmd->add_option("--seed", fit_args.seed);
  fit_cmd->add_option("--k-max", fit_args.k_max);
  fit_cmd->add_option("--restarts", fit_args.restarts);

  std::string map_out;
  auto* map_cmd = app.add_subcommand("map", "Write the built-in room map");
  map_cmd->add_option("--out", map_out)->required();

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Realtime WebSocket server");
  serve_cmd->add_option("--map", serve_args.map);
  serve_cmd->add_option("--port", serve_args.port);
  serve_cmd->add_option("--seed", serve_args.seed);
  serve_cmd->add_option("--records", serve_args.records, "Directory for recorded demos");
  serve_cmd->add_option("--address", serve_args.address);
  serve_cmd->add_option("--speed", serve_args.speed, "Simulated seconds per second");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim_run_cmd->parsed()) return sim_run(sim_args);
    if (eval_run_cmd->parsed()) return eval_run(eval_args);
    if (fit_cmd->parsed()) return fit(fit_args);
    if (map_cmd->parsed()) {
      save_map(default_room(), map_out);
      return 0;
    }
    if (serve_cmd->parsed()) return serve(serve_args);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
