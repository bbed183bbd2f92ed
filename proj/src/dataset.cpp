#include "stam/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "stam/error.hpp"
#include "stam/random.hpp"

namespace stam::dataset {

void DemoStore::append_demo(std::vector<DemonstrationRecord> records, int demo_id) {
  if (contains(demo_id)) throw Error(Errc::DuplicateDemo, "demo " + std::to_string(demo_id) + " already stored");
  for (auto& r : records) r.demo_id = demo_id;
  demos_.push_back({demo_id, std::move(records)});
}

bool DemoStore::contains(int demo_id) const {
  return std::any_of(demos_.begin(), demos_.end(), [&](const Demo& d) { return d.demo_id == demo_id; });
}

const Demo& DemoStore::demo(int demo_id) const {
  for (const auto& d : demos_)
    if (d.demo_id == demo_id) return d;
  throw Error(Errc::UnknownDemo, "demo " + std::to_string(demo_id) + " not found");
}

std::size_t DemoStore::size() const {
  std::size_t n = 0;
  for (const auto& d : demos_) n += d.records.size();
  return n;
}

std::vector<DemonstrationRecord> DemoStore::cumulative() const {
  std::vector<DemonstrationRecord> out;
  out.reserve(size());
  for (const auto& d : demos_) out.insert(out.end(), d.records.begin(), d.records.end());
  return out;
}

void DemoStore::save(const std::string& path) const { write_jsonl(cumulative(), path); }

DemoStore DemoStore::load(const std::string& path) {
  DemoStore store;
  for (auto& r : read_jsonl(path)) {
    auto it = std::find_if(store.demos_.begin(), store.demos_.end(), [&](const Demo& d) { return d.demo_id == r.demo_id; });
    if (it == store.demos_.end()) {
      store.demos_.push_back({r.demo_id, {}});
      it = std::prev(store.demos_.end());
    }
    it->records.push_back(r);
  }
  return store;
}

Split split(const std::vector<DemonstrationRecord>& records, double train_fraction, std::uint64_t seed) {
  if (records.empty()) throw Error(Errc::EmptyStore, "nothing to split");
  if (!(train_fraction >= 0.0 && train_fraction <= 1.0)) throw Error(Errc::InvalidArgument, "train fraction outside [0, 1]");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(records.size())));
  Split out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.train : out.eval).push_back(records[order[i]]);
  return out;
}

Split split_by_demo(const DemoStore& store, double train_fraction, std::uint64_t seed) {
  if (store.size() == 0) throw Error(Errc::EmptyStore, "nothing to split");
  Split out;
  for (const auto& d : store.demos()) {
    if (d.records.empty()) continue;
    Split part = split(d.records, train_fraction, derive_seed(seed, static_cast<std::uint64_t>(d.demo_id)));
    out.train.insert(out.train.end(), part.train.begin(), part.train.end());
    out.eval.insert(out.eval.end(), part.eval.begin(), part.eval.end());
  }
  return out;
}

std::vector<gmr::RelativeSample> relative_samples(const std::vector<DemonstrationRecord>& records) {
  std::vector<gmr::RelativeSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(gmr::to_relative(r.target, r.follower));
  return out;
}

Point2 positional_mode(const gmm::MixtureModel& model, double window, double resolution) {
  const int cells = static_cast<int>(std::lround(window / resolution));
  const GridGeometry g(cells, cells, resolution, Pose(-window / 2.0, -window / 2.0, 0.0));
  // density_map is max-normalized, so its first 1.0 cell is the mode.
  const ScalarField field = gmr::density_map(model, Pose(), g);
  const auto& v = field.values();
  const std::size_t top = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  return cell_to_world(g.cell_at(top), g);
}

PoseError pose_error(const Pose& predicted, const Pose& target, const Pose& follower) {
  const double predicted_range = std::hypot(predicted.x - target.x, predicted.y - target.y);
  const double expert_range = std::hypot(follower.x - target.x, follower.y - target.y);
  return {std::abs(predicted_range - expert_range), std::abs(wrap_angle(predicted.alpha - follower.alpha))};
}

ErrorSamples best_pose_error(const gmm::MixtureModel& model, const std::vector<DemonstrationRecord>& eval) {
  if (eval.empty()) throw Error(Errc::EmptyEval, "no evaluation records");
  const Point2 mode = positional_mode(model);
  ErrorSamples out;
  out.distance.reserve(eval.size());
  out.angle.reserve(eval.size());
  for (const auto& r : eval) {
    const Pose spot = gmr::from_relative(r.target, {mode.x, mode.y, 0.0});
    const Pose predicted = gmr::best_relative_pose(model, r.target, {spot.x, spot.y});
    const PoseError e = pose_error(predicted, r.target, r.follower);
    out.distance.push_back(e.distance);
    out.angle.push_back(e.angle);
  }
  return out;
}

namespace {

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct RunErrors {
  std::vector<double> dist;  // per demo count
  std::vector<double> ang;
};

std::vector<DemonstrationRecord> obtain_demo(const ExperimentConfig& config, int run, int demo,
                                             const std::shared_ptr<const OccupancyGrid>& grid, std::uint64_t run_seed) {
  std::string path;
  if (config.records_dir) {
    std::ostringstream name;
    name << "run" << (run < 10 ? "0" : "") << run << "_demo" << demo << ".jsonl";
    path = (std::filesystem::path(*config.records_dir) / name.str()).string();
    if (std::filesystem::exists(path)) return read_jsonl(path);
  }
  sim::RunConfig rc;
  rc.grid = grid;
  rc.sim = config.sim;
  rc.policy = sim::PolicyKind::Expert;
  rc.seed = derive_seed(run_seed, static_cast<std::uint64_t>(demo));
  rc.duration = config.demo_duration;
  rc.demo_id = demo;
  std::vector<DemonstrationRecord> records = sim::run(rc).records;
  if (!path.empty()) write_jsonl(records, path);
  return records;
}

RunErrors run_once(const ExperimentConfig& config, int run, const std::shared_ptr<const OccupancyGrid>& grid) {
  const std::uint64_t run_seed = derive_seed(config.seed, static_cast<std::uint64_t>(run));
  DemoStore store;
  for (int d = 1; d <= config.demos; ++d) store.append_demo(obtain_demo(config, run, d, grid, run_seed), d);

  // Held-out records of every demo form one fixed evaluation set.
  const Split all = split_by_demo(store, config.train_fraction, derive_seed(run_seed, 100));
  RunErrors out;
  std::vector<DemonstrationRecord> train;
  for (int k = 1; k <= config.demos; ++k) {
    for (const auto& r : all.train)
      if (r.demo_id == k) train.push_back(r);
    gmm::SelectOptions options;
    options.k_max = config.k_max;
    options.seed = derive_seed(run_seed, 200 + static_cast<std::uint64_t>(k));
    try {
      const auto fit = gmr::fit_relative_model(relative_samples(train), options);
      const ErrorSamples errors = best_pose_error(fit.model, all.eval);
      out.dist.push_back(mean(errors.distance));
      out.ang.push_back(mean(errors.angle));
    } catch (const Error& e) {
      throw Error(e.code(), "run " + std::to_string(run) + ", demos " + std::to_string(k) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& config) {
  if (config.runs < 1 || config.demos < 1) throw Error(Errc::InvalidArgument, "runs and demos must be >= 1");
  const auto grid = config.grid ? config.grid : std::make_shared<const OccupancyGrid>(default_room());
  if (config.records_dir) std::filesystem::create_directories(*config.records_dir);

  std::vector<RunErrors> results(static_cast<std::size_t>(config.runs));
  const int threads = std::clamp(config.threads, 1, config.runs);
  if (threads == 1) {
    for (int r = 0; r < config.runs; ++r) results[static_cast<std::size_t>(r)] = run_once(config, r, grid);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (int r = w; r < config.runs; r += threads) results[static_cast<std::size_t>(r)] = run_once(config, r, grid);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  ExperimentReport report;
  for (int k = 1; k <= config.demos; ++k) {
    std::vector<double> dist, ang;
    for (const auto& r : results) {
      dist.push_back(r.dist[static_cast<std::size_t>(k - 1)]);
      ang.push_back(r.ang[static_cast<std::size_t>(k - 1)]);
    }
    report.rows.push_back({k, mean(dist), sample_std(dist), mean(ang), sample_std(ang), config.runs});
  }
  return report;
}

std::string to_csv(const ExperimentReport& report) {
  std::string out = "demos,dist_mean,dist_std,ang_mean,ang_std,runs\n";
  for (const auto& r : report.rows) {
    out += std::to_string(r.demos) + "," + format_double(r.dist_mean) + "," + format_double(r.dist_std) + "," +
           format_double(r.ang_mean) + "," + format_double(r.ang_std) + "," + std::to_string(r.runs) + "\n";
  }
  return out;
}

ExperimentReport report_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "demos,dist_mean,dist_std,ang_mean,ang_std,runs")
    throw Error(Errc::ParseError, "unexpected CSV header");
  ExperimentReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw Error(Errc::ParseError, "CSV row needs 6 columns: " + line);
    try {
      report.rows.push_back({std::stoi(cells[0]), std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3]),
                             std::stod(cells[4]), std::stoi(cells[5])});
    } catch (const std::exception&) {
      throw Error(Errc::ParseError, "bad CSV number in: " + line);
    }
  }
  return report;
}

}  // namespace stam::dataset
