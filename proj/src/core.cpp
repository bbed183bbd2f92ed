#include "stam/core.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "stam/error.hpp"
#include "stam/gmm.hpp"
#include "stam/gmr.hpp"

namespace stam {

const Pose& EnvState::entity(const std::string& id) const {
  auto it = entities.find(id);
  if (it == entities.end()) throw Error(Errc::InvalidArgument, "state has no entity '" + id + "'");
  return it->second;
}

void Registry::register_descriptor(const std::string& task_id, StaDescriptor descriptor, AffordanceSignature signature) {
  if (task_id.empty()) throw Error(Errc::InvalidArgument, "task id must be non-empty");
  if (!descriptor.evaluate) throw Error(Errc::InvalidArgument, "descriptor has no evaluator");
  if (descriptor.validate) descriptor.validate(signature.params);
  signature.task_id = task_id;
  signature.version = 1;
  std::unique_lock lock(mutex_);
  if (entries_.count(task_id)) throw Error(Errc::DuplicateTask, "task '" + task_id + "' already registered");
  entries_.emplace(task_id, Entry{std::move(descriptor), std::make_shared<const AffordanceSignature>(std::move(signature))});
}

int Registry::update_signature(const std::string& task_id, nlohmann::json params, std::optional<nlohmann::json> meta) {
  StaDescriptor descriptor;
  {
    std::shared_lock lock(mutex_);
    descriptor = entry(task_id).descriptor;
  }
  // Validation runs outside the lock; readers keep the old signature meanwhile.
  if (descriptor.validate) descriptor.validate(params);

  std::unique_lock lock(mutex_);
  auto it = entries_.find(task_id);
  if (it == entries_.end()) throw Error(Errc::UnknownTask, "task '" + task_id + "' is not registered");
  auto next = std::make_shared<AffordanceSignature>(*it->second.signature);
  next->params = std::move(params);
  if (meta) next->meta = std::move(*meta);
  next->version += 1;
  it->second.signature = std::move(next);
  return it->second.signature->version;
}

bool Registry::contains(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  return entries_.count(task_id) > 0;
}

std::size_t Registry::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

const Registry::Entry& Registry::entry(const std::string& task_id) const {
  auto it = entries_.find(task_id);
  if (it == entries_.end()) throw Error(Errc::UnknownTask, "task '" + task_id + "' is not registered");
  return it->second;
}

std::shared_ptr<const AffordanceSignature> Registry::signature(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  return entry(task_id).signature;
}

ScalarField Registry::evaluate(const EnvState& state, const Task& task) const {
  StaDescriptor descriptor;
  std::shared_ptr<const AffordanceSignature> sig;
  {
    std::shared_lock lock(mutex_);
    const Entry& e = entry(task.id);
    descriptor = e.descriptor;
    sig = e.signature;
  }
  return descriptor.evaluate(state, task, *sig);
}

AffordanceMap compose(const std::vector<AffordanceMap>& maps, const std::vector<double>& weights, Composition rule) {
  if (maps.empty()) throw Error(Errc::EmptyInput, "compose needs at least one map");
  if (!weights.empty() && weights.size() != maps.size())
    throw Error(Errc::InvalidArgument, "weights and maps differ in length");
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw Error(Errc::InvalidArgument, "composition weights must be positive");
  const GridGeometry& geometry = maps.front().field.geometry();
  for (const auto& m : maps)
    if (!(m.field.geometry() == geometry)) throw Error(Errc::GeometryMismatch, "maps differ in geometry");

  std::vector<double> w(maps.size(), 1.0);
  if (!weights.empty()) w = weights;
  double wsum = 0.0;
  for (double x : w) wsum += x;

  ScalarField out(geometry, 0.0);
  auto& values = out.values();
  for (std::size_t c = 0; c < values.size(); ++c) {
    double acc = rule == Composition::ArithmeticMean ? 0.0 : 1.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const double v = maps[i].field.values()[c];
      switch (rule) {
        case Composition::Product: acc *= std::pow(v, w[i]); break;
        case Composition::GeometricMean: acc *= std::pow(v, w[i] / wsum); break;
        case Composition::ArithmeticMean: acc += w[i] * v; break;
      }
    }
    values[c] = rule == Composition::ArithmeticMean ? acc / wsum : acc;
  }
  const double top = out.max();
  if (top > 0.0 && top != 1.0)
    for (double& v : values) v /= top;

  AffordanceMap result{std::move(out), maps.front().t, {}};
  for (const auto& m : maps)
    for (const auto& id : m.tasks)
      if (std::find(result.tasks.begin(), result.tasks.end(), id) == result.tasks.end()) result.tasks.push_back(id);
  return result;
}

AffordanceMap evaluate_sta(const Registry& registry, const EnvState& state, const std::vector<Task>& tasks,
                           const std::vector<double>& weights, Composition rule) {
  if (tasks.empty()) throw Error(Errc::EmptyTaskSet, "no tasks to evaluate");
  std::vector<AffordanceMap> maps;
  maps.reserve(tasks.size());
  for (const auto& task : tasks) maps.push_back({registry.evaluate(state, task), state.t, {task.id}});
  AffordanceMap out = compose(maps, weights, rule);
  out.t = state.t;
  return out;
}

namespace follow {

StaDescriptor descriptor() {
  StaDescriptor d;
  d.validate = [](const nlohmann::json& params) {
    try {
      const gmm::MixtureModel m = gmm::model_from_json(params);
      if (m.dim() != 3) throw Error(Errc::InvalidParams, "follow model must be over (dx, dy, dalpha)");
    } catch (const Error& e) {
      if (e.code() == Errc::InvalidParams) throw;
      throw Error(Errc::InvalidParams, e.what());
    }
  };
  d.evaluate = [](const EnvState& state, const Task& task, const AffordanceSignature& sig) {
    if (!state.world) throw Error(Errc::InvalidArgument, "state has no world grid");
    auto it = task.params.find("target");
    const Pose& target = state.entity(it == task.params.end() ? "target" : it->second);
    return gmr::density_map(gmm::model_from_json(sig.params), target, state.world->geometry());
  };
  return d;
}

AffordanceSignature make_signature(const nlohmann::json& model, std::size_t sample_count, std::uint64_t seed) {
  AffordanceSignature s;
  s.task_id = kTaskId;
  s.params = model;
  s.meta = {{"samples", sample_count}, {"seed", seed}};
  return s;
}

Task task(const std::string& target_entity) { return Task{kTaskId, {{"target", target_entity}}}; }

}  // namespace follow

nlohmann::json to_json(const AffordanceSignature& s) {
  return {{"task_id", s.task_id}, {"version", s.version}, {"model", s.params}, {"meta", s.meta}};
}

AffordanceSignature signature_from_json(const nlohmann::json& j) {
  try {
    AffordanceSignature s;
    s.task_id = j.at("task_id").get<std::string>();
    s.version = j.at("version").get<int>();
    s.params = j.at("model");
    if (j.contains("meta")) s.meta = j.at("meta");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidParams, e.what());
  }
}

}  // namespace stam
