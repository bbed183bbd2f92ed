#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stam/grid.hpp"

namespace stam {

/// World state s_E(t): entity poses over a grid world.
struct EnvState {
  double t = 0.0;
  std::map<std::string, Pose> entities;
  std::shared_ptr<const OccupancyGrid> world;

  /// Throws Errc::InvalidArgument when the entity is missing.
  const Pose& entity(const std::string& id) const;
};

struct Task {
  std::string id;
  std::map<std::string, std::string> params;
};

struct AffordanceSignature {
  std::string task_id;
  int version = 1;
  nlohmann::json params;  // for "follow": a serialized gmm::MixtureModel
  nlohmann::json meta = nlohmann::json::object();
};

struct AffordanceMap {
  ScalarField field;
  double t = 0.0;
  std::vector<std::string> tasks;
};

/// How a task turns its signature and the world state into a per-task map.
struct StaDescriptor {
  /// Throws Errc::InvalidParams when the parameter blob is unusable.
  std::function<void(const nlohmann::json& params)> validate;
  std::function<ScalarField(const EnvState&, const Task&, const AffordanceSignature&)> evaluate;
};

/// The affordance knowledge base: one descriptor and one signature per task.
/// One writer, many readers; a reader always sees a whole signature.
class Registry {
 public:
  void register_descriptor(const std::string& task_id, StaDescriptor descriptor, AffordanceSignature signature);
  /// Replaces the signature parameters and returns the new version.
  int update_signature(const std::string& task_id, nlohmann::json params,
                       std::optional<nlohmann::json> meta = std::nullopt);

  bool contains(const std::string& task_id) const;
  std::size_t size() const;
  /// Throws Errc::UnknownTask.
  std::shared_ptr<const AffordanceSignature> signature(const std::string& task_id) const;
  /// Evaluates one task against a consistent snapshot of its signature.
  ScalarField evaluate(const EnvState& state, const Task& task) const;

 private:
  struct Entry {
    StaDescriptor descriptor;
    std::shared_ptr<const AffordanceSignature> signature;
  };
  const Entry& entry(const std::string& task_id) const;

  mutable std::shared_mutex mutex_;
  std::map<std::string, Entry> entries_;
};

enum class Composition { Product, GeometricMean, ArithmeticMean };

/// Cellwise combination of per-task maps followed by max renormalization.
/// Product: prod v_i^{w_i}; GeometricMean: prod v_i^{w_i / sum w};
/// ArithmeticMean: sum w_i v_i / sum w. Unit weights when omitted.
AffordanceMap compose(const std::vector<AffordanceMap>& maps, const std::vector<double>& weights = {},
                      Composition rule = Composition::Product);

AffordanceMap evaluate_sta(const Registry& registry, const EnvState& state, const std::vector<Task>& tasks,
                           const std::vector<double>& weights = {}, Composition rule = Composition::Product);

namespace follow {

inline constexpr const char* kTaskId = "follow";

/// Descriptor for the follow task: GMR density map of the follower around the
/// entity named by the task's "target" param (default "target").
StaDescriptor descriptor();

AffordanceSignature make_signature(const nlohmann::json& model, std::size_t sample_count, std::uint64_t seed);

Task task(const std::string& target_entity = "target");

}  // namespace follow

nlohmann::json to_json(const AffordanceSignature& s);
AffordanceSignature signature_from_json(const nlohmann::json& j);

}  // namespace stam
