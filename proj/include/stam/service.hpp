#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stam/core.hpp"
#include "stam/dataset.hpp"
#include "stam/protocol.hpp"
#include "stam/sim.hpp"

namespace stam::service {

struct ServiceConfig {
  std::shared_ptr<const OccupancyGrid> grid;
  sim::SimConfig sim;
  sim::FollowParams follow;
  std::uint64_t seed = 1;
  double separation = 2.0;
  double snapshot_rate = 10.0;  // Hz
  std::string records_dir;      // demo_<id>.jsonl written here when set
  int k_max = 8;
};

using SessionId = std::uint64_t;

/// A frame addressed to one session.
struct Outbound {
  SessionId session = 0;
  std::string text;
};

/// Work that must run off the simulation loop. `run` is safe to call from any
/// thread; its result is handed back to `complete` on the loop thread.
struct Deferred {
  SessionId session = 0;
  std::function<WireMessage()> run;
};

struct HandleResult {
  std::vector<Outbound> replies;
  std::optional<Deferred> deferred;
};

/// Transport-independent server state. Every member function except the
/// Deferred jobs it hands out must be called from the one thread that owns
/// the simulation loop.
class ServiceCore {
 public:
  /// Throws Errc::InvalidArgument when the configuration is unusable.
  explicit ServiceCore(ServiceConfig config);

  SessionId open_session();
  void close_session(SessionId id);
  std::vector<SessionId> sessions() const;
  std::optional<SessionId> driver() const { return driver_; }

  /// Parses and applies one inbound frame. Malformed or rejected requests
  /// produce an error reply; the session stays open.
  HandleResult handle(SessionId id, std::string_view text);

  /// Stamps the result of a Deferred job for its session; nothing when the
  /// session has gone away.
  std::optional<Outbound> complete(SessionId id, WireMessage result);

  /// Advances the simulation one tick, draining the command mailbox first.
  /// Returns a tick frame per session when the snapshot decimation fires.
  std::vector<Outbound> advance();

  const sim::SimWorld& world() const { return world_; }
  sim::PolicyKind policy() const { return policy_; }
  const dataset::DemoStore& demos() const { return demos_; }
  std::shared_ptr<const Registry> registry() const { return registry_; }
  long snapshot_every() const { return snapshot_every_; }

 private:
  struct Session {
    std::int64_t last_inbound = 0;
    bool seen_inbound = false;
    std::int64_t next_outbound = 1;
  };

  std::string frame(SessionId id, const std::string& kind, nlohmann::json payload);
  Outbound reply(SessionId id, const std::string& kind, nlohmann::json payload, std::optional<std::int64_t> seq);
  Outbound error(SessionId id, const std::string& message, std::optional<std::int64_t> seq);

  HandleResult on_hello(SessionId id, const WireMessage& m);
  HandleResult on_claim_driver(SessionId id, const WireMessage& m);
  HandleResult on_cmd(SessionId id, const WireMessage& m);
  HandleResult on_record(SessionId id, const WireMessage& m);
  HandleResult on_fit(SessionId id, const WireMessage& m);
  HandleResult on_heatmap(SessionId id, const WireMessage& m);
  HandleResult on_set_policy(SessionId id, const WireMessage& m);

  void finish_recording();
  nlohmann::json snapshot() const;

  ServiceConfig config_;
  std::shared_ptr<Registry> registry_ = std::make_shared<Registry>();
  std::shared_ptr<std::mutex> fit_mutex_ = std::make_shared<std::mutex>();
  ScalarField cost_;

  sim::SimWorld world_;
  sim::TargetWanderer wanderer_;
  sim::ScriptedExpert expert_;
  std::optional<sim::FollowController> follower_;
  sim::PolicyKind policy_ = sim::PolicyKind::Teleop;
  sim::Velocity teleop_cmd_;
  std::deque<sim::Velocity> mailbox_;
  sim::Recorder recorder_;
  dataset::DemoStore demos_;
  std::vector<std::string> diagnostics_;
  long ticks_ = 0;
  long snapshot_every_ = 1;
  int fits_ = 0;

  std::map<SessionId, Session> sessions_;
  SessionId next_session_ = 1;
  std::optional<SessionId> driver_;
};

}  // namespace stam::service
