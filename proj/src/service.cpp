#include "stam/service.hpp"

#include <cmath>
#include <filesystem>

#include "stam/error.hpp"
#include "stam/gmr.hpp"
#include "stam/planner.hpp"
#include "stam/random.hpp"

namespace stam::service {

namespace {

std::optional<std::int64_t> salvage_seq(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_object()) {
    const auto seq = j.find("seq");
    if (seq != j.end() && seq->is_number_integer()) return seq->get<std::int64_t>();
  }
  return std::nullopt;
}

nlohmann::json geometry_json(const GridGeometry& g) {
  return {{"width", g.width}, {"height", g.height}, {"resolution", g.resolution}, {"origin", pose_json(g.origin)}};
}

}  // namespace

ServiceCore::ServiceCore(ServiceConfig config)
    : config_(std::move(config)),
      cost_(config_.grid ? normalize_costmap(*config_.grid, config_.follow.inflation_radius)
                         : throw Error(Errc::InvalidArgument, "service needs a map")),
      world_(sim::initial_world(config_.grid, config_.sim, config_.seed, config_.separation)),
      wanderer_(*config_.grid, derive_seed(config_.seed, 1), config_.sim),
      expert_(config_.sim.d_min, config_.sim.d_max, derive_seed(config_.seed, 2), config_.sim) {
  if (!(config_.snapshot_rate > 0.0)) throw Error(Errc::InvalidArgument, "snapshot rate must be positive");
  snapshot_every_ = std::max(1L, std::lround(1.0 / (config_.snapshot_rate * config_.sim.dt)));
}

SessionId ServiceCore::open_session() {
  const SessionId id = next_session_++;
  sessions_.emplace(id, Session{});
  return id;
}

void ServiceCore::close_session(SessionId id) {
  sessions_.erase(id);
  if (driver_ == id) {
    driver_.reset();
    mailbox_.clear();
    teleop_cmd_ = {};
  }
}

std::vector<SessionId> ServiceCore::sessions() const {
  std::vector<SessionId> out;
  for (const auto& [id, s] : sessions_) out.push_back(id);
  return out;
}

std::string ServiceCore::frame(SessionId id, const std::string& kind, nlohmann::json payload) {
  Session& s = sessions_.at(id);
  return encode(WireMessage{kind, s.next_outbound++, std::move(payload)});
}

Outbound ServiceCore::reply(SessionId id, const std::string& kind, nlohmann::json payload,
                            std::optional<std::int64_t> seq) {
  if (seq) payload["request_seq"] = *seq;
  return {id, frame(id, kind, std::move(payload))};
}

Outbound ServiceCore::error(SessionId id, const std::string& message, std::optional<std::int64_t> seq) {
  nlohmann::json payload{{"message", message}, {"seq", nullptr}};
  if (seq) payload["seq"] = *seq;
  return {id, frame(id, "error", std::move(payload))};
}

HandleResult ServiceCore::handle(SessionId id, std::string_view text) {
  if (!sessions_.count(id)) throw Error(Errc::InvalidArgument, "unknown session " + std::to_string(id));
  WireMessage m;
  try {
    m = decode(text);
  } catch (const Error& e) {
    return {{error(id, e.what(), salvage_seq(text))}, std::nullopt};
  }

  Session& s = sessions_.at(id);
  if (m.seq) {
    if (s.seen_inbound && *m.seq <= s.last_inbound)
      return {{error(id, "MalformedMessage: seq must increase (last " + std::to_string(s.last_inbound) + ")", m.seq)},
              std::nullopt};
    s.seen_inbound = true;
    s.last_inbound = *m.seq;
  }

  try {
    check_request(m);
    if (m.kind == "hello") return on_hello(id, m);
    if (m.kind == "claim_driver") return on_claim_driver(id, m);
    if (m.kind == "cmd") return on_cmd(id, m);
    if (m.kind == "record") return on_record(id, m);
    if (m.kind == "fit") return on_fit(id, m);
    if (m.kind == "heatmap") return on_heatmap(id, m);
    return on_set_policy(id, m);
  } catch (const Error& e) {
    return {{error(id, e.what(), m.seq)}, std::nullopt};
  }
}

std::optional<Outbound> ServiceCore::complete(SessionId id, WireMessage result) {
  if (!sessions_.count(id)) return std::nullopt;
  return Outbound{id, frame(id, result.kind, std::move(result.payload))};
}

HandleResult ServiceCore::on_hello(SessionId id, const WireMessage& m) {
  nlohmann::json payload{{"session", id},
                         {"role", driver_ == id ? "driver" : "observer"},
                         {"policy", std::string(sim::to_string(policy_))},
                         {"dt", config_.sim.dt},
                         {"snapshot_rate", config_.snapshot_rate},
                         {"v_max", config_.sim.v_max},
                         {"omega_max", config_.sim.omega_max},
                         {"geometry", geometry_json(config_.grid->geometry())},
                         {"map", format_map(*config_.grid)}};
  return {{reply(id, "hello", std::move(payload), m.seq)}, std::nullopt};
}

HandleResult ServiceCore::on_claim_driver(SessionId id, const WireMessage& m) {
  if (driver_ && *driver_ != id)
    return {{error(id, "driver role is held by session " + std::to_string(*driver_), m.seq)}, std::nullopt};
  driver_ = id;
  return {{reply(id, "claim_driver", {{"granted", true}, {"session", id}}, m.seq)}, std::nullopt};
}

HandleResult ServiceCore::on_cmd(SessionId id, const WireMessage& m) {
  if (driver_ != id) return {{error(id, "only the driver may send commands", m.seq)}, std::nullopt};
  mailbox_.push_back({m.payload.at("v").get<double>(), m.payload.at("omega").get<double>()});
  return {};
}

HandleResult ServiceCore::on_record(SessionId id, const WireMessage& m) {
  const bool active = m.payload.at("active").get<bool>();
  if (active) {
    const int demo_id = m.payload.at("demo_id").get<int>();
    if (recorder_.active())
      return {{error(id, "already recording demo " + std::to_string(recorder_.demo_id()), m.seq)}, std::nullopt};
    if (demos_.contains(demo_id)) throw Error(Errc::DuplicateDemo, "demo " + std::to_string(demo_id) + " exists");
    recorder_.start(demo_id, policy_ == sim::PolicyKind::Expert ? DemoSource::Scripted : DemoSource::Teleop);
    return {{reply(id, "record", {{"active", true}, {"demo_id", demo_id}}, m.seq)}, std::nullopt};
  }
  if (!recorder_.active()) return {{error(id, "not recording", m.seq)}, std::nullopt};
  const int demo_id = recorder_.demo_id();
  if (m.payload.contains("demo_id") && m.payload.at("demo_id").get<int>() != demo_id)
    return {{error(id, "recording demo is " + std::to_string(demo_id), m.seq)}, std::nullopt};
  finish_recording();
  nlohmann::json payload{{"active", false}, {"demo_id", demo_id}, {"records", demos_.demo(demo_id).records.size()}};
  return {{reply(id, "record", std::move(payload), m.seq)}, std::nullopt};
}

void ServiceCore::finish_recording() {
  const int demo_id = recorder_.demo_id();
  recorder_.stop();
  std::vector<DemonstrationRecord> records = recorder_.take();
  if (!config_.records_dir.empty()) {
    std::filesystem::create_directories(config_.records_dir);
    write_jsonl(records, (std::filesystem::path(config_.records_dir) / ("demo_" + std::to_string(demo_id) + ".jsonl"))
                             .string());
  }
  demos_.append_demo(std::move(records), demo_id);
}

HandleResult ServiceCore::on_fit(SessionId id, const WireMessage& m) {
  std::vector<int> ids;
  std::vector<DemonstrationRecord> records;
  for (const auto& v : m.payload.at("demo_ids")) {
    const int demo_id = v.get<int>();
    const auto& demo = demos_.demo(demo_id);
    ids.push_back(demo_id);
    records.insert(records.end(), demo.records.begin(), demo.records.end());
  }

  gmm::SelectOptions options;
  options.k_max = config_.k_max;
  options.seed = derive_seed(config_.seed, 1000 + static_cast<std::uint64_t>(fits_++));
  const auto seq = m.seq;
  Deferred job;
  job.session = id;
  job.run = [records = std::move(records), ids, options, seq, registry = registry_, mutex = fit_mutex_]() {
    nlohmann::json payload;
    try {
      const auto samples = dataset::relative_samples(records);
      const gmm::SelectionResult fit = gmr::fit_relative_model(samples, options);
      const nlohmann::json model = gmm::to_json(fit.model);
      const AffordanceSignature signature = follow::make_signature(model, samples.size(), options.seed);
      int version = 1;
      {
        std::lock_guard lock(*mutex);
        if (registry->contains(follow::kTaskId))
          version = registry->update_signature(follow::kTaskId, model, std::optional<nlohmann::json>(signature.meta));
        else
          registry->register_descriptor(follow::kTaskId, follow::descriptor(), signature);
      }
      payload = {{"model", model},         {"bic_scores", fit.bic_scores}, {"selected_k", fit.selected_k},
                 {"version", version},     {"demo_ids", ids},              {"samples", samples.size()}};
    } catch (const Error& e) {
      payload = {{"message", std::string(to_string(Errc::FitFailure)) + ": " + e.what()}, {"seq", nullptr}};
      if (seq) payload["seq"] = *seq;
      return WireMessage{"error", std::nullopt, std::move(payload)};
    }
    if (seq) payload["request_seq"] = *seq;
    return WireMessage{"fit", std::nullopt, std::move(payload)};
  };
  return {{}, std::move(job)};
}

HandleResult ServiceCore::on_heatmap(SessionId id, const WireMessage& m) {
  if (!registry_->contains(follow::kTaskId)) throw Error(Errc::NoModel, "no follow model has been fitted");
  const std::string what = m.payload.at("what").get<std::string>();
  const double lambda = m.payload.value("lambda", config_.follow.lambda);

  const EnvState state{world_.t, {{"target", world_.target.pose}, {"follower", world_.follower.pose}}, config_.grid};
  const AffordanceMap affordance = evaluate_sta(*registry_, state, {follow::task()});
  const ScalarField field = what == "affordance" ? affordance.field : planner::gainmap(cost_, affordance.field, lambda);

  nlohmann::json payload = geometry_json(field.geometry());
  payload["what"] = what;
  payload["lambda"] = lambda;
  payload["t"] = world_.t;
  payload["version"] = registry_->signature(follow::kTaskId)->version;
  payload["values"] = field.values();
  return {{reply(id, "heatmap", std::move(payload), m.seq)}, std::nullopt};
}

HandleResult ServiceCore::on_set_policy(SessionId id, const WireMessage& m) {
  const sim::PolicyKind next = sim::policy_from_string(m.payload.at("policy").get<std::string>());
  if (next == sim::PolicyKind::Follow) {
    if (!registry_->contains(follow::kTaskId)) throw Error(Errc::NoModel, "no follow model has been fitted");
    follower_.emplace(registry_, config_.grid, config_.follow, config_.sim);
  }
  policy_ = next;
  teleop_cmd_ = {};
  mailbox_.clear();
  return {{reply(id, "set_policy", {{"policy", std::string(sim::to_string(policy_))}}, m.seq)}, std::nullopt};
}

std::vector<Outbound> ServiceCore::advance() {
  while (!mailbox_.empty()) {
    teleop_cmd_ = mailbox_.front();
    mailbox_.pop_front();
  }
  const sim::Velocity target_cmd = wanderer_.command(world_);
  sim::Velocity follower_cmd;
  switch (policy_) {
    case sim::PolicyKind::Expert: follower_cmd = expert_.command(world_); break;
    case sim::PolicyKind::Teleop: follower_cmd = teleop_cmd_; break;
    case sim::PolicyKind::Follow: {
      sim::FollowOutput out = follower_->command(world_);
      if (out.diagnostic) diagnostics_.push_back(*out.diagnostic);
      follower_cmd = out.cmd;
      break;
    }
  }
  world_ = sim::step(world_, target_cmd, follower_cmd);
  recorder_.record_tick(world_);

  std::vector<Outbound> out;
  if (++ticks_ % snapshot_every_ != 0) return out;
  const nlohmann::json snap = snapshot();
  diagnostics_.clear();
  for (auto& [id, s] : sessions_) out.push_back({id, frame(id, "tick", snap)});
  return out;
}

nlohmann::json ServiceCore::snapshot() const {
  nlohmann::json j{{"t", world_.t},
                   {"target", pose_json(world_.target.pose)},
                   {"follower", pose_json(world_.follower.pose)},
                   {"collision", world_.follower_collision},
                   {"target_collision", world_.target_collision},
                   {"recording", recorder_.active()},
                   {"policy", std::string(sim::to_string(policy_))},
                   {"commanded", {{"v", world_.follower.commanded.v}, {"omega", world_.follower.commanded.omega}}},
                   {"driver", driver_ ? nlohmann::json(*driver_) : nlohmann::json(nullptr)}};
  if (recorder_.active()) j["demo_id"] = recorder_.demo_id();
  if (!diagnostics_.empty()) j["diagnostics"] = diagnostics_;
  return j;
}

}  // namespace stam::service
