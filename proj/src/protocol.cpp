#include "stam/protocol.hpp"

#include <algorithm>
#include <cmath>

#include "stam/error.hpp"

namespace stam::service {

namespace {

[[noreturn]] void malformed(const std::string& what) { throw Error(Errc::MalformedMessage, what); }

bool all_finite(const nlohmann::json& j) {
  if (j.is_number_float()) return std::isfinite(j.get<double>());
  if (j.is_structured())
    return std::all_of(j.begin(), j.end(), [](const nlohmann::json& v) { return all_finite(v); });
  return true;
}

const nlohmann::json& field(const nlohmann::json& payload, const char* name) {
  const auto it = payload.find(name);
  if (it == payload.end()) malformed(std::string("missing field '") + name + "'");
  return *it;
}

double number(const nlohmann::json& payload, const char* name) {
  const auto& v = field(payload, name);
  if (!v.is_number()) malformed(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

void integer(const nlohmann::json& payload, const char* name) {
  if (!field(payload, name).is_number_integer()) malformed(std::string("field '") + name + "' must be an integer");
}

}  // namespace

bool is_known_kind(std::string_view kind) {
  return std::find(kMessageKinds.begin(), kMessageKinds.end(), kind) != kMessageKinds.end();
}

std::string encode(const WireMessage& m) {
  if (!is_known_kind(m.kind)) malformed("unknown kind '" + m.kind + "'");
  if (!m.payload.is_object()) malformed("payload must be an object");
  if (!all_finite(m.payload)) malformed("payload numbers must be finite");
  nlohmann::ordered_json j;
  j["kind"] = m.kind;
  if (m.seq) j["seq"] = *m.seq;
  j["payload"] = m.payload;
  return j.dump();
}

WireMessage decode(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    malformed(std::string("not JSON: ") + e.what());
  }
  if (!j.is_object()) malformed("message must be an object");
  const auto kind = j.find("kind");
  if (kind == j.end() || !kind->is_string()) malformed("missing string field 'kind'");

  WireMessage m;
  m.kind = kind->get<std::string>();
  if (!is_known_kind(m.kind)) malformed("unknown kind '" + m.kind + "'");
  if (const auto seq = j.find("seq"); seq != j.end()) {
    if (!seq->is_number_integer()) malformed("seq must be an integer");
    m.seq = seq->get<std::int64_t>();
  }
  if (const auto payload = j.find("payload"); payload != j.end()) {
    if (!payload->is_object()) malformed("payload must be an object");
    m.payload = *payload;
  }
  if (!all_finite(m.payload)) malformed("payload numbers must be finite");
  return m;
}

void check_request(const WireMessage& m) {
  const auto& p = m.payload;
  if (m.kind == "hello" || m.kind == "claim_driver") return;
  if (m.kind == "cmd") {
    number(p, "v");
    number(p, "omega");
  } else if (m.kind == "record") {
    const auto& active = field(p, "active");
    if (!active.is_boolean()) malformed("field 'active' must be a boolean");
    if (active.get<bool>() || p.contains("demo_id")) integer(p, "demo_id");
  } else if (m.kind == "fit") {
    const auto& ids = field(p, "demo_ids");
    if (!ids.is_array() || ids.empty()) malformed("field 'demo_ids' must be a non-empty array");
    for (const auto& id : ids)
      if (!id.is_number_integer()) malformed("demo ids must be integers");
  } else if (m.kind == "heatmap") {
    const auto& what = field(p, "what");
    if (what != "affordance" && what != "gainmap") malformed("field 'what' must be 'affordance' or 'gainmap'");
    if (p.contains("lambda")) {
      const double lambda = number(p, "lambda");
      if (!(lambda >= 0.0 && lambda <= 1.0)) malformed("lambda must lie in [0, 1]");
    }
  } else if (m.kind == "set_policy") {
    const auto& policy = field(p, "policy");
    if (policy != "expert" && policy != "teleop" && policy != "follow")
      malformed("field 'policy' must be one of expert, teleop, follow");
  } else {
    malformed("'" + m.kind + "' is sent by the server only");
  }
}

nlohmann::json pose_json(const Pose& p) { return {{"x", p.x}, {"y", p.y}, {"alpha", p.alpha}}; }

Pose pose_from_json(const nlohmann::json& j) {
  if (!j.is_object()) malformed("pose must be an object");
  return Pose(number(j, "x"), number(j, "y"), number(j, "alpha"));
}

}  // namespace stam::service
