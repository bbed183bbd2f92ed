#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "stam/grid.hpp"

namespace stam::service {

inline constexpr std::array<std::string_view, 9> kMessageKinds = {
    "hello", "claim_driver", "cmd", "record", "fit", "heatmap", "set_policy", "tick", "error"};

bool is_known_kind(std::string_view kind);

/// One JSON text frame: {"kind", "seq", "payload"}. Inbound frames may omit
/// seq; outbound frames always carry one.
struct WireMessage {
  std::string kind;
  std::optional<std::int64_t> seq;
  nlohmann::json payload = nlohmann::json::object();

  bool operator==(const WireMessage&) const = default;
};

/// Throws Errc::MalformedMessage for unknown kinds or non-finite numbers.
std::string encode(const WireMessage& m);

/// Throws Errc::MalformedMessage. Only the envelope is checked here; the
/// per-kind payload schema is checked by `check_request`.
WireMessage decode(std::string_view text);

/// Validates the payload of a client-to-server message. Throws
/// Errc::MalformedMessage naming the offending field.
void check_request(const WireMessage& m);

nlohmann::json pose_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

}  // namespace stam::service
