#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "stam/protocol.hpp"
#include "stam/service.hpp"
#include "stam/ws_server.hpp"
#include "support.hpp"

using namespace stam;
using namespace stam::service;
using nlohmann::json;
using stam::testing::code_of;

namespace {

ServiceConfig test_config(std::string records_dir = {}) {
  ServiceConfig c;
  c.grid = std::make_shared<const OccupancyGrid>(default_room());
  c.seed = 3;
  c.records_dir = std::move(records_dir);
  return c;
}

json body(const Outbound& o) { return json::parse(o.text); }

// Sends one request and returns the single reply it produces.
json request(ServiceCore& core, SessionId id, const std::string& kind, json payload, std::optional<int> seq = {}) {
  json j{{"kind", kind}, {"payload", std::move(payload)}};
  if (seq) j["seq"] = *seq;
  HandleResult r = core.handle(id, j.dump());
  if (r.deferred) return body(*core.complete(id, r.deferred->run()));
  REQUIRE(r.replies.size() == 1);
  CHECK(r.replies[0].session == id);
  return body(r.replies[0]);
}

std::vector<json> advance_ticks(ServiceCore& core, SessionId id, int ticks) {
  std::vector<json> frames;
  for (int i = 0; i < ticks; ++i)
    for (const Outbound& o : core.advance())
      if (o.session == id) frames.push_back(body(o));
  return frames;
}

json random_payload(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  std::uniform_int_distribution<int> n(0, 4);
  json p = json::object();
  for (int i = n(rng); i > 0; --i) p["f" + std::to_string(i)] = u(rng);
  if (n(rng) > 2) p["pose"] = pose_json(Pose(u(rng), u(rng), 0.5));
  if (n(rng) > 2) p["ids"] = json::array({n(rng), n(rng)});
  if (n(rng) > 3) p["flag"] = true;
  return p;
}

}  // namespace

TEST_CASE("messages round trip through encode and decode") {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 300; ++i) {
    WireMessage m;
    m.kind = std::string(kMessageKinds[i % kMessageKinds.size()]);
    if (i % 3) m.seq = static_cast<std::int64_t>(rng() >> 12);
    m.payload = random_payload(rng);
    CHECK(decode(encode(m)) == m);
  }
  const std::string text = encode(WireMessage{"tick", 4, {{"t", 0.1}}});
  CHECK(text == R"({"kind":"tick","seq":4,"payload":{"t":0.1}})");
}

TEST_CASE("envelope errors") {
  CHECK(code_of([] { encode(WireMessage{"shout", 1, {}}); }) == Errc::MalformedMessage);
  CHECK(code_of([] { encode(WireMessage{"cmd", 1, {{"v", std::nan("")}}}); }) == Errc::MalformedMessage);
  CHECK(code_of([] { encode(WireMessage{"cmd", 1, json::array()}); }) == Errc::MalformedMessage);
  for (const char* bad : {"", "not json", "[]", R"({"payload":{}})", R"({"kind":3})", R"({"kind":"shout"})",
                          R"({"kind":"cmd","seq":1.5})", R"({"kind":"cmd","payload":[1]})"})
    CHECK(code_of([&] { decode(bad); }) == Errc::MalformedMessage);
  CHECK(decode(R"({"kind":"hello"})") == WireMessage{"hello", std::nullopt, json::object()});
}

TEST_CASE("request payloads are checked per kind") {
  const auto bad = [](const std::string& kind, json payload) {
    return code_of([&] { check_request(WireMessage{kind, 1, std::move(payload)}); });
  };
  CHECK(bad("cmd", {{"v", 1.0}}) == Errc::MalformedMessage);
  CHECK(bad("cmd", {{"v", "fast"}, {"omega", 0}}) == Errc::MalformedMessage);
  CHECK(bad("record", {{"active", 1}}) == Errc::MalformedMessage);
  CHECK(bad("record", {{"active", true}}) == Errc::MalformedMessage);
  CHECK(bad("fit", {{"demo_ids", json::array()}}) == Errc::MalformedMessage);
  CHECK(bad("fit", {{"demo_ids", {1.5}}}) == Errc::MalformedMessage);
  CHECK(bad("heatmap", {{"what", "cost"}}) == Errc::MalformedMessage);
  CHECK(bad("heatmap", {{"what", "gainmap"}, {"lambda", 1.5}}) == Errc::MalformedMessage);
  CHECK(bad("set_policy", {{"policy", "autopilot"}}) == Errc::MalformedMessage);
  CHECK(bad("tick", json::object()) == Errc::MalformedMessage);
  CHECK(bad("error", json::object()) == Errc::MalformedMessage);
  check_request(WireMessage{"record", 1, {{"active", false}}});
  check_request(WireMessage{"heatmap", 1, {{"what", "affordance"}}});
  CHECK(code_of([] { pose_from_json({{"x", 1}, {"y", 2}}); }) == Errc::MalformedMessage);
}

TEST_CASE("hello describes the world") {
  ServiceCore core(test_config());
  const SessionId s = core.open_session();
  const json r = request(core, s, "hello", json::object(), 7);
  CHECK(r.at("kind") == "hello");
  CHECK(r.at("seq") == 1);
  CHECK(r.at("payload").at("request_seq") == 7);
  CHECK(r.at("payload").at("role") == "observer");
  CHECK(r.at("payload").at("geometry").at("width") == 160);
  CHECK(r.at("payload").at("dt") == 0.05);
  std::istringstream map(r.at("payload").at("map").get<std::string>());
  CHECK(parse_map(map) == default_room());
  CHECK(code_of([] { ServiceCore(ServiceConfig{}); }) == Errc::InvalidArgument);
}

TEST_CASE("one driver at a time") {
  ServiceCore core(test_config());
  const SessionId a = core.open_session(), b = core.open_session();
  CHECK(request(core, a, "claim_driver", json::object()).at("payload").at("granted") == true);
  CHECK(request(core, a, "claim_driver", json::object()).at("kind") == "claim_driver");
  CHECK(request(core, b, "claim_driver", json::object()).at("kind") == "error");
  CHECK(request(core, b, "cmd", {{"v", 1.0}, {"omega", 0.0}}).at("kind") == "error");
  core.close_session(a);
  CHECK(!core.driver());
  CHECK(request(core, b, "claim_driver", json::object()).at("payload").at("granted") == true);
  CHECK(core.driver() == b);
}

TEST_CASE("driver commands show up in the next snapshot") {
  ServiceCore core(test_config());
  const SessionId driver = core.open_session(), observer = core.open_session();
  request(core, driver, "claim_driver", json::object());
  CHECK(core.handle(driver, R"({"kind":"cmd","payload":{"v":1.0,"omega":0.0}})").replies.empty());
  const std::vector<json> seen = advance_ticks(core, observer, static_cast<int>(core.snapshot_every()));
  REQUIRE(seen.size() == 1);
  const json& tick = seen[0].at("payload");
  CHECK(tick.at("commanded").at("v") == 1.0);
  CHECK(tick.at("commanded").at("omega") == 0.0);
  for (const char* key : {"t", "target", "follower", "collision", "recording"}) CHECK(tick.contains(key));
  CHECK(tick.at("follower").contains("alpha"));
}

TEST_CASE("snapshots are decimated to 10 Hz with increasing time and seq") {
  ServiceCore core(test_config());
  const SessionId s = core.open_session();
  CHECK(core.snapshot_every() == 2);
  request(core, s, "hello", json::object());
  const std::vector<json> ticks = advance_ticks(core, s, 100);
  REQUIRE(ticks.size() == 50);
  for (std::size_t i = 1; i < ticks.size(); ++i) {
    CHECK(ticks[i].at("payload").at("t").get<double>() > ticks[i - 1].at("payload").at("t").get<double>());
    CHECK(ticks[i].at("seq").get<long>() == ticks[i - 1].at("seq").get<long>() + 1);
  }
  CHECK(ticks.front().at("seq") == 2);
  CHECK(ticks.back().at("payload").at("t").get<double>() == doctest::Approx(5.0));
}

TEST_CASE("bad frames get an error and the session carries on") {
  ServiceCore core(test_config());
  const SessionId s = core.open_session();
  json r = request(core, s, "hello", json::object(), 1);
  r = body(core.handle(s, R"({"kind":"shout","seq":5})").replies.at(0));
  CHECK(r.at("kind") == "error");
  CHECK(r.at("payload").at("seq") == 5);
  CHECK(r.at("payload").at("message").get<std::string>().find("MalformedMessage") == 0);
  r = body(core.handle(s, "{{{").replies.at(0));
  CHECK(r.at("payload").at("seq").is_null());
  r = request(core, s, "cmd", {{"omega", 0.0}}, 6);
  CHECK(r.at("kind") == "error");
  CHECK(r.at("payload").at("seq") == 6);
  // Inbound seq must increase.
  r = request(core, s, "hello", json::object(), 6);
  CHECK(r.at("kind") == "error");
  r = request(core, s, "hello", json::object(), 9);
  CHECK(r.at("kind") == "hello");
  CHECK(r.at("seq") == 6);
  CHECK(core.sessions() == std::vector<SessionId>{s});
  CHECK(code_of([&] { core.handle(99, "{}"); }) == Errc::InvalidArgument);
}

TEST_CASE("recording writes a demo file") {
  const auto dir = std::filesystem::temp_directory_path() / "stam_test_service_records";
  std::filesystem::remove_all(dir);
  ServiceCore core(test_config(dir.string()));
  const SessionId s = core.open_session();
  request(core, s, "claim_driver", json::object());
  json r = request(core, s, "record", {{"active", true}, {"demo_id", 1}});
  CHECK(r.at("payload").at("active") == true);
  CHECK(request(core, s, "record", {{"active", true}, {"demo_id", 2}}).at("kind") == "error");
  core.handle(s, R"({"kind":"cmd","payload":{"v":0.3,"omega":0.2}})");
  const std::vector<json> ticks = advance_ticks(core, s, 200);
  CHECK(ticks.back().at("payload").at("recording") == true);
  CHECK(ticks.back().at("payload").at("demo_id") == 1);
  r = request(core, s, "record", {{"active", false}});
  CHECK(r.at("payload").at("records") == 200);

  const auto records = read_jsonl((dir / "demo_1.jsonl").string());
  CHECK(records.size() == 200);
  for (const auto& rec : records) {
    CHECK(rec.demo_id == 1);
    CHECK(rec.source == DemoSource::Teleop);
  }
  CHECK(core.demos().demo(1).records == records);
  CHECK(request(core, s, "record", {{"active", false}}).at("kind") == "error");
  const json dup = request(core, s, "record", {{"active", true}, {"demo_id", 1}});
  CHECK(dup.at("payload").at("message").get<std::string>().find("DuplicateDemo") == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("fitting, heatmaps and the learned policy") {
  ServiceCore core(test_config());
  const SessionId s = core.open_session();

  json r = request(core, s, "heatmap", {{"what", "affordance"}});
  CHECK(r.at("payload").at("message").get<std::string>().find("NoModel") == 0);
  CHECK(request(core, s, "set_policy", {{"policy", "follow"}}).at("kind") == "error");
  r = request(core, s, "fit", {{"demo_ids", {1}}}, 3);
  CHECK(r.at("payload").at("message").get<std::string>().find("UnknownDemo") == 0);
  CHECK(r.at("payload").at("seq") == 3);

  CHECK(request(core, s, "set_policy", {{"policy", "expert"}}).at("payload").at("policy") == "expert");
  for (int demo : {1, 2}) {
    request(core, s, "record", {{"active", true}, {"demo_id", demo}});
    advance_ticks(core, s, 300);
    request(core, s, "record", {{"active", false}});
  }
  CHECK(core.demos().demo(2).records.front().source == DemoSource::Scripted);

  r = request(core, s, "fit", {{"demo_ids", {1}}}, 10);
  REQUIRE(r.at("kind") == "fit");
  CHECK(r.at("payload").at("version") == 1);
  CHECK(r.at("payload").at("request_seq") == 10);
  CHECK(r.at("payload").at("bic_scores").size() == 8);
  const gmm::MixtureModel model = gmm::model_from_json(r.at("payload").at("model"));
  CHECK(model.dim() == 3);
  CHECK(model.size() == r.at("payload").at("selected_k").get<std::size_t>());
  r = request(core, s, "fit", {{"demo_ids", {1, 2}}}, 11);
  CHECK(r.at("payload").at("version") == 2);
  CHECK(r.at("payload").at("samples") == 600);

  r = request(core, s, "heatmap", {{"what", "affordance"}});
  const GridGeometry g = core.world().grid->geometry();
  const auto values = r.at("payload").at("values").get<std::vector<double>>();
  CHECK(values.size() == static_cast<std::size_t>(g.width * g.height));
  CHECK(*std::max_element(values.begin(), values.end()) == 1.0);
  CHECK(*std::min_element(values.begin(), values.end()) >= 0.0);
  CHECK(r.at("payload").at("version") == 2);

  r = request(core, s, "heatmap", {{"what", "gainmap"}, {"lambda", 1.0}});
  const ScalarField cost = normalize_costmap(*core.world().grid, sim::FollowParams().inflation_radius);
  const auto gain = r.at("payload").at("values").get<std::vector<double>>();
  REQUIRE(gain.size() == cost.values().size());
  for (std::size_t i = 0; i < gain.size(); ++i) CHECK(gain[i] == 1.0 - cost.values()[i]);

  CHECK(request(core, s, "set_policy", {{"policy", "follow"}}).at("payload").at("policy") == "follow");
  const std::vector<json> ticks = advance_ticks(core, s, 40);
  CHECK(ticks.back().at("payload").at("policy") == "follow");
  CHECK(core.policy() == sim::PolicyKind::Follow);
}

TEST_CASE("deferred results for a closed session are dropped") {
  ServiceCore core(test_config());
  const SessionId s = core.open_session();
  core.close_session(s);
  CHECK(!core.complete(s, WireMessage{"fit", std::nullopt, json::object()}));
}

TEST_CASE("websocket server end to end") {
  namespace net = boost::asio;
  namespace websocket = boost::beast::websocket;
  WsServer server(test_config(), ServerOptions{"127.0.0.1", 0, 4.0, false});
  const unsigned short port = server.port();
  CHECK(port != 0);
  std::thread loop([&] { server.run(); });

  net::io_context ioc;
  const auto connect = [&] {
    auto ws = std::make_unique<websocket::stream<net::ip::tcp::socket>>(ioc);
    ws->next_layer().connect({net::ip::make_address("127.0.0.1"), port});
    ws->handshake("127.0.0.1", "/");
    return ws;
  };
  const auto read_until = [](auto& ws, const std::string& kind) {
    for (int i = 0; i < 1000; ++i) {
      boost::beast::flat_buffer buf;
      ws.read(buf);
      json j = json::parse(boost::beast::buffers_to_string(buf.data()));
      if (j.at("kind") == kind) return j;
    }
    FAIL("no " << kind << " frame");
    return json();
  };

  auto driver = connect();
  auto observer = connect();
  driver->write(net::buffer(std::string(R"({"kind":"hello","seq":1})")));
  CHECK(read_until(*driver, "hello").at("payload").at("request_seq") == 1);

  observer->write(net::buffer(std::string(R"({"kind":"nonsense","seq":4})")));
  CHECK(read_until(*observer, "error").at("payload").at("seq") == 4);

  driver->write(net::buffer(std::string(R"({"kind":"claim_driver"})")));
  CHECK(read_until(*driver, "claim_driver").at("payload").at("granted") == true);
  observer->write(net::buffer(std::string(R"({"kind":"claim_driver"})")));
  CHECK(read_until(*observer, "error").at("kind") == "error");

  driver->write(net::buffer(std::string(R"({"kind":"cmd","payload":{"v":0.5,"omega":-1.0}})")));
  bool echoed = false;
  for (int i = 0; i < 20 && !echoed; ++i) {
    const json tick = read_until(*observer, "tick");
    echoed = tick.at("payload").at("commanded").at("v") == 0.5 && tick.at("payload").at("commanded").at("omega") == -1.0;
  }
  CHECK(echoed);

  double last = -1.0;
  for (int i = 0; i < 10; ++i) {
    const double t = read_until(*observer, "tick").at("payload").at("t").get<double>();
    CHECK(t > last);
    last = t;
  }

  CHECK(code_of([&] { WsServer(test_config(), ServerOptions{"127.0.0.1", port, 1.0, false}); }) == Errc::BindFailure);
  CHECK(code_of([&] { WsServer(test_config(), ServerOptions{"not-an-address", 0, 1.0, false}); }) == Errc::BindFailure);

  driver->close(websocket::close_code::normal);
  observer->close(websocket::close_code::normal);
  server.stop();
  loop.join();
}
