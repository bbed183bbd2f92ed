#include "stam/records.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stam/error.hpp"

namespace stam {

namespace {

using ordered = nlohmann::ordered_json;

ordered pose_json(const Pose& p) { return ordered{{"x", p.x}, {"y", p.y}, {"alpha", p.alpha}}; }

Pose pose_from(const nlohmann::json& j) {
  const double x = j.at("x").get<double>(), y = j.at("y").get<double>(), a = j.at("alpha").get<double>();
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(a)) throw Error(Errc::ParseError, "non-finite pose");
  return Pose(x, y, a);
}

}  // namespace

std::string_view to_string(DemoSource s) { return s == DemoSource::Scripted ? "scripted" : "teleop"; }

DemoSource demo_source_from_string(std::string_view s) {
  if (s == "scripted") return DemoSource::Scripted;
  if (s == "teleop") return DemoSource::Teleop;
  throw Error(Errc::ParseError, "unknown demonstration source '" + std::string(s) + "'");
}

std::string to_jsonl_line(const DemonstrationRecord& r) {
  ordered j;
  j["t"] = r.t;
  j["target"] = pose_json(r.target);
  j["follower"] = pose_json(r.follower);
  j["demo_id"] = r.demo_id;
  j["source"] = std::string(to_string(r.source));
  return j.dump();
}

DemonstrationRecord record_from_jsonl_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    DemonstrationRecord r;
    r.t = j.at("t").get<double>();
    r.target = pose_from(j.at("target"));
    r.follower = pose_from(j.at("follower"));
    r.demo_id = j.at("demo_id").get<int>();
    r.source = demo_source_from_string(j.at("source").get<std::string>());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, std::string("bad record line: ") + e.what());
  }
}

std::string to_jsonl(const std::vector<DemonstrationRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += to_jsonl_line(r);
    out += '\n';
  }
  return out;
}

std::vector<DemonstrationRecord> records_from_jsonl(const std::string& text) {
  std::vector<DemonstrationRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(record_from_jsonl_line(line));
  return out;
}

void write_jsonl(const std::vector<DemonstrationRecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path);
  out << to_jsonl(records);
}

std::vector<DemonstrationRecord> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::ParseError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return records_from_jsonl(ss.str());
}

}  // namespace stam
