#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "stam/grid.hpp"

namespace stam {

enum class DemoSource { Scripted, Teleop };

std::string_view to_string(DemoSource s);
/// Throws Errc::ParseError.
DemoSource demo_source_from_string(std::string_view s);

/// One recorded tick of a demonstration.
struct DemonstrationRecord {
  double t = 0.0;
  Pose target;
  Pose follower;
  int demo_id = 0;
  DemoSource source = DemoSource::Scripted;

  bool operator==(const DemonstrationRecord&) const = default;
};

/// One JSON object per line: {"t","target":{"x","y","alpha"},"follower":{...},"demo_id","source"}.
std::string to_jsonl_line(const DemonstrationRecord& r);
DemonstrationRecord record_from_jsonl_line(const std::string& line);

std::string to_jsonl(const std::vector<DemonstrationRecord>& records);
std::vector<DemonstrationRecord> records_from_jsonl(const std::string& text);

void write_jsonl(const std::vector<DemonstrationRecord>& records, const std::string& path);
std::vector<DemonstrationRecord> read_jsonl(const std::string& path);

}  // namespace stam
