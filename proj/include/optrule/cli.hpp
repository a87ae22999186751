#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

namespace optrule {

inline constexpr int kReportSchemaVersion = 1;

// Stable text form of a report: keys in insertion order, two-space indent,
// reals with 17 significant digits, non-finite reals as "inf"/"-inf"/null.
std::string serialize_report(const nlohmann::ordered_json& report);
nlohmann::ordered_json parse_report(const std::string& text);

// Runs one CLI command. `args` excludes the program name. Returns the exit
// code: 0 on success, 1 after writing a one-line JSON error record to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace optrule
