#pragma once

#include <string>

#include "blkrew/prune.hpp"
#include "blkrew/reorder.hpp"

#include "json.hpp"

namespace blkrew {

using Json = nlohmann::ordered_json;

Json to_json(const PruneReport& report);
Json to_json(const CriticalWeightReport& report);
Json to_json(const BenchCase& bench);
Json to_json(const BalanceMetrics& metrics);

void write_report(const Json& report, const std::string& path);
Json read_report(const std::string& path);

// <command>-seed<seed>-<UTC timestamp>.json
std::string default_report_name(const std::string& command, uint64_t seed);

}  // namespace blkrew
