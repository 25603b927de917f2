#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tubule/metrics.hpp"

namespace tubule {

using Fields = std::vector<std::pair<std::string, double>>;

/// Metric columns in their fixed report order.
Fields fields(const AirwayScores& s);
Fields fields(const AVScanScores& s);
Fields fields(const AVScores& s);
Fields fields(const ErrorBreakdown& e);

/// One `key=value` line per field, values with 6 decimals.
std::string format_key_values(const Fields& f);

/// Comma-separated table: header `case,<keys...>` then one row per case, all
/// values with 6 decimals. Every row must carry the same keys in the same order.
std::string format_table(const std::vector<std::pair<std::string, Fields>>& rows);
void write_table(const std::filesystem::path& path, const std::vector<std::pair<std::string, Fields>>& rows);

}  // namespace tubule
