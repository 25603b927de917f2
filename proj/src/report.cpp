#include "tubule/report.hpp"

#include <cstdio>
#include <fstream>

namespace tubule {

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

Fields fields(const AirwayScores& s) {
    return {{"bd", s.bd}, {"td", s.td}, {"tpr", s.tpr}, {"fpr", s.fpr}, {"dsc", s.dsc}};
}

Fields fields(const AVScanScores& s) {
    return {{"acc", s.acc}, {"tpr", s.tpr}, {"fpr", s.fpr}, {"dsc", s.dsc}, {"bd", s.bd}, {"td", s.td}};
}

Fields fields(const AVScores& s) {
    return {{"acc_mean", s.acc_mean},         {"acc_mean_ci_lo", s.acc_mean_ci.lo},
            {"acc_mean_ci_hi", s.acc_mean_ci.hi}, {"acc_median", s.acc_median},
            {"acc_median_ci_lo", s.acc_median_ci.lo}, {"acc_median_ci_hi", s.acc_median_ci.hi},
            {"tpr", s.tpr},                   {"tpr_sd", s.tpr_sd},
            {"fpr", s.fpr},                   {"fpr_sd", s.fpr_sd},
            {"dsc", s.dsc},                   {"dsc_sd", s.dsc_sd},
            {"bd", s.bd},                     {"bd_sd", s.bd_sd},
            {"td", s.td},                     {"td_sd", s.td_sd}};
}

Fields fields(const ErrorBreakdown& e) {
    static const char* names[3] = {"bg", "artery", "vein"};
    Fields f;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            f.emplace_back(std::string("cm_") + names[r] + "_" + names[c], e.normalized[r][c]);
    for (int t = 0; t < 5; ++t) f.emplace_back("type" + std::to_string(t + 1), e.type_percent[t]);
    return f;
}

std::string format_key_values(const Fields& f) {
    std::string out;
    for (const auto& [k, v] : f) out += k + "=" + fixed6(v) + "\n";
    return out;
}

std::string format_table(const std::vector<std::pair<std::string, Fields>>& rows) {
    if (rows.empty()) return {};
    std::string out = "case";
    for (const auto& [k, v] : rows.front().second) out += "," + k;
    out += "\n";
    for (const auto& [name, f] : rows) {
        if (f.size() != rows.front().second.size()) throw DataError("format_table: rows have different columns");
        out += name;
        for (std::size_t i = 0; i < f.size(); ++i) {
            if (f[i].first != rows.front().second[i].first) throw DataError("format_table: column order differs");
            out += "," + fixed6(f[i].second);
        }
        out += "\n";
    }
    return out;
}

void write_table(const std::filesystem::path& path, const std::vector<std::pair<std::string, Fields>>& rows) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out << format_table(rows);
}

}  // namespace tubule
