#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sepp/common.hpp"

// Run metrics as a flat CSV stream: one row per (phase, epoch), with fields
// left empty where a phase has nothing to report.

namespace sepp {

inline constexpr const char* kMetricsHeader = "phase,epoch,loss,top1,wall_time_s,pair_count,k_size";

struct MetricsRecord {
    std::string phase;
    std::int64_t epoch = -1;      // -1 renders as empty
    double loss = -1.0;           // negative renders as empty
    double top1 = -1.0;           // negative renders as empty
    double wall_time_s = -1.0;    // negative renders as empty
    std::int64_t pair_count = -1; // -1 renders as empty
    std::int64_t k_size = -1;     // -1 renders as empty
};

namespace detail {

inline std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

} // namespace detail

class MetricsLog {
public:
    void add(MetricsRecord record) { rows_.push_back(std::move(record)); }

    const std::vector<MetricsRecord>& rows() const { return rows_; }

    std::string to_csv() const {
        std::ostringstream out;
        out << kMetricsHeader << "\n";
        for (const MetricsRecord& r : rows_) {
            require(!r.phase.empty() && r.phase.find(',') == std::string::npos,
                    "metrics: phase name '", r.phase, "' is empty or contains a comma");
            out << r.phase << ",";
            if (r.epoch >= 0) {
                out << r.epoch;
            }
            out << ",";
            if (r.loss >= 0.0) {
                out << detail::format_fixed(r.loss, 9);
            }
            out << ",";
            if (r.top1 >= 0.0) {
                out << detail::format_fixed(r.top1, 6);
            }
            out << ",";
            if (r.wall_time_s >= 0.0) {
                out << detail::format_fixed(r.wall_time_s, 6);
            }
            out << ",";
            if (r.pair_count >= 0) {
                out << r.pair_count;
            }
            out << ",";
            if (r.k_size >= 0) {
                out << r.k_size;
            }
            out << "\n";
        }
        return out.str();
    }

    void write_file(const std::string& path) const {
        std::ofstream out(path, std::ios::trunc);
        require(out.good(), "metrics: cannot write ", path);
        out << to_csv();
        require(out.good(), "metrics: write to ", path, " failed");
    }

private:
    std::vector<MetricsRecord> rows_;
};

/// Parse a metrics CSV back into records; header is validated verbatim.
inline std::vector<MetricsRecord> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "metrics: cannot open ", path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "metrics: ", path, " is empty");
    require(line == kMetricsHeader, "metrics: unexpected header '", line, "' in ", path);
    std::vector<MetricsRecord> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::string field;
        std::istringstream ls(line);
        while (std::getline(ls, field, ',')) {
            fields.push_back(field);
        }
        while (fields.size() < 7) {
            fields.emplace_back(); // trailing empties are dropped by getline
        }
        require(fields.size() == 7, "metrics: malformed row '", line, "' in ", path);
        MetricsRecord r;
        r.phase = fields[0];
        r.epoch = fields[1].empty() ? -1 : std::stoll(fields[1]);
        r.loss = fields[2].empty() ? -1.0 : std::stod(fields[2]);
        r.top1 = fields[3].empty() ? -1.0 : std::stod(fields[3]);
        r.wall_time_s = fields[4].empty() ? -1.0 : std::stod(fields[4]);
        r.pair_count = fields[5].empty() ? -1 : std::stoll(fields[5]);
        r.k_size = fields[6].empty() ? -1 : std::stoll(fields[6]);
        rows.push_back(std::move(r));
    }
    return rows;
}

} // namespace sepp
