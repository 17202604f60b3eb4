#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowctl/closed_loop.hpp"

namespace flowctl {

struct ReportRow
{
  double regime{0};
  std::string controller;
  std::uint64_t seed{0};
  double reduction_pct{0};
  double mean_J{0};
};

/**
 * Pairs every log with the uncontrolled log of the same regime and computes
 * its drag reduction. Throws MissingArtifact when a regime has no baseline.
 * Rows are sorted by regime, then controller, then seed.
 */
std::vector<ReportRow> build_report(const std::vector<ClosedLoopLog> & logs, double t_settle = kDefaultSettleTime);

/// All closed-loop logs (CSV files with a metadata sidecar) directly inside `dir`.
std::vector<ClosedLoopLog> collect_logs(const std::filesystem::path & dir);

/// CSV with header `regime,controller,seed,reduction_pct,mean_J`.
void write_report_csv(const std::vector<ReportRow> & rows, const std::filesystem::path & path);

/// Fixed-width text table with one line per row.
std::string format_report_table(const std::vector<ReportRow> & rows);

}  // namespace flowctl
