#include "flowctl/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "flowctl/csv.hpp"

namespace flowctl {

std::vector<ReportRow> build_report(const std::vector<ClosedLoopLog> & logs, double t_settle)
{
  std::vector<ReportRow> rows;
  for (const auto & log : logs) {
    const auto base = std::find_if(logs.begin(), logs.end(), [&](const ClosedLoopLog & b) {
      return b.controller == "none" && b.regime == log.regime && b.dt == log.dt && b.rows.size() == log.rows.size();
    });
    if (base == logs.end()) {
      std::ostringstream os;
      os << "no uncontrolled baseline log for regime " << log.regime << " (needed by the " << log.controller << " run)";
      fail(ErrorKind::MissingArtifact, os.str());
    }
    rows.push_back({log.regime, log.controller, log.seed, drag_reduction(*base, log, t_settle), mean_cost(log, t_settle)});
  }
  std::sort(rows.begin(), rows.end(), [](const ReportRow & a, const ReportRow & b) {
    if (a.regime != b.regime) { return a.regime < b.regime; }
    if (a.controller != b.controller) { return a.controller < b.controller; }
    return a.seed < b.seed;
  });
  return rows;
}

std::vector<ClosedLoopLog> collect_logs(const std::filesystem::path & dir)
{
  require(std::filesystem::is_directory(dir), ErrorKind::MissingArtifact, "log directory " + dir.string() + " not found");
  std::vector<std::filesystem::path> paths;
  for (const auto & entry : std::filesystem::directory_iterator(dir)) {
    const auto & p = entry.path();
    if (p.extension() != ".csv") { continue; }
    auto meta = p;
    meta.replace_extension(".json");
    if (std::filesystem::exists(meta)) { paths.push_back(p); }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<ClosedLoopLog> logs;
  for (const auto & p : paths) { logs.push_back(read_log(p)); }
  return logs;
}

void write_report_csv(const std::vector<ReportRow> & rows, const std::filesystem::path & path)
{
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write report " + path.string());
  out << "regime,controller,seed,reduction_pct,mean_J\n";
  for (const auto & r : rows) {
    out << csv::format_double(r.regime) << ',' << r.controller << ',' << r.seed << ','
        << csv::format_double(r.reduction_pct) << ',' << csv::format_double(r.mean_J) << '\n';
  }
}

std::string format_report_table(const std::vector<ReportRow> & rows)
{
  std::string s;
  char line[128];
  std::snprintf(line, sizeof(line), "%10s  %-10s  %6s  %13s  %10s\n", "regime", "controller", "seed", "reduction [%]", "mean J");
  s += line;
  for (const auto & r : rows) {
    std::snprintf(line, sizeof(line), "%10.2f  %-10s  %6llu  %13.2f  %10.5f\n", r.regime, r.controller.c_str(),
      static_cast<unsigned long long>(r.seed), r.reduction_pct, r.mean_J);
    s += line;
  }
  return s;
}

}  // namespace flowctl
