#include <cstdio>
#include <sstream>

#include "robarch/sweep.hpp"

namespace robarch {

namespace {

std::string one_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) { return s + std::string(width - s.size(), ' '); }

std::vector<double> row_values(const RobustnessReport& r, const ModelReport& m) {
  std::vector<double> v{m.clean_accuracy};
  for (const auto& c : m.cells) v.push_back(c.robust_accuracy);
  if (!r.worst_case_subset.empty() && m.worst_case) v.push_back(*m.worst_case);
  return v;
}

std::vector<std::string> column_names(const RobustnessReport& r) {
  std::vector<std::string> names{"clean"};
  for (const auto& t : r.threats) names.push_back(t.name);
  if (!r.worst_case_subset.empty()) names.push_back("worst-case");
  return names;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

}  // namespace

ReportFormat report_format_from_name(const std::string& name) {
  if (name == "table") return ReportFormat::table;
  if (name == "csv") return ReportFormat::csv;
  if (name == "records") return ReportFormat::records;
  throw ConfigError("report format: expected one of table, csv, records, got '" + name + "'");
}

std::string format_values(std::span<const double> values) {
  std::vector<std::string> parts;
  for (double v : values) parts.push_back(one_decimal(v));
  return join(parts, " | ");
}

std::string format_report(const RobustnessReport& r, ReportFormat format) {
  std::ostringstream out;
  const auto cols = column_names(r);
  if (format == ReportFormat::table) {
    std::size_t width = 5;
    for (const auto& m : r.models) width = std::max(width, m.name.size());
    std::vector<std::string> seen{"clean"}, unseen;
    for (const auto& t : r.threats) (t.seen ? seen : unseen).push_back(t.name);
    out << "# seen: " << join(seen, ", ") << "; unseen: " << (unseen.empty() ? "-" : join(unseen, ", "));
    if (!r.worst_case_subset.empty()) out << "; worst-case over: " << join(r.worst_case_subset, ", ");
    out << "; points: " << r.points << "\n";
    out << pad("model", width) << " | " << join(cols, " | ") << "\n";
    for (const auto& m : r.models) {
      if (!m.error.empty()) {
        out << pad(m.name, width) << " | error: " << m.error << "\n";
        continue;
      }
      const auto v = row_values(r, m);
      out << pad(m.name, width) << " | " << format_values(v) << "\n";
    }
    return out.str();
  }
  if (format == ReportFormat::csv) {
    std::vector<std::string> header{"model"};
    for (const auto& c : cols) header.push_back(c == "worst-case" ? "worst_case" : c);
    header.push_back("error");
    out << join(header, ",") << "\n";
    for (const auto& m : r.models) {
      std::vector<std::string> row{m.name};
      if (!m.error.empty()) {
        row.resize(header.size() - 1);
        std::string e = m.error;
        for (auto& ch : e) {
          if (ch == ',' || ch == '\n') ch = ' ';
        }
        row.push_back(e);
      } else {
        for (double v : row_values(r, m)) row.push_back(one_decimal(v));
        row.push_back("");
      }
      out << join(row, ",") << "\n";
    }
    return out.str();
  }
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& m : r.models) {
    if (!m.error.empty()) {
      recs.push_back({{"model", m.name}, {"error", m.error}});
      continue;
    }
    for (std::size_t t = 0; t < r.threats.size(); ++t) {
      const auto& c = m.cells[t];
      const auto& spec = r.threats[t];
      recs.push_back({{"model", m.name},
                      {"threat", spec.name},
                      {"kind", threat_name(spec.threat.kind)},
                      {"epsilon", spec.threat.epsilon},
                      {"seen", spec.seen},
                      {"points", r.points},
                      {"clean_accuracy", m.clean_accuracy},
                      {"robust_accuracy", c.robust_accuracy},
                      {"mean_best_loss", c.mean_best_loss},
                      {"artifact", c.artifact}});
    }
    if (m.worst_case) {
      recs.push_back({{"model", m.name},
                      {"threat", "worst-case"},
                      {"subset", r.worst_case_subset},
                      {"points", r.points},
                      {"clean_accuracy", m.clean_accuracy},
                      {"robust_accuracy", *m.worst_case}});
    }
  }
  return recs.dump(2) + "\n";
}

}  // namespace robarch
