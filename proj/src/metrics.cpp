#include "metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "errors.hpp"

namespace exacfs {

namespace {

constexpr const char* kHeader = "task,classes_seen,overall_acc,per_task_accs,wall_ms";

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

[[noreturn]] void bad_line(const std::string& path, int line_no, const std::string& why) {
  throw ConfigError(path + ":" + std::to_string(line_no) + ": " + why);
}

}  // namespace

double MetricsLog::average_incremental_accuracy() const {
  if (rows.empty()) throw ContractError("average_incremental_accuracy: empty metrics log");
  double acc = 0.0;
  for (const MetricsRow& r : rows) acc += r.overall_acc;
  return acc / static_cast<double>(rows.size());
}

std::string MetricsLog::to_csv() const {
  std::ostringstream os;
  os << kHeader << "\n";
  for (const MetricsRow& r : rows) {
    os << r.task << "," << r.classes_seen << "," << fmt6(r.overall_acc) << ",";
    for (std::size_t i = 0; i < r.per_task_accs.size(); ++i) {
      if (i > 0) os << ";";
      os << fmt6(r.per_task_accs[i]);
    }
    os << ",0\n";
  }
  os << "avg_incremental_accuracy," << fmt6(average_incremental_accuracy()) << "\n";
  return os.str();
}

void save_metrics(const std::string& path, const MetricsLog& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << log.to_csv();
}

MetricsLog parse_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open metrics file " + path);
  MetricsLog log;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_header) {
      if (line != kHeader) bad_line(path, line_no, "unsupported metrics schema: '" + line + "'");
      saw_header = true;
      continue;
    }
    if (line.rfind("avg_incremental_accuracy,", 0) == 0) {
      try {
        log.file_avg = std::stod(line.substr(line.find(',') + 1));
      } catch (const std::exception&) {
        bad_line(path, line_no, "bad average value");
      }
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) bad_line(path, line_no, "expected 5 columns");
    MetricsRow row;
    try {
      row.task = std::stoi(cells[0]);
      row.classes_seen = std::stoi(cells[1]);
      row.overall_acc = std::stod(cells[2]);
      std::stringstream ps(cells[3]);
      std::string p;
      while (std::getline(ps, p, ';')) row.per_task_accs.push_back(std::stod(p));
      row.wall_ms = std::stoll(cells[4]);
    } catch (const std::exception&) {
      bad_line(path, line_no, "bad numeric cell");
    }
    if (row.overall_acc < 0.0 || row.overall_acc > 1.0) {
      bad_line(path, line_no, "accuracy outside [0,1]");
    }
    log.rows.push_back(std::move(row));
  }
  if (!saw_header) throw ConfigError(path + ": empty metrics file");
  if (log.rows.empty()) throw ConfigError(path + ": no metric rows");
  if (!log.file_avg.has_value()) throw ConfigError(path + ": missing avg_incremental_accuracy line");
  return log;
}

}  // namespace exacfs
