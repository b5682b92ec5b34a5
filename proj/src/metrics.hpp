#pragma once

#include <optional>
#include <string>
#include <vector>

namespace exacfs {

struct MetricsRow {
  int task = 0;
  int classes_seen = 0;
  double overall_acc = 0.0;
  std::vector<double> per_task_accs;
  long long wall_ms = 0;  // measured; reported on stderr, not serialized
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  // Set when parsed from a file; the file's final-line value.
  std::optional<double> file_avg;

  double average_incremental_accuracy() const;

  // Header `task,classes_seen,overall_acc,per_task_accs,wall_ms`, one row per
  // task, final line `avg_incremental_accuracy,<value>`. The wall_ms column
  // is emitted as 0 so identical configurations produce identical bytes.
  std::string to_csv() const;
};

void save_metrics(const std::string& path, const MetricsLog& log);

// Strict parser; malformed content raises ConfigError naming file and line.
MetricsLog parse_metrics_csv(const std::string& path);

}  // namespace exacfs
