#pragma once

#include <deque>
#include <fstream>
#include <string>
#include <vector>

namespace diffplan {

// Formats a double with enough digits to round-trip exactly. All metrics
// files use this so identical runs produce identical bytes.
std::string format_double(double v);

// Append-only CSV writer with a fixed column set.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns,
            const std::string& comment = "");
  void write_row(const std::vector<std::string>& cells);
  void flush();

 private:
  std::ofstream os_;
  size_t n_cols_;
};

// Welford running mean/variance.
class RunningStat {
 public:
  void push(double x);
  long count() const { return n_; }
  double mean() const { return mean_; }
  double stddev() const;

 private:
  long n_ = 0;
  double mean_ = 0;
  double m2_ = 0;
};

// Rolling mean over the most recent `window` values.
class RollingMean {
 public:
  explicit RollingMean(size_t window) : window_(window) {}
  void push(double x);
  double mean() const;
  size_t count() const { return values_.size(); }

 private:
  size_t window_;
  std::deque<double> values_;
  double sum_ = 0;
};

// Stderr logger gated by the DIFFPLAN_LOG environment variable
// (quiet | info | debug; default info).
enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };
LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace diffplan
