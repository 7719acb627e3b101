#include "diffplan/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <stdexcept>

namespace diffplan {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::string& path,
                     const std::vector<std::string>& columns,
                     const std::string& comment)
    : os_(path), n_cols_(columns.size()) {
  if (!os_) throw std::runtime_error("csv: cannot open " + path);
  if (!comment.empty()) os_ << "# " << comment << "\n";
  for (size_t i = 0; i < columns.size(); ++i) {
    if (i) os_ << ",";
    os_ << columns[i];
  }
  os_ << "\n";
}

void CsvWriter::write_row(const std::vector<std::string>& cells) {
  if (cells.size() != n_cols_)
    throw std::invalid_argument("csv: row width mismatch");
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) os_ << ",";
    os_ << cells[i];
  }
  os_ << "\n";
}

void CsvWriter::flush() { os_.flush(); }

void RunningStat::push(double x) {
  n_ += 1;
  double d = x - mean_;
  mean_ += d / n_;
  m2_ += d * (x - mean_);
}

double RunningStat::stddev() const {
  if (n_ < 2) return 0.0;
  return std::sqrt(m2_ / (n_ - 1));
}

void RollingMean::push(double x) {
  values_.push_back(x);
  sum_ += x;
  if (values_.size() > window_) {
    sum_ -= values_.front();
    values_.pop_front();
  }
}

double RollingMean::mean() const {
  if (values_.empty()) return 0.0;
  return sum_ / static_cast<double>(values_.size());
}

LogLevel log_level() {
  const char* env = std::getenv("DIFFPLAN_LOG");
  if (!env) return LogLevel::kInfo;
  std::string v(env);
  if (v == "quiet") return LogLevel::kQuiet;
  if (v == "debug") return LogLevel::kDebug;
  return LogLevel::kInfo;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) std::cerr << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) std::cerr << msg << "\n";
}

}  // namespace diffplan
