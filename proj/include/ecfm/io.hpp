#ifndef ECFM_IO_HPP
#define ECFM_IO_HPP

#include "ecfm/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace ecfm {

// Shortest decimal form that round-trips an IEEE double exactly.
std::string format_double(double x);

// Normal quantile (Wichura AS241), |error| < 1e-13 on (0,1).
double normal_quantile(double p);

// Standard normal CDF.
double normal_cdf(double x);

// Digamma for positive arguments (recurrence + asymptotic series).
double digamma(double x);

// Parallel loop over [0, n) honoring the ECFM_THREADS cap. The body must only
// write to disjoint per-index slots; results are then reduced sequentially by
// the caller, so output is independent of the worker count.
void parallel_for(Index n, const std::function<void(Index, Index)>& chunk_body);

// Atomic-ish file write: writes whole content, throws IoError on failure.
void write_file(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

// Simple CSV writer with a fixed header; all numeric cells go through
// format_double so reruns are byte-identical.
class CsvWriter {
public:
  explicit CsvWriter(std::vector<std::string> header);
  void add_row(const std::vector<double>& cells);
  void add_row_mixed(const std::vector<std::string>& cells);
  std::string str() const { return body_; }
  void save(const std::filesystem::path& path) const { write_file(path, body_); }

private:
  std::size_t width_;
  std::string body_;
};

// Parses a CSV produced by CsvWriter; returns rows of doubles, skipping the header.
std::vector<std::vector<double>> read_csv(const std::filesystem::path& path);

// FNV-1a 64-bit hash, used for run ids.
std::uint64_t fnv1a(const std::string& bytes);

std::string hex_id(std::uint64_t h);

}  // namespace ecfm

#endif  // ECFM_IO_HPP
