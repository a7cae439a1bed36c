#pragma once

// CSV reading and writing, number formatting, atomic file output, and the
// draws file format shared by the command-line tool.

#include <filesystem>
#include <string>
#include <vector>

#include "poolerc/sampler.hpp"

namespace poolerc {

// A parsed CSV file. Cells are kept as text; typed accessors raise
// ValidationError naming the file, line and column.
class CsvTable {
 public:
  std::string source;  // file name used in messages
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line;  // 1-based source line of each row

  std::size_t size() const { return rows.size(); }
  // Column index, or -1 when absent.
  int column(const std::string& name) const;
  int require(const std::string& name) const;

  const std::string& text(std::size_t row, int col) const;
  bool empty(std::size_t row, int col) const;
  double number(std::size_t row, int col) const;
  int integer(std::size_t row, int col) const;
  std::string where(std::size_t row, int col) const;
};

// RFC 4180 style: comma separated, double-quoted fields may contain commas,
// quotes ("") and newlines. A header row is mandatory; blank lines are skipped.
CsvTable parse_csv(const std::string& text, const std::string& source);
CsvTable read_csv(const std::filesystem::path& path);

class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  const std::string& str() const { return out_; }

 private:
  void append(const std::vector<std::string>& cells);
  std::size_t width_;
  std::string out_;
};

// Shortest round-trip decimal form; "NA" for NaN, "inf"/"-inf" otherwise.
std::string format_number(double value);
std::string format_number(int value);

// Writes through a temporary file in the same directory and renames it over
// `path`, so readers never see a partial file. Creates parent directories.
void write_atomic(const std::filesystem::path& path, const std::string& content);

// Draws file: chain, iteration, divergent, treedepth, n_leapfrog, energy,
// accept_stat, then one column per parameter.
std::string draws_csv(const PosteriorDraws& draws);
PosteriorDraws read_draws(const std::filesystem::path& path);
PosteriorDraws parse_draws(const CsvTable& table);

// Letters, digits, '-', '_' and '.' kept; everything else becomes '_'.
std::string file_token(const std::string& label);

}  // namespace poolerc
