#include "poolerc/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "poolerc/error.hpp"

namespace poolerc {

int CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == name) return static_cast<int>(c);
  }
  return -1;
}

int CsvTable::require(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw ValidationError(source + ": missing column '" + name + "'");
  return c;
}

std::string CsvTable::where(std::size_t row, int col) const {
  std::string out = source + ":" + std::to_string(line[row]);
  if (col >= 0) out += ": column '" + header[static_cast<std::size_t>(col)] + "'";
  return out;
}

const std::string& CsvTable::text(std::size_t row, int col) const {
  return rows[row][static_cast<std::size_t>(col)];
}

bool CsvTable::empty(std::size_t row, int col) const { return col < 0 || text(row, col).empty(); }

double CsvTable::number(std::size_t row, int col) const {
  const std::string& s = text(row, col);
  if (s == "NA") return std::nan("");
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
    throw ValidationError(where(row, col) + ": expected a number, got '" + s + "'");
  }
  return v;
}

int CsvTable::integer(std::size_t row, int col) const {
  const std::string& s = text(row, col);
  int v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
    throw ValidationError(where(row, col) + ": expected an integer, got '" + s + "'");
  }
  return v;
}

CsvTable parse_csv(const std::string& text, const std::string& source) {
  CsvTable table;
  table.source = source;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false, field_started = false;
  int line = 1, record_line = 1;

  auto finish_record = [&] {
    record.push_back(field);
    field.clear();
    const bool blank = record.size() == 1 && record[0].empty() && !field_started;
    if (!blank) {
      if (table.header.empty()) {
        table.header = record;
      } else {
        if (record.size() != table.header.size()) {
          throw ValidationError(source + ":" + std::to_string(record_line) + ": expected " +
                                std::to_string(table.header.size()) + " fields, found " +
                                std::to_string(record.size()));
        }
        table.rows.push_back(record);
        table.line.push_back(record_line);
      }
    }
    record.clear();
    field_started = false;
  };

  std::size_t i = 0;
  if (text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) {
          throw ValidationError(source + ":" + std::to_string(line) + ": stray quote inside a field");
        }
        quoted = true;
        field_started = true;
        break;
      case ',':
        record.push_back(field);
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        finish_record();
        ++line;
        record_line = line;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (quoted) throw ValidationError(source + ": unterminated quoted field");
  if (field_started || !record.empty()) finish_record();
  if (table.header.empty()) throw ValidationError(source + ": missing header row");
  for (std::size_t a = 0; a < table.header.size(); ++a) {
    for (std::size_t b = a + 1; b < table.header.size(); ++b) {
      if (table.header[a] == table.header[b]) {
        throw ValidationError(source + ": duplicate column '" + table.header[a] + "'");
      }
    }
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), path.string());
}

CsvWriter::CsvWriter(const std::vector<std::string>& header) : width_(header.size()) { append(header); }

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != width_) throw ConfigError("CSV row width does not match the header");
  append(cells);
}

void CsvWriter::append(const std::vector<std::string>& cells) {
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (c > 0) out_ += ',';
    const std::string& s = cells[c];
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
      out_ += s;
      continue;
    }
    out_ += '"';
    for (char ch : s) {
      if (ch == '"') out_ += '"';
      out_ += ch;
    }
    out_ += '"';
  }
  out_ += '\n';
}

std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  if (value == 0.0) return "0";
  return fmt::format("{}", value);
}

std::string format_number(int value) { return std::to_string(value); }

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

const std::vector<std::string> kDrawStats{"chain", "iteration", "divergent", "treedepth",
                                          "n_leapfrog", "energy", "accept_stat"};

}  // namespace

std::string draws_csv(const PosteriorDraws& draws) {
  std::vector<std::string> header = kDrawStats;
  header.insert(header.end(), draws.names.begin(), draws.names.end());
  CsvWriter w(header);
  std::vector<std::string> cells(header.size());
  for (int c = 0; c < draws.n_chains(); ++c) {
    const ChainOutput& ch = draws.chains[static_cast<std::size_t>(c)];
    for (Eigen::Index d = 0; d < ch.draws.rows(); ++d) {
      const auto i = static_cast<std::size_t>(d);
      cells[0] = format_number(c + 1);
      cells[1] = format_number(static_cast<int>(d) + 1);
      cells[2] = format_number(static_cast<int>(ch.divergent[i]));
      cells[3] = format_number(ch.tree_depth[i]);
      cells[4] = format_number(ch.n_leapfrog[i]);
      cells[5] = format_number(ch.energy[i]);
      cells[6] = format_number(ch.accept_stat[i]);
      for (Eigen::Index k = 0; k < ch.draws.cols(); ++k) {
        cells[kDrawStats.size() + static_cast<std::size_t>(k)] = format_number(ch.draws(d, k));
      }
      w.row(cells);
    }
  }
  return w.str();
}

PosteriorDraws parse_draws(const CsvTable& table) {
  for (std::size_t c = 0; c < kDrawStats.size(); ++c) {
    if (c >= table.header.size() || table.header[c] != kDrawStats[c]) {
      throw ValidationError(table.source + ": not a draws file (expected column '" + kDrawStats[c] + "')");
    }
  }
  PosteriorDraws out;
  out.names.assign(table.header.begin() + static_cast<std::ptrdiff_t>(kDrawStats.size()), table.header.end());
  const auto dim = static_cast<Eigen::Index>(out.names.size());

  std::map<int, std::vector<std::size_t>> by_chain;
  for (std::size_t r = 0; r < table.size(); ++r) by_chain[table.integer(r, 0)].push_back(r);
  if (by_chain.empty()) throw ValidationError(table.source + ": no draws");
  for (const auto& [chain, rows] : by_chain) {
    ChainOutput ch;
    ch.draws.resize(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t r = rows[i];
      if (table.integer(r, 1) != static_cast<int>(i) + 1) {
        throw ValidationError(table.where(r, 1) + ": iterations of chain " + std::to_string(chain) +
                              " must run 1, 2, ... in order");
      }
      ch.divergent.push_back(static_cast<std::uint8_t>(table.integer(r, 2) != 0));
      ch.tree_depth.push_back(table.integer(r, 3));
      ch.n_leapfrog.push_back(table.integer(r, 4));
      ch.energy.push_back(table.number(r, 5));
      ch.accept_stat.push_back(table.number(r, 6));
      for (Eigen::Index k = 0; k < dim; ++k) {
        ch.draws(static_cast<Eigen::Index>(i), k) = table.number(r, static_cast<int>(kDrawStats.size()) + static_cast<int>(k));
      }
    }
    out.chains.push_back(std::move(ch));
  }
  for (const auto& ch : out.chains) {
    if (ch.draws.rows() != out.chains.front().draws.rows()) {
      throw ValidationError(table.source + ": chains have different numbers of draws");
    }
  }
  return out;
}

PosteriorDraws read_draws(const std::filesystem::path& path) { return parse_draws(read_csv(path)); }

std::string file_token(const std::string& label) {
  std::string out;
  for (char c : label) {
    const bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                      c == '_' || c == '.';
    out += keep ? c : '_';
  }
  return out.empty() ? "_" : out;
}

}  // namespace poolerc
