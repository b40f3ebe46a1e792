#include "spatfuse/csv.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spatfuse/errors.hpp"

namespace spatfuse {

namespace {
std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
    out.back().pop_back();
  return out;
}
}  // namespace

CsvTable CsvTable::read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path);
}

CsvTable CsvTable::from_text(const std::string& text, const std::string& origin) {
  CsvTable t;
  t.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw DataError(origin + ": empty file, expected a header row");
  t.names_ = split_line(line);
  for (std::size_t i = 0; i < t.names_.size(); ++i) {
    if (t.names_[i].empty())
      throw DataError(origin + ": empty column name in header");
    if (!t.index_.emplace(t.names_[i], i).second)
      throw DataError(origin + ": duplicate column '" + t.names_[i] + "'");
  }
  t.cols_.resize(t.names_.size());
  std::size_t file_row = 1;
  while (std::getline(in, line)) {
    ++file_row;
    if (line.empty() || line == "\r") continue;
    auto cells = split_line(line);
    if (cells.size() != t.names_.size())
      throw DataError(origin + ": row " + std::to_string(file_row) + " has " +
                      std::to_string(cells.size()) + " fields, expected " +
                      std::to_string(t.names_.size()));
    for (std::size_t i = 0; i < cells.size(); ++i)
      t.cols_[i].push_back(std::move(cells[i]));
    ++t.nrows_;
  }
  return t;
}

bool CsvTable::has_column(const std::string& name) const {
  return index_.count(name) != 0;
}

const std::vector<std::string>& CsvTable::col_string(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw DataError(origin_ + ": missing column '" + name + "'");
  return cols_[it->second];
}

std::vector<double> CsvTable::col_double(const std::string& name) const {
  const auto& raw = col_string(name);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    char* end = nullptr;
    out[i] = std::strtod(raw[i].c_str(), &end);
    if (end == raw[i].c_str() || *end != '\0')
      throw DataError(origin_ + ": row " + std::to_string(i + 2) + ", column '" +
                      name + "': cannot parse '" + raw[i] + "' as a number");
  }
  return out;
}

std::vector<int> CsvTable::col_int(const std::string& name) const {
  auto d = col_double(name);
  std::vector<int> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    out[i] = static_cast<int>(d[i]);
    if (static_cast<double>(out[i]) != d[i])
      throw DataError(origin_ + ": row " + std::to_string(i + 2) + ", column '" +
                      name + "': expected an integer");
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(std::vector<std::string> columns) : ncol_(columns.size()) {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += columns[i];
  }
  buf_ += '\n';
}

void CsvWriter::append_raw(const std::vector<std::string>& cells) {
  if (cells.size() != ncol_)
    throw DataError("CSV writer: wrong field count");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) buf_ += ',';
    buf_ += cells[i];
  }
  buf_ += '\n';
}

void CsvWriter::append(const std::vector<double>& cells) {
  std::vector<std::string> s(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) s[i] = format_double(cells[i]);
  append_raw(s);
}

void CsvWriter::write_file(const std::string& path) const {
  write_text_file(path, buf_);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << text;
  if (!out) throw DataError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace spatfuse
