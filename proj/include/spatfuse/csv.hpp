#pragma once

#include <map>
#include <string>
#include <vector>

namespace spatfuse {

// Minimal CSV support for the data formats used here: headered, comma
// separated, no quoting or embedded commas. Errors cite 1-based file rows.
class CsvTable {
 public:
  static CsvTable read_file(const std::string& path);
  static CsvTable from_text(const std::string& text, const std::string& origin);

  std::size_t rows() const { return nrows_; }
  const std::vector<std::string>& columns() const { return names_; }
  bool has_column(const std::string& name) const;

  const std::vector<std::string>& col_string(const std::string& name) const;
  // parses the whole column; throws DataError naming the offending row
  std::vector<double> col_double(const std::string& name) const;
  std::vector<int> col_int(const std::string& name) const;

 private:
  std::string origin_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
  std::vector<std::vector<std::string>> cols_;
  std::size_t nrows_ = 0;
};

// Fixed-format writer: doubles at 17 significant digits so outputs are
// byte-stable and round-trip exactly.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> columns);
  void append_raw(const std::vector<std::string>& cells);
  void append(const std::vector<double>& cells);
  const std::string& text() const { return buf_; }
  void write_file(const std::string& path) const;

 private:
  std::size_t ncol_;
  std::string buf_;
};

std::string format_double(double v);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace spatfuse
