#pragma once

// Tabular output as CSV or JSON lines. Numbers are printed with 12
// significant digits so repeated runs compare byte for byte.

#include <cstdint>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

namespace nvgyro::cli {

enum class Format { Csv, Jsonl };

Format parse_format(const std::string& name);

/// printf("%.12g"); "nan" and "inf" for non-finite values.
std::string fmt12(double v);

using Cell = std::variant<double, std::int64_t, std::string>;

class Table {
 public:
  explicit Table(std::vector<std::string> header);

  void add(std::vector<Cell> row);
  std::size_t rows() const { return rows_.size(); }
  void write(std::ostream& os, Format format) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<Cell>> rows_;
};

}  // namespace nvgyro::cli
