#include "output.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

#include "config.hpp"

namespace nvgyro::cli {

Format parse_format(const std::string& name) {
  if (name == "csv") return Format::Csv;
  if (name == "jsonl") return Format::Jsonl;
  throw ConfigError("unknown output format '" + name + "' (expected csv or jsonl)");
}

std::string fmt12(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

Table::Table(std::vector<std::string> header) : header_(std::move(header)) {}

void Table::add(std::vector<Cell> row) {
  if (row.size() != header_.size()) throw std::logic_error("table row width mismatch");
  rows_.push_back(std::move(row));
}

void Table::write(std::ostream& os, Format format) const {
  if (format == Format::Csv) {
    for (std::size_t i = 0; i < header_.size(); ++i) os << (i ? "," : "") << header_[i];
    os << "\n";
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) os << ",";
        std::visit(
            [&](const auto& v) {
              using T = std::decay_t<decltype(v)>;
              if constexpr (std::is_same_v<T, double>) {
                os << fmt12(v);
              } else {
                os << v;
              }
            },
            row[i]);
      }
      os << "\n";
    }
    return;
  }
  for (const auto& row : rows_) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, double>) {
              obj[header_[i]] = std::isfinite(v)
                                    ? nlohmann::ordered_json::parse(fmt12(v))
                                    : nlohmann::ordered_json(nullptr);
            } else {
              obj[header_[i]] = v;
            }
          },
          row[i]);
    }
    os << obj.dump() << "\n";
  }
}

}  // namespace nvgyro::cli
