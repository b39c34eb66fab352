#include "fedstill/table.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "fedstill/binary_io.hpp"
#include "fedstill/error.hpp"
#include "fedstill/metrics.hpp"

namespace fedstill::cli {

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void Table::add(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    fail(ErrorCode::kShapeMismatch, "table row has " + std::to_string(row.size()) + " cells for " +
                                        std::to_string(columns.size()) + " columns");
  }
  rows.push_back(std::move(row));
}

std::string Table::csv() const {
  std::string out;
  for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "," : "") + csv_field(columns[i]);
  out += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out += ",";
      const auto& c = row[i];
      if (const auto* s = std::get_if<std::string>(&c)) out += csv_field(*s);
      else if (const auto* n = std::get_if<std::int64_t>(&c)) out += std::to_string(*n);
      else if (const auto* d = std::get_if<double>(&c)) out += metrics::format_number(*d);
    }
    out += "\n";
  }
  return out;
}

std::string Table::json() const {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json obj;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const auto& c = row[i];
      auto& slot = obj[columns[i]];
      if (const auto* s = std::get_if<std::string>(&c)) slot = *s;
      else if (const auto* n = std::get_if<std::int64_t>(&c)) slot = *n;
      else if (const auto* d = std::get_if<double>(&c)) slot = std::isfinite(*d) ? nlohmann::ordered_json(*d) : nlohmann::ordered_json(nullptr);
      else slot = nullptr;
    }
    arr.push_back(std::move(obj));
  }
  return arr.dump(2) + "\n";
}

void Table::write(const std::filesystem::path& stem) const {
  io::write_text(std::filesystem::path(stem).concat(".csv"), csv());
  io::write_text(std::filesystem::path(stem).concat(".json"), json());
}

}  // namespace fedstill::cli
