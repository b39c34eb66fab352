#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace fedstill::cli {

// A cell is empty, text, an integer or a real number. Reals are written with
// six significant digits in CSV and at full precision in JSON.
using Cell = std::variant<std::monostate, std::string, std::int64_t, double>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row);
  std::string csv() const;
  std::string json() const;  // array of objects keyed by column

  // Writes <stem>.csv and <stem>.json.
  void write(const std::filesystem::path& stem) const;
};

}  // namespace fedstill::cli
