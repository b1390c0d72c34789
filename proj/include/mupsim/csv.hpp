#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mupsim {

struct CsvError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Minimal column-oriented CSV table. Values are written with enough digits to
// round-trip doubles, so artifact files are byte-stable across runs.
class CsvTable {
  public:
    CsvTable() = default;
    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

    const std::vector<std::string>& columns() const { return columns_; }
    std::size_t rows() const { return cells_.size(); }

    void add_row(const std::vector<std::string>& cells);
    const std::string& cell(std::size_t row, const std::string& column) const;
    double number(std::size_t row, const std::string& column) const;
    long integer(std::size_t row, const std::string& column) const;
    bool has_column(const std::string& column) const;

    // Raises CsvError naming every missing column.
    void require_columns(const std::vector<std::string>& required,
                         const std::string& context) const;

    void write(const std::filesystem::path& path) const;
    static CsvTable read(const std::filesystem::path& path);

    static std::string format(double value);
    static std::string format(long value) { return std::to_string(value); }
    static std::string format(int value) { return std::to_string(value); }

  private:
    std::size_t column_index(const std::string& column) const;
    std::vector<std::string> columns_;
    std::vector<std::vector<std::string>> cells_;
};

}  // namespace mupsim
