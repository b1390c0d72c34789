#include "mupsim/csv.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mupsim {

void CsvTable::add_row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size())
        throw CsvError("row width " + std::to_string(cells.size()) + " != header width " +
                       std::to_string(columns_.size()));
    cells_.push_back(cells);
}

std::size_t CsvTable::column_index(const std::string& column) const {
    for (std::size_t i = 0; i < columns_.size(); ++i)
        if (columns_[i] == column) return i;
    throw CsvError("missing column '" + column + "'");
}

bool CsvTable::has_column(const std::string& column) const {
    for (const auto& c : columns_)
        if (c == column) return true;
    return false;
}

void CsvTable::require_columns(const std::vector<std::string>& required,
                               const std::string& context) const {
    std::string missing;
    for (const auto& col : required)
        if (!has_column(col)) missing += missing.empty() ? col : ", " + col;
    if (!missing.empty())
        throw CsvError(context + ": missing column(s): " + missing);
}

const std::string& CsvTable::cell(std::size_t row, const std::string& column) const {
    if (row >= cells_.size()) throw CsvError("row index out of range");
    return cells_[row][column_index(column)];
}

double CsvTable::number(std::size_t row, const std::string& column) const {
    const std::string& s = cell(row, column);
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw CsvError("");
        return v;
    } catch (...) {
        throw CsvError("column '" + column + "' row " + std::to_string(row) +
                       ": not a number: '" + s + "'");
    }
}

long CsvTable::integer(std::size_t row, const std::string& column) const {
    const std::string& s = cell(row, column);
    try {
        std::size_t pos = 0;
        long v = std::stol(s, &pos);
        if (pos != s.size()) throw CsvError("");
        return v;
    } catch (...) {
        throw CsvError("column '" + column + "' row " + std::to_string(row) +
                       ": not an integer: '" + s + "'");
    }
}

std::string CsvTable::format(double value) {
    if (std::isnan(value)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", value);
    return buf;
}

void CsvTable::write(const std::filesystem::path& path) const {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw CsvError("cannot open for writing: " + path.string());
    for (std::size_t i = 0; i < columns_.size(); ++i)
        out << (i ? "," : "") << columns_[i];
    out << "\n";
    for (const auto& row : cells_) {
        for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
        out << "\n";
    }
    if (!out) throw CsvError("write failed: " + path.string());
}

namespace {
std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}
}  // namespace

CsvTable CsvTable::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw CsvError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw CsvError("empty file: " + path.string());
    CsvTable table(split_line(line));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        table.add_row(split_line(line));
    }
    return table;
}

}  // namespace mupsim
