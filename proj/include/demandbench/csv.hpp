#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "demandbench/common.hpp"

namespace demandbench::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw DataError("csv: missing column '" + name + "'");
    }
};

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

/// Reads a comma-separated file with a mandatory header row. Cells are kept
/// as raw strings; empty cells denote absent values.
inline Table read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("csv: cannot open '" + path + "'");
    Table t;
    std::string line;
    if (!std::getline(in, line)) throw DataError("csv: empty file '" + path + "'");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    t.header = split_line(line);
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_line(line);
        if (cells.size() != t.header.size())
            throw DataError("csv: row with " + std::to_string(cells.size()) +
                            " cells, expected " + std::to_string(t.header.size()) +
                            " in '" + path + "'");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline double parse_double(const std::string& cell, const std::string& what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw DataError("csv: cannot parse '" + cell + "' as number for " + what);
    }
}

inline long parse_long(const std::string& cell, const std::string& what) {
    try {
        std::size_t pos = 0;
        long v = std::stol(cell, &pos);
        if (pos != cell.size()) throw std::invalid_argument(cell);
        return v;
    } catch (const std::exception&) {
        throw DataError("csv: cannot parse '" + cell + "' as integer for " + what);
    }
}

class Writer {
  public:
    explicit Writer(const std::string& path) : out_(path) {
        if (!out_) throw DataError("csv: cannot open '" + path + "' for writing");
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    static std::string num(double v) { return format_double(v); }
    static std::string opt(const std::optional<double>& v) {
        return v ? format_double(*v) : std::string();
    }

  private:
    std::ofstream out_;
};

}  // namespace demandbench::csv
