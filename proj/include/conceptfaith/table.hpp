#pragma once
// Tabular results: string cells, named columns, TSV on disk. Tables are the
// contract between pipeline stages; figures only ever render from them.

#include <string>
#include <vector>

#include "conceptfaith/common.hpp"

namespace conceptfaith {

struct ResultTable {
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    ResultTable() = default;
    explicit ResultTable(std::vector<std::string> cols) : columns(std::move(cols)) {}

    std::size_t column_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw ValidationError("unknown column '" + name + "'");
    }

    void add_row(std::vector<std::string> row) {
        require(row.size() == columns.size(), "row width " + std::to_string(row.size()) +
                                                  " does not match " + std::to_string(columns.size()) + " columns");
        rows.push_back(std::move(row));
    }

    const std::string& cell(std::size_t row, const std::string& column) const {
        return rows.at(row)[column_index(column)];
    }

    double numeric(std::size_t row, const std::string& column) const {
        const std::string& s = cell(row, column);
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            require(used == s.size(), "trailing characters");
            return v;
        } catch (const std::exception&) {
            throw ValidationError("column '" + column + "' row " + std::to_string(row) +
                                  " is not numeric: '" + s + "'");
        }
    }

    std::vector<double> numeric_column(const std::string& column) const {
        std::vector<double> out;
        out.reserve(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) out.push_back(numeric(r, column));
        return out;
    }

    std::string to_tsv() const {
        std::string out;
        for (std::size_t i = 0; i < columns.size(); ++i) out += (i ? "\t" : "") + columns[i];
        out += "\n";
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "\t" : "") + row[i];
            out += "\n";
        }
        return out;
    }

    void save(const fs::path& path) const { write_file_atomic(path, to_tsv()); }

    static ResultTable load(const fs::path& path) {
        const std::string text = read_file(path);
        ResultTable table;
        std::size_t pos = 0;
        bool header = true;
        while (pos < text.size()) {
            std::size_t end = text.find('\n', pos);
            if (end == std::string::npos) end = text.size();
            const std::string line = text.substr(pos, end - pos);
            pos = end + 1;
            if (line.empty()) continue;
            std::vector<std::string> cells;
            std::size_t start = 0;
            for (;;) {
                const std::size_t tab = line.find('\t', start);
                if (tab == std::string::npos) {
                    cells.push_back(line.substr(start));
                    break;
                }
                cells.push_back(line.substr(start, tab - start));
                start = tab + 1;
            }
            if (header) {
                table.columns = std::move(cells);
                header = false;
            } else {
                table.add_row(std::move(cells));
            }
        }
        return table;
    }
};

}  // namespace conceptfaith
