#pragma once

#include <string>
#include <vector>

namespace ilab {

// Flat numeric table with named columns; the interchange type for the
// preprocessing, model-fitting and discovery layers.
struct DataTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    std::size_t n_rows() const { return rows.size(); }
    std::size_t n_cols() const { return columns.size(); }

    int col(const std::string& name) const; // throws for unknown names
    bool has_col(const std::string& name) const;
    std::vector<double> column(int c) const;
    std::vector<double> column(const std::string& name) const { return column(col(name)); }

    void append_row(std::vector<double> row);

    std::string to_csv() const;
    static DataTable from_csv(const std::string& text);
};

// Doubles are written with enough digits to round-trip exactly.
std::string format_double(double v);
double parse_double(const std::string& s);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// FNV-1a 64 content digest, hex-encoded; used for artifact provenance.
std::string content_digest(const std::string& bytes);

} // namespace ilab
