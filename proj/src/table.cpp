#include "ilab/table.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ilab {

int DataTable::col(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::invalid_argument("unknown column: " + name);
    return static_cast<int>(it - columns.begin());
}

bool DataTable::has_col(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
}

std::vector<double> DataTable::column(int c) const {
    if (c < 0 || static_cast<std::size_t>(c) >= n_cols())
        throw std::invalid_argument("column index out of range");
    std::vector<double> out(n_rows());
    for (std::size_t r = 0; r < n_rows(); ++r) out[r] = rows[r][c];
    return out;
}

void DataTable::append_row(std::vector<double> row) {
    if (row.size() != n_cols())
        throw std::invalid_argument("append_row: row width does not match column count");
    rows.push_back(std::move(row));
}

std::string format_double(double v) {
    char buf[40];
    // Shortest representation that round-trips: try increasing precision.
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

double parse_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw std::invalid_argument("not a number: \"" + s + "\"");
    return v;
}

std::string DataTable::to_csv() const {
    std::string out;
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (c) out += ',';
        out += columns[c];
    }
    out += '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) out += ',';
            out += format_double(row[c]);
        }
        out += '\n';
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field += ch;
        }
    }
    fields.push_back(field);
    return fields;
}

} // namespace

DataTable DataTable::from_csv(const std::string& text) {
    DataTable t;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("CSV: missing header row");
    t.columns = split_csv_line(line);
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != t.columns.size())
            throw std::invalid_argument("CSV line " + std::to_string(lineno) + ": expected " +
                                        std::to_string(t.columns.size()) + " fields, got " +
                                        std::to_string(fields.size()));
        std::vector<double> row(fields.size());
        for (std::size_t c = 0; c < fields.size(); ++c) row[c] = parse_double(fields[c]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string content_digest(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace ilab
