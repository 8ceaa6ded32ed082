#include "ilab/preprocess.hpp"

#include <stdexcept>

namespace ilab {

std::vector<std::string> fci_columns(int m, int p, int position) {
    std::vector<std::string> cols;
    for (int j = 1; j <= m; ++j)
        for (int k = 1; k <= p; ++k)
            cols.push_back("d1_x" + std::to_string(j) + "_" + std::to_string(k));
    for (int j = 1; j <= m; ++j)
        for (int k = 1; k <= p; ++k)
            cols.push_back("d2_x" + std::to_string(j) + "_" + std::to_string(k));
    for (int j = 1; j <= m; ++j) cols.push_back("a" + std::to_string(j));
    cols.push_back("y" + std::to_string(position + 1));
    return cols;
}

DataTable fci_preprocess(const Dataset& d, int position, bool keep_self_in_d1) {
    if (d.pageviews.empty()) throw std::invalid_argument("fci_preprocess: empty dataset");
    const int m = d.m();
    const int p = d.p();
    if (position < 0 || position >= m)
        throw std::invalid_argument("fci_preprocess: position out of range");

    DataTable t;
    t.columns = fci_columns(m, p, position);
    t.rows.reserve(d.size());
    for (const auto& pv : d.pageviews) {
        std::vector<double> row;
        row.reserve(t.columns.size());
        const int ai = pv.a.bits[position];
        for (int j = 0; j < m; ++j) {
            const bool zero = (pv.a.bits[j] == ai) && !(keep_self_in_d1 && j == position);
            for (int k = 0; k < p; ++k) row.push_back(zero ? 0.0 : pv.x[j][k]);
        }
        for (int j = 0; j < m; ++j) {
            const bool zero = (j != position) && (pv.a.bits[j] != ai);
            for (int k = 0; k < p; ++k) row.push_back(zero ? 0.0 : pv.x[j][k]);
        }
        for (int j = 0; j < m; ++j) row.push_back(pv.a.bits[j]);
        row.push_back(pv.y[position]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

} // namespace ilab
