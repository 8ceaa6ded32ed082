#pragma once

#include "ilab/sem.hpp"
#include "ilab/table.hpp"

namespace ilab {

// Structure-discovery preprocessing for the outcome at `position` (0-based).
// Per row: D1 zeroes X_j whenever A_j == A_i (including j == i), D2 zeroes
// X_j for j != i whenever A_j != A_i. Output columns: d1_x{j}_{k},
// d2_x{j}_{k}, a{j}, y{i}. Row order is preserved.
// keep_self_in_d1 spares X_i from D1's zeroing, for sensitivity runs.
DataTable fci_preprocess(const Dataset& d, int position, bool keep_self_in_d1 = false);

std::vector<std::string> fci_columns(int m, int p, int position);

} // namespace ilab
