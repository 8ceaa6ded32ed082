#pragma once

#include "ilab/table.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ilab {

struct CiTestResult {
    double statistic = 0.0;
    double p_value = 1.0;
    bool independent = true; // p_value > alpha
    std::vector<std::string> conditioning;
};

struct CiTestOptions {
    int kernel_cap = 5000; // kernel matrices are quadratic in n
    bool allow_subsample = true;
    int n_permutations = 200;
    double kernel_ridge = 1e-4;
    std::uint64_t seed = 0;
};

// Partial correlation via the inverse correlation matrix;
// z = sqrt(n - |Z| - 3) * atanh(rho), two-sided normal p-value.
CiTestResult fisher_z_test(const DataTable& data, const std::string& x, const std::string& y,
                           const std::vector<std::string>& z, double alpha);

namespace detail {

// Shared Fisher-z core over a precomputed correlation submatrix ordered
// (x, y, Z...). Throws on singular conditioning; `names` is used in errors.
CiTestResult fisher_z_from_corr(const std::vector<std::vector<double>>& corr, std::size_t n_rows,
                                double alpha, const std::vector<std::string>& names);

// Column means/correlations computed once so the discovery loop can run
// thousands of partial-correlation tests cheaply.
class CorrCache {
  public:
    CorrCache(const DataTable& data, const std::vector<std::string>& columns);
    CiTestResult test(const std::string& x, const std::string& y,
                      const std::vector<std::string>& z, double alpha) const;
    std::size_t n_rows() const { return n_; }

  private:
    std::vector<std::string> columns_;
    std::vector<std::vector<double>> corr_;
    std::size_t n_;
    int index(const std::string& name) const;
};

} // namespace detail

// Gaussian-kernel test: residualize x and y on Z by kernel ridge regression,
// then an HSIC statistic on the residuals with a permutation null.
CiTestResult kernel_ci_test(const DataTable& data, const std::string& x, const std::string& y,
                            const std::vector<std::string>& z, double alpha,
                            const CiTestOptions& opts = {});

enum class CiTestKind { fisher_z, kernel };

std::string ci_test_kind_name(CiTestKind k);
CiTestKind ci_test_kind_from_name(const std::string& name);

struct CiTraceRow {
    std::string x;
    std::string y;
    std::vector<std::string> z;
    double statistic = 0.0;
    double p_value = 1.0;
    bool independent = true;
};

std::string trace_to_csv(const std::vector<CiTraceRow>& rows);

struct ParentSet {
    struct Parent {
        std::string column;
        std::string category; // self-ad | same-block | cross-block | allocation | other
    };
    std::string target;
    std::vector<Parent> parents;

    std::vector<std::string> columns() const;
    std::string to_json() const;
};

// Category of a preprocessed column relative to the target position (0-based).
std::string categorize_column(const std::string& column, int target_position);

// PC-style target-local adjacency search under known temporal ordering: all
// candidate columns precede the outcome, so every surviving edge points into
// it. Candidates are visited in lexicographic order; conditioning subsets are
// drawn from the remaining candidates, sizes 0..max_cond.
ParentSet discover_parents(const DataTable& table, const std::string& target, double alpha,
                           CiTestKind kind, int max_cond, const CiTestOptions& opts = {},
                           std::vector<CiTraceRow>* trace = nullptr);

// Replays a recorded trace at a different alpha: a candidate is removed iff
// some recorded test on it accepts independence at that level.
std::vector<std::string> survivors_from_trace(const std::vector<CiTraceRow>& trace, double alpha);

} // namespace ilab
