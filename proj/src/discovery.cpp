#include "ilab/discovery.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <set>
#include <stdexcept>

namespace ilab {

std::string ci_test_kind_name(CiTestKind k) {
    return k == CiTestKind::fisher_z ? "fisher_z" : "kernel";
}

CiTestKind ci_test_kind_from_name(const std::string& name) {
    if (name == "fisher_z") return CiTestKind::fisher_z;
    if (name == "kernel") return CiTestKind::kernel;
    throw std::invalid_argument("unknown CI test kind: " + name);
}

std::string trace_to_csv(const std::vector<CiTraceRow>& rows) {
    std::string out = "x,y,z,statistic,p_value,independent\n";
    for (const auto& row : rows) {
        std::string zjoined;
        for (const auto& zc : row.z) {
            if (!zjoined.empty()) zjoined += '|';
            zjoined += zc;
        }
        out += row.x + "," + row.y + "," + zjoined + "," + format_double(row.statistic) + "," +
               format_double(row.p_value) + "," + (row.independent ? "1" : "0") + "\n";
    }
    return out;
}

std::vector<std::string> ParentSet::columns() const {
    std::vector<std::string> out;
    out.reserve(parents.size());
    for (const auto& parent : parents) out.push_back(parent.column);
    return out;
}

std::string ParentSet::to_json() const {
    nlohmann::json j;
    j["target"] = target;
    j["parents"] = nlohmann::json::array();
    for (const auto& parent : parents)
        j["parents"].push_back({{"column", parent.column}, {"category", parent.category}});
    return j.dump(2);
}

std::string categorize_column(const std::string& column, int target_position) {
    auto ad_index = [](const std::string& s, const std::string& prefix) -> int {
        // "d2_x3_1" with prefix "d2_x" -> 3
        const std::string rest = s.substr(prefix.size());
        auto us = rest.find('_');
        return std::stoi(us == std::string::npos ? rest : rest.substr(0, us));
    };
    if (column.rfind("d1_x", 0) == 0) return "cross-block";
    if (column.rfind("d2_x", 0) == 0)
        return ad_index(column, "d2_x") == target_position + 1 ? "self-ad" : "same-block";
    if (column.size() > 1 && column[0] == 'a' &&
        column.find_first_not_of("0123456789", 1) == std::string::npos)
        return "allocation";
    if (column.rfind("x", 0) == 0 && column.find('_') != std::string::npos)
        return ad_index(column, "x") == target_position + 1 ? "self-ad" : "other";
    return "other";
}

namespace {

// Lexicographically ordered size-k subsets of `pool`, excluding `skip`.
class SubsetIterator {
  public:
    SubsetIterator(const std::vector<std::string>& pool, const std::string& skip, int k) : k_(k) {
        for (const auto& c : pool)
            if (c != skip) pool_.push_back(c);
        if (k_ <= static_cast<int>(pool_.size())) {
            idx_.resize(k_);
            for (int t = 0; t < k_; ++t) idx_[t] = t;
            done_ = false;
        }
    }

    bool done() const { return done_; }

    std::vector<std::string> current() const {
        std::vector<std::string> out(k_);
        for (int t = 0; t < k_; ++t) out[t] = pool_[idx_[t]];
        return out;
    }

    void advance() {
        if (k_ == 0) {
            done_ = true;
            return;
        }
        const int n = static_cast<int>(pool_.size());
        int t = k_ - 1;
        while (t >= 0 && idx_[t] == n - k_ + t) --t;
        if (t < 0) {
            done_ = true;
            return;
        }
        ++idx_[t];
        for (int s = t + 1; s < k_; ++s) idx_[s] = idx_[s - 1] + 1;
    }

  private:
    std::vector<std::string> pool_;
    std::vector<int> idx_;
    int k_;
    bool done_ = true;
};

bool is_outcome_column(const std::string& name) {
    return name.size() > 1 && name[0] == 'y' &&
           name.find_first_not_of("0123456789", 1) == std::string::npos;
}

} // namespace

ParentSet discover_parents(const DataTable& table, const std::string& target, double alpha,
                           CiTestKind kind, int max_cond, const CiTestOptions& opts,
                           std::vector<CiTraceRow>* trace) {
    if (max_cond < 0) throw std::invalid_argument("discover_parents: max_cond must be >= 0");
    if (!is_outcome_column(target))
        throw std::invalid_argument("discover_parents: target must be an outcome column y{i}");
    (void)table.col(target); // validate presence
    const int target_position = std::stoi(target.substr(1)) - 1;

    std::vector<std::string> adjacency;
    for (const auto& name : table.columns)
        if (name != target && !is_outcome_column(name)) adjacency.push_back(name);
    std::sort(adjacency.begin(), adjacency.end());

    auto record = [&](const std::string& c, const std::vector<std::string>& z,
                      const CiTestResult& res) {
        if (trace) trace->push_back({c, target, z, res.statistic, res.p_value, res.independent});
    };

    // Constant columns can never exhibit dependence; drop them up front.
    {
        std::vector<std::string> keep;
        for (const auto& c : adjacency) {
            const auto values = table.column(c);
            const bool constant =
                std::all_of(values.begin(), values.end(),
                            [&](double v) { return v == values.front(); });
            if (constant) {
                CiTestResult res;
                res.statistic = 0.0;
                res.p_value = 1.0;
                res.independent = true;
                record(c, {}, res);
            } else {
                keep.push_back(c);
            }
        }
        adjacency = std::move(keep);
    }

    // Moments are shared across the whole search for the linear-Gaussian test.
    std::unique_ptr<detail::CorrCache> cache;
    if (kind == CiTestKind::fisher_z) {
        std::vector<std::string> cols = adjacency;
        cols.push_back(target);
        cache = std::make_unique<detail::CorrCache>(table, cols);
    }
    auto run_test = [&](const std::string& c, const std::vector<std::string>& z) {
        return kind == CiTestKind::fisher_z ? cache->test(c, target, z, alpha)
                                            : kernel_ci_test(table, c, target, z, alpha, opts);
    };

    for (int level = 0; level <= max_cond; ++level) {
        if (static_cast<int>(adjacency.size()) - 1 < level) break;
        std::vector<std::string> snapshot = adjacency;
        for (const auto& c : snapshot) {
            if (std::find(adjacency.begin(), adjacency.end(), c) == adjacency.end()) continue;
            SubsetIterator subsets(adjacency, c, level);
            bool removed = false;
            for (; !subsets.done() && !removed; subsets.advance()) {
                const auto z = subsets.current();
                CiTestResult res = run_test(c, z);
                record(c, z, res);
                if (res.independent) removed = true;
            }
            if (removed)
                adjacency.erase(std::find(adjacency.begin(), adjacency.end(), c));
        }
    }

    ParentSet out;
    out.target = target;
    for (const auto& c : adjacency)
        out.parents.push_back({c, categorize_column(c, target_position)});
    return out;
}

std::vector<std::string> survivors_from_trace(const std::vector<CiTraceRow>& trace, double alpha) {
    std::set<std::string> universe, removed;
    for (const auto& row : trace) {
        universe.insert(row.x);
        if (row.p_value > alpha) removed.insert(row.x);
    }
    std::vector<std::string> out;
    for (const auto& c : universe)
        if (!removed.count(c)) out.push_back(c);
    return out;
}

} // namespace ilab
