#include "ilab/allocation.hpp"

#include <numeric>
#include <stdexcept>

namespace ilab {

int AllocationRule::top_count() const {
    return std::accumulate(bits.begin(), bits.end(), 0);
}

bool AllocationRule::valid() const { return is_valid(bits); }

std::string AllocationRule::str() const {
    std::string s;
    s.reserve(bits.size());
    for (int b : bits) s += (b ? '1' : '0');
    return s;
}

bool is_valid(const std::vector<int>& bits) {
    if (bits.empty()) return false;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i] != 0 && bits[i] != 1) return false;
        if (i > 0 && bits[i] > bits[i - 1]) return false;
    }
    return true;
}

std::vector<AllocationRule> enumerate_valid_rules(int m) {
    if (m < 1) throw std::invalid_argument("enumerate_valid_rules: m must be >= 1");
    std::vector<AllocationRule> rules;
    rules.reserve(m + 1);
    for (int top = m; top >= 0; --top) {
        std::vector<int> bits(m, 0);
        for (int i = 0; i < top; ++i) bits[i] = 1;
        rules.emplace_back(std::move(bits));
    }
    return rules;
}

int rule_index(const AllocationRule& rule) {
    if (!rule.valid()) throw std::invalid_argument("rule_index: invalid rule " + rule.str());
    return rule.size() - rule.top_count();
}

AllocationRule rule_from_string(const std::string& s) {
    std::vector<int> bits;
    bits.reserve(s.size());
    for (char c : s) {
        if (c != '0' && c != '1')
            throw std::invalid_argument("rule_from_string: expected only 0/1, got \"" + s + "\"");
        bits.push_back(c - '0');
    }
    return AllocationRule(std::move(bits));
}

BlockFeatures block_features(const std::vector<std::vector<double>>& x,
                             const AllocationRule& rule, int position) {
    const int m = rule.size();
    if (!rule.valid()) throw std::invalid_argument("block_features: invalid rule " + rule.str());
    if (position < 0 || position >= m)
        throw std::invalid_argument("block_features: position out of range");
    if (static_cast<int>(x.size()) != m)
        throw std::invalid_argument("block_features: feature matrix has wrong row count");

    BlockFeatures out;
    out.xb.resize(m);
    out.xc.resize(m);
    const std::size_t p = x.empty() ? 0 : x[0].size();
    for (int j = 0; j < m; ++j) {
        if (x[j].size() != p)
            throw std::invalid_argument("block_features: ragged feature matrix");
        const bool same = rule.bits[j] == rule.bits[position];
        out.xb[j] = same ? x[j] : std::vector<double>(p, 0.0);
        out.xc[j] = same ? std::vector<double>(p, 0.0) : x[j];
    }
    return out;
}

} // namespace ilab
