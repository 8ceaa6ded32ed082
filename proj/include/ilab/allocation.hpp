#pragma once

#include <string>
#include <vector>

namespace ilab {

// Length-m Top/Bottom assignment. Valid rules are position-monotone: once an
// ad is in the Bottom block, every later ad is too.
struct AllocationRule {
    std::vector<int> bits; // 1 = Top, 0 = Bottom

    AllocationRule() = default;
    explicit AllocationRule(std::vector<int> b) : bits(std::move(b)) {}

    int size() const { return static_cast<int>(bits.size()); }
    int top_count() const;
    bool valid() const;
    std::string str() const; // e.g. "110"

    bool operator==(const AllocationRule& o) const { return bits == o.bits; }
    bool operator<(const AllocationRule& o) const { return bits < o.bits; }
};

bool is_valid(const std::vector<int>& bits);

// All m+1 monotone rules, sorted descending by Top-count.
std::vector<AllocationRule> enumerate_valid_rules(int m);

// Index of a rule within enumerate_valid_rules(m) ordering (== m - top_count).
int rule_index(const AllocationRule& rule);

AllocationRule rule_from_string(const std::string& s);

// Same-block / cross-block decomposition of the feature matrix relative to
// the ad at `position` (0-based). Masked rows are zeroed; xb + xc == x.
struct BlockFeatures {
    std::vector<std::vector<double>> xb; // rows j with A_j == A_i (incl. j == i)
    std::vector<std::vector<double>> xc; // rows j with A_j != A_i
};

BlockFeatures block_features(const std::vector<std::vector<double>>& x,
                             const AllocationRule& rule, int position);

} // namespace ilab
