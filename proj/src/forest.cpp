#include "ilab/models.hpp"

#include "ilab/parallel.hpp"
#include "ilab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ilab {

double DecisionTree::predict(std::span<const double> features) const {
    int v = 0;
    while (nodes[v].feature >= 0) {
        const TreeNode& nd = nodes[v];
        v = (features[nd.feature] <= nd.threshold) ? nd.left : nd.right;
    }
    return nodes[v].rate;
}

double ForestModel::predict(std::span<const double> features) const {
    double total = 0.0;
    for (const auto& tree : trees) total += tree.predict(features);
    const double rate = total / static_cast<double>(trees.size());
    // Pure-leaf consensus is still reported as a probability, not a certainty.
    return std::min(1.0 - 1e-6, std::max(1e-6, rate));
}

namespace {

struct TrainData {
    // Column-major copies of the canonicalized rows plus, per feature, the
    // row order sorted by value. Shared across trees.
    std::vector<std::vector<double>> cols;
    std::vector<std::vector<std::uint32_t>> sorted;
    std::vector<int> labels;
    std::size_t n = 0;
    int d = 0;
};

double gini2(double n, double pos) {
    if (n <= 0.0) return 0.0;
    double p = pos / n;
    return 2.0 * p * (1.0 - p) * n;
}

// Grows one tree over per-feature index lists kept sorted by value; splits
// partition the lists instead of re-sorting.
class TreeBuilder {
  public:
    TreeBuilder(const TrainData& data, const ForestParams& params, Rng rng)
        : data_(data), params_(params), rng_(rng) {}

    DecisionTree build() {
        // Bootstrap as per-row multiplicities; the resampled multiset stays
        // value-sorted by emitting rows in global sorted order.
        std::vector<std::uint32_t> count(data_.n, 0);
        for (std::size_t t = 0; t < data_.n; ++t) ++count[rng_.uniform_below(data_.n)];
        std::vector<std::vector<std::uint32_t>> lists(data_.d);
        for (int f = 0; f < data_.d; ++f) {
            lists[f].reserve(data_.n);
            for (std::uint32_t row : data_.sorted[f])
                for (std::uint32_t c = 0; c < count[row]; ++c) lists[f].push_back(row);
        }
        DecisionTree tree;
        in_left_.assign(data_.n, 0);
        grow(tree, lists, 0);
        return tree;
    }

  private:
    int make_leaf(DecisionTree& tree, double pos, double n) {
        tree.nodes.push_back({});
        tree.nodes.back().rate = (n > 0.0) ? pos / n : 0.0;
        return static_cast<int>(tree.nodes.size()) - 1;
    }

    int grow(DecisionTree& tree, std::vector<std::vector<std::uint32_t>>& lists, int depth) {
        const auto& any = lists[0];
        const double n = static_cast<double>(any.size());
        double pos = 0.0;
        for (std::uint32_t row : any) pos += data_.labels[row];
        if (depth >= params_.max_depth || any.size() < 2 || pos == 0.0 || pos == n)
            return make_leaf(tree, pos, n);

        const int k =
            params_.feature_frac > 0.0
                ? std::min(data_.d, std::max(1, static_cast<int>(std::ceil(
                                                    params_.feature_frac * data_.d))))
                : std::max(1, static_cast<int>(std::ceil(std::sqrt(data_.d))));
        std::vector<int> feats(data_.d);
        std::iota(feats.begin(), feats.end(), 0);
        for (int t = 0; t < k; ++t) {
            std::size_t j = t + rng_.uniform_below(data_.d - t);
            std::swap(feats[t], feats[j]);
        }

        const double parent_imp = gini2(n, pos);
        int best_feature = -1;
        double best_threshold = 0.0;
        double best_impurity = parent_imp;
        for (int t = 0; t < k; ++t) {
            const int f = feats[t];
            const auto& list = lists[f];
            const auto& col = data_.cols[f];
            double n_l = 0.0, pos_l = 0.0;
            for (std::size_t idx = 0; idx + 1 < list.size(); ++idx) {
                n_l += 1.0;
                pos_l += data_.labels[list[idx]];
                const double v = col[list[idx]];
                const double v_next = col[list[idx + 1]];
                if (v == v_next) continue;
                const double imp = gini2(n_l, pos_l) + gini2(n - n_l, pos - pos_l);
                if (imp < best_impurity - 1e-12) {
                    best_impurity = imp;
                    best_feature = f;
                    best_threshold = 0.5 * (v + v_next);
                }
            }
        }
        if (best_feature < 0) return make_leaf(tree, pos, n);

        // Row-level membership, then a stable partition of every list.
        const auto& split_col = data_.cols[best_feature];
        for (std::uint32_t row : any) in_left_[row] = split_col[row] <= best_threshold;
        std::vector<std::vector<std::uint32_t>> left(data_.d), right(data_.d);
        for (int f = 0; f < data_.d; ++f) {
            for (std::uint32_t row : lists[f])
                (in_left_[row] ? left[f] : right[f]).push_back(row);
            lists[f].clear();
            lists[f].shrink_to_fit();
        }
        if (left[0].size() < static_cast<std::size_t>(params_.min_leaf) ||
            right[0].size() < static_cast<std::size_t>(params_.min_leaf))
            return make_leaf(tree, pos, n);

        const int self = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({});
        tree.nodes[self].feature = best_feature;
        tree.nodes[self].threshold = best_threshold;
        const int lchild = grow(tree, left, depth + 1);
        const int rchild = grow(tree, right, depth + 1);
        tree.nodes[self].left = lchild;
        tree.nodes[self].right = rchild;
        return self;
    }

    const TrainData& data_;
    const ForestParams& params_;
    Rng rng_;
    std::vector<char> in_left_;
};

} // namespace

ForestModel fit_forest(const std::vector<std::vector<double>>& rows,
                       const std::vector<int>& labels, const ForestParams& params) {
    if (rows.empty()) throw std::invalid_argument("fit_forest: empty training data");
    if (rows.size() != labels.size())
        throw std::invalid_argument("fit_forest: labels/rows size mismatch");
    if (params.n_trees < 1) throw std::invalid_argument("fit_forest: n_trees must be >= 1");
    if (params.max_depth < 0) throw std::invalid_argument("fit_forest: max_depth must be >= 0");
    bool has0 = false, has1 = false;
    for (int y : labels) {
        if (y == 0) has0 = true;
        else if (y == 1) has1 = true;
        else throw std::invalid_argument("fit_forest: labels must be 0/1");
    }
    if (!has0 || !has1) throw std::invalid_argument("fit_forest: need both classes present");

    const int d = static_cast<int>(rows[0].size());
    // Canonical row order: the fit depends only on the (row, label) multiset.
    std::vector<std::uint32_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (rows[a] != rows[b]) return rows[a] < rows[b];
        return labels[a] < labels[b];
    });

    TrainData data;
    data.n = rows.size();
    data.d = d;
    data.labels.resize(data.n);
    data.cols.assign(d, std::vector<double>(data.n));
    for (std::size_t r = 0; r < data.n; ++r) {
        const auto& src = rows[order[r]];
        if (static_cast<int>(src.size()) != d)
            throw std::invalid_argument("fit_forest: ragged feature rows");
        data.labels[r] = labels[order[r]];
        for (int c = 0; c < d; ++c) data.cols[c][r] = src[c];
    }
    data.sorted.assign(d, {});
    for (int f = 0; f < d; ++f) {
        auto& idx = data.sorted[f];
        idx.resize(data.n);
        std::iota(idx.begin(), idx.end(), 0u);
        const auto& col = data.cols[f];
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }

    ForestModel model;
    model.params = params;
    model.trees.resize(params.n_trees);
    const Rng root = Rng(params.seed).derive(0xF0BE57);
    parallel_for(static_cast<std::size_t>(params.n_trees), [&](std::size_t t) {
        TreeBuilder builder(data, params, root.derive(t));
        model.trees[t] = builder.build();
    });
    return model;
}

} // namespace ilab
