#pragma once

#include "ilab/graph.hpp"
#include "ilab/rng.hpp"

#include <string>
#include <vector>

namespace ilab::testing {

// Path-enumeration d-separation oracle: enumerates every simple path between
// the sets and applies the collider/non-collider blocking rules directly.
// Deliberately independent of the reachability implementation under test.
class DsepOracle {
  public:
    explicit DsepOracle(const Dag& g) : g_(g) {
        const int n = g.node_count();
        desc_.assign(n, std::vector<char>(n, 0));
        for (int v = 0; v < n; ++v) mark_descendants(v, v);
    }

    bool d_separated(const std::vector<std::string>& x, const std::vector<std::string>& y,
                     const std::vector<std::string>& z) const {
        const int n = g_.node_count();
        std::vector<char> in_y(n, 0), in_z(n, 0);
        for (const auto& label : y) in_y[g_.index_of(label)] = 1;
        for (const auto& label : z) in_z[g_.index_of(label)] = 1;
        for (const auto& label : x) {
            std::vector<int> path{g_.index_of(label)};
            std::vector<char> on_path(n, 0);
            on_path[path[0]] = 1;
            if (active_path_exists(path, on_path, in_y, in_z)) return false;
        }
        return true;
    }

  private:
    void mark_descendants(int root, int v) {
        desc_[root][v] = 1;
        for (int c : g_.children(v))
            if (!desc_[root][c]) mark_descendants(root, c);
    }

    bool interior_active(int prev, int v, int next, const std::vector<char>& in_z) const {
        if (g_.node(v).role == NodeRole::fixed) return false;
        const bool collider = g_.has_edge(g_.node(prev).label, g_.node(v).label) &&
                              g_.has_edge(g_.node(next).label, g_.node(v).label);
        if (collider) {
            for (int w = 0; w < g_.node_count(); ++w)
                if (desc_[v][w] && in_z[w]) return true;
            return false;
        }
        return !in_z[v];
    }

    bool active_path_exists(std::vector<int>& path, std::vector<char>& on_path,
                            const std::vector<char>& in_y, const std::vector<char>& in_z) const {
        const int v = path.back();
        for (int w = 0; w < g_.node_count(); ++w) {
            const bool adjacent = g_.has_edge(g_.node(v).label, g_.node(w).label) ||
                                  g_.has_edge(g_.node(w).label, g_.node(v).label);
            if (!adjacent || on_path[w]) continue;
            // Extending the path to w: check the interior node v (if any).
            if (path.size() >= 2 &&
                !interior_active(path[path.size() - 2], v, w, in_z))
                continue;
            if (in_y[w]) return true;
            path.push_back(w);
            on_path[w] = 1;
            if (active_path_exists(path, on_path, in_y, in_z)) return true;
            on_path[w] = 0;
            path.pop_back();
        }
        return false;
    }

    const Dag& g_;
    std::vector<std::vector<char>> desc_;
};

inline Dag random_dag(Rng& rng, int n_nodes, double edge_prob) {
    Dag g;
    for (int v = 0; v < n_nodes; ++v) g.add_node("N" + std::to_string(v), NodeRole::feature);
    // Edges only forward along a random topological order.
    auto order = rng.permutation(static_cast<std::size_t>(n_nodes));
    for (int a = 0; a < n_nodes; ++a)
        for (int b = a + 1; b < n_nodes; ++b)
            if (rng.uniform01() < edge_prob)
                g.add_edge("N" + std::to_string(order[a]), "N" + std::to_string(order[b]));
    return g;
}

} // namespace ilab::testing
