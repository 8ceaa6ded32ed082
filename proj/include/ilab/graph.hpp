#pragma once

#include "ilab/allocation.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace ilab {

enum class NodeRole { latent, feature, treatment, outcome, fixed };

std::string role_name(NodeRole role);
NodeRole role_from_name(const std::string& name);

// Immutable-after-construction labeled DAG. Labels are unique; edges are
// checked for cycles as they are added.
class Dag {
  public:
    struct Node {
        std::string label;
        NodeRole role;
    };

    Dag() = default;

    int add_node(const std::string& label, NodeRole role);
    void add_edge(const std::string& from, const std::string& to);

    bool has_node(const std::string& label) const;
    bool has_edge(const std::string& from, const std::string& to) const;
    int index_of(const std::string& label) const; // throws if absent

    int node_count() const { return static_cast<int>(nodes_.size()); }
    int edge_count() const;
    const Node& node(int v) const { return nodes_.at(v); }
    const std::vector<int>& parents(int v) const { return parents_.at(v); }
    const std::vector<int>& children(int v) const { return children_.at(v); }
    const std::vector<Node>& nodes() const { return nodes_; }
    std::vector<std::pair<std::string, std::string>> edges() const;

    std::string to_json() const;
    static Dag from_json(const std::string& text);

  private:
    bool reaches(int from, int to) const;

    std::vector<Node> nodes_;
    std::map<std::string, int> index_;
    std::vector<std::vector<int>> parents_;
    std::vector<std::vector<int>> children_;
};

// DAG after node-splitting intervened treatments: the random half keeps the
// incoming edges, the fixed half (in-degree 0) takes the outgoing ones, and
// outcome labels record the intervention.
struct Swig {
    struct Split {
        std::string random_label; // e.g. "A2"
        std::string fixed_label;  // e.g. "a2"
        int value;                // intervened block
    };

    Dag graph;
    std::vector<Split> splits;
    std::map<std::string, std::string> outcome_relabels; // old -> new

    std::string to_json() const;
};

struct DsepOptions {
    // Latent nodes are legitimate path conduits but conditioning on them is
    // rejected unless explicitly allowed.
    bool allow_latent_conditioning = false;
};

// Fig-1(a)-style pageview graph: U -> C, C -> Xi, Xj -> Ai, Xj -> Yi,
// Aj -> Yi and U -> Yi for every i, j; all m outcomes present.
Dag build_ad_dag(int m);

// Generic node-splitting on named treatments (value recorded per split).
Swig swig_transform(const Dag& g, const std::vector<std::pair<std::string, int>>& interventions);
// Splits every A1..Am according to the rule.
Swig swig_transform(const Dag& g, const AllocationRule& rule);

// True iff Z d-separates X from Y. Reachability (Bayes-ball style) over
// (node, direction) states; fixed nodes never transmit.
bool d_separated(const Dag& g, const std::vector<std::string>& x,
                 const std::vector<std::string>& y, const std::vector<std::string>& z,
                 const DsepOptions& opts = {});

// Yi(a) independent of {A1..Am} given {X1..Xm}, conjoined over i, on the
// SWIG of the given graph (defaults to the unmodified pageview DAG).
bool verify_network_ignorability(const Dag& g, const AllocationRule& rule);
bool verify_network_ignorability(int m, const AllocationRule& rule);

} // namespace ilab
