#include "ilab/graph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <deque>
#include <set>
#include <stdexcept>

namespace ilab {

std::string role_name(NodeRole role) {
    switch (role) {
        case NodeRole::latent: return "latent";
        case NodeRole::feature: return "feature";
        case NodeRole::treatment: return "treatment";
        case NodeRole::outcome: return "outcome";
        case NodeRole::fixed: return "fixed";
    }
    throw std::logic_error("role_name: unknown role");
}

NodeRole role_from_name(const std::string& name) {
    if (name == "latent") return NodeRole::latent;
    if (name == "feature") return NodeRole::feature;
    if (name == "treatment") return NodeRole::treatment;
    if (name == "outcome") return NodeRole::outcome;
    if (name == "fixed") return NodeRole::fixed;
    throw std::invalid_argument("unknown node role: " + name);
}

int Dag::add_node(const std::string& label, NodeRole role) {
    if (label.empty()) throw std::invalid_argument("add_node: empty label");
    if (index_.count(label)) throw std::invalid_argument("add_node: duplicate label " + label);
    int v = node_count();
    nodes_.push_back({label, role});
    index_[label] = v;
    parents_.emplace_back();
    children_.emplace_back();
    return v;
}

bool Dag::reaches(int from, int to) const {
    if (from == to) return true;
    std::vector<char> seen(nodes_.size(), 0);
    std::deque<int> queue{from};
    seen[from] = 1;
    while (!queue.empty()) {
        int v = queue.front();
        queue.pop_front();
        for (int c : children_[v]) {
            if (c == to) return true;
            if (!seen[c]) {
                seen[c] = 1;
                queue.push_back(c);
            }
        }
    }
    return false;
}

void Dag::add_edge(const std::string& from, const std::string& to) {
    int u = index_of(from);
    int v = index_of(to);
    if (u == v) throw std::invalid_argument("add_edge: self loop on " + from);
    if (has_edge(from, to)) throw std::invalid_argument("add_edge: duplicate edge " + from + "->" + to);
    if (reaches(v, u))
        throw std::invalid_argument("add_edge: " + from + "->" + to + " would create a cycle");
    children_[u].push_back(v);
    parents_[v].push_back(u);
}

bool Dag::has_node(const std::string& label) const { return index_.count(label) > 0; }

bool Dag::has_edge(const std::string& from, const std::string& to) const {
    if (!has_node(from) || !has_node(to)) return false;
    int u = index_.at(from), v = index_.at(to);
    return std::find(children_[u].begin(), children_[u].end(), v) != children_[u].end();
}

int Dag::index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw std::invalid_argument("no such node: " + label);
    return it->second;
}

int Dag::edge_count() const {
    int total = 0;
    for (const auto& c : children_) total += static_cast<int>(c.size());
    return total;
}

std::vector<std::pair<std::string, std::string>> Dag::edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(edge_count());
    for (int u = 0; u < node_count(); ++u)
        for (int v : children_[u]) out.emplace_back(nodes_[u].label, nodes_[v].label);
    return out;
}

std::string Dag::to_json() const {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (const auto& n : nodes_)
        j["nodes"].push_back({{"label", n.label}, {"role", role_name(n.role)}});
    j["edges"] = nlohmann::json::array();
    for (const auto& [from, to] : edges()) j["edges"].push_back({from, to});
    return j.dump(2);
}

Dag Dag::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Dag g;
    for (const auto& n : j.at("nodes"))
        g.add_node(n.at("label").get<std::string>(), role_from_name(n.at("role").get<std::string>()));
    for (const auto& e : j.at("edges"))
        g.add_edge(e.at(0).get<std::string>(), e.at(1).get<std::string>());
    return g;
}

std::string Swig::to_json() const {
    nlohmann::json j = nlohmann::json::parse(graph.to_json());
    j["splits"] = nlohmann::json::array();
    for (const auto& s : splits)
        j["splits"].push_back(
            {{"random", s.random_label}, {"fixed", s.fixed_label}, {"value", s.value}});
    j["outcome_relabels"] = nlohmann::json::object();
    for (const auto& [before, after] : outcome_relabels) j["outcome_relabels"][before] = after;
    return j.dump(2);
}

Dag build_ad_dag(int m) {
    if (m < 1) throw std::invalid_argument("build_ad_dag: m must be >= 1");
    Dag g;
    g.add_node("U", NodeRole::latent);
    g.add_node("C", NodeRole::latent);
    for (int i = 1; i <= m; ++i) g.add_node("X" + std::to_string(i), NodeRole::feature);
    for (int i = 1; i <= m; ++i) g.add_node("A" + std::to_string(i), NodeRole::treatment);
    for (int i = 1; i <= m; ++i) g.add_node("Y" + std::to_string(i), NodeRole::outcome);

    g.add_edge("U", "C");
    for (int i = 1; i <= m; ++i) g.add_edge("C", "X" + std::to_string(i));
    for (int i = 1; i <= m; ++i)
        for (int j = 1; j <= m; ++j) g.add_edge("X" + std::to_string(j), "A" + std::to_string(i));
    for (int i = 1; i <= m; ++i) {
        for (int j = 1; j <= m; ++j) {
            g.add_edge("X" + std::to_string(j), "Y" + std::to_string(i));
            g.add_edge("A" + std::to_string(j), "Y" + std::to_string(i));
        }
        g.add_edge("U", "Y" + std::to_string(i));
    }
    return g;
}

namespace {

std::string lowercase(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

} // namespace

Swig swig_transform(const Dag& g, const std::vector<std::pair<std::string, int>>& interventions) {
    for (const auto& [label, value] : interventions) {
        int v = g.index_of(label); // throws for unknown nodes
        if (g.node(v).role != NodeRole::treatment)
            throw std::invalid_argument("swig_transform: " + label + " is not a treatment node");
        if (g.has_node(lowercase(label)))
            throw std::invalid_argument("swig_transform: " + label + " is already split");
        if (value != 0 && value != 1)
            throw std::invalid_argument("swig_transform: intervention value must be 0 or 1");
    }

    std::map<std::string, int> split_value;
    for (const auto& [label, value] : interventions) {
        if (split_value.count(label))
            throw std::invalid_argument("swig_transform: duplicate intervention on " + label);
        split_value[label] = value;
    }

    // Counterfactual suffix, e.g. "(a1,a3)", in graph treatment order.
    std::string suffix;
    std::vector<std::string> fixed_order;
    for (int v = 0; v < g.node_count(); ++v) {
        const auto& n = g.node(v);
        if (n.role == NodeRole::treatment && split_value.count(n.label)) {
            if (!suffix.empty()) suffix += ",";
            suffix += lowercase(n.label);
            fixed_order.push_back(n.label);
        }
    }
    suffix = suffix.empty() ? "" : "(" + suffix + ")";

    Swig out;
    // Descendants of any fixed half become counterfactual; for simplicity we
    // relabel exactly the outcome nodes, which is where interventions land in
    // this model family.
    for (int v = 0; v < g.node_count(); ++v) {
        const auto& n = g.node(v);
        if (n.role == NodeRole::outcome && !suffix.empty())
            out.outcome_relabels[n.label] = n.label + suffix;
    }

    auto new_label = [&](const std::string& label) {
        auto it = out.outcome_relabels.find(label);
        return it == out.outcome_relabels.end() ? label : it->second;
    };

    for (int v = 0; v < g.node_count(); ++v) {
        const auto& n = g.node(v);
        out.graph.add_node(new_label(n.label), n.role);
        if (split_value.count(n.label))
            out.graph.add_node(lowercase(n.label), NodeRole::fixed);
    }
    for (const auto& [from, to] : g.edges()) {
        // Outgoing edges of a split treatment move to its fixed half.
        const std::string src = split_value.count(from) ? lowercase(from) : new_label(from);
        out.graph.add_edge(src, new_label(to));
    }
    for (const auto& label : fixed_order)
        out.splits.push_back({label, lowercase(label), split_value.at(label)});
    return out;
}

Swig swig_transform(const Dag& g, const AllocationRule& rule) {
    if (!rule.valid()) throw std::invalid_argument("swig_transform: invalid rule " + rule.str());
    std::vector<std::pair<std::string, int>> interventions;
    for (int i = 0; i < rule.size(); ++i)
        interventions.emplace_back("A" + std::to_string(i + 1), rule.bits[i]);
    return swig_transform(g, interventions);
}

bool d_separated(const Dag& g, const std::vector<std::string>& x,
                 const std::vector<std::string>& y, const std::vector<std::string>& z,
                 const DsepOptions& opts) {
    const int n = g.node_count();
    std::vector<char> in_x(n, 0), in_y(n, 0), in_z(n, 0);
    auto mark = [&](const std::vector<std::string>& labels, std::vector<char>& flags) {
        for (const auto& label : labels) flags[g.index_of(label)] = 1;
    };
    mark(x, in_x);
    mark(y, in_y);
    mark(z, in_z);
    for (int v = 0; v < n; ++v) {
        if (in_x[v] + in_y[v] + in_z[v] > 1)
            throw std::invalid_argument("d_separated: sets must be disjoint (node " +
                                        g.node(v).label + ")");
        if (in_z[v] && g.node(v).role == NodeRole::latent && !opts.allow_latent_conditioning)
            throw std::invalid_argument("d_separated: conditioning on latent node " +
                                        g.node(v).label);
        if ((in_x[v] || in_y[v] || in_z[v]) && g.node(v).role == NodeRole::fixed)
            throw std::invalid_argument("d_separated: fixed node " + g.node(v).label +
                                        " is not a random variable");
    }

    // Ancestors of Z (including Z) for collider activation.
    std::vector<char> anc_z(n, 0);
    {
        std::deque<int> queue;
        for (int v = 0; v < n; ++v)
            if (in_z[v]) {
                anc_z[v] = 1;
                queue.push_back(v);
            }
        while (!queue.empty()) {
            int v = queue.front();
            queue.pop_front();
            for (int p : g.parents(v))
                if (!anc_z[p]) {
                    anc_z[p] = 1;
                    queue.push_back(p);
                }
        }
    }

    // Reachability over (node, direction): dir 0 = arrived from a child,
    // dir 1 = arrived from a parent. Fixed nodes never transmit.
    std::vector<std::array<char, 2>> visited(n, {0, 0});
    std::deque<std::pair<int, int>> queue;
    for (int v = 0; v < n; ++v)
        if (in_x[v]) queue.emplace_back(v, 0);

    auto conduit = [&](int v) { return g.node(v).role != NodeRole::fixed; };

    while (!queue.empty()) {
        auto [v, dir] = queue.front();
        queue.pop_front();
        if (visited[v][dir]) continue;
        visited[v][dir] = 1;
        if (!in_z[v] && in_y[v]) return false;

        if (dir == 0) {
            // Came up from a child: pass to parents (up) and children (down).
            if (!in_z[v]) {
                for (int p : g.parents(v))
                    if (conduit(p)) queue.emplace_back(p, 0);
                for (int c : g.children(v))
                    if (conduit(c)) queue.emplace_back(c, 1);
            }
        } else {
            // Came down from a parent.
            if (!in_z[v]) {
                for (int c : g.children(v))
                    if (conduit(c)) queue.emplace_back(c, 1);
            }
            if (anc_z[v]) {
                // v is a collider on the trail and activates via Z.
                for (int p : g.parents(v))
                    if (conduit(p)) queue.emplace_back(p, 0);
            }
        }
    }
    return true;
}

bool verify_network_ignorability(const Dag& g, const AllocationRule& rule) {
    if (!rule.valid())
        throw std::invalid_argument("verify_network_ignorability: invalid rule " + rule.str());
    const int m = rule.size();
    Swig swig = swig_transform(g, rule);

    std::vector<std::string> treatments, features;
    for (int i = 1; i <= m; ++i) {
        treatments.push_back("A" + std::to_string(i));
        features.push_back("X" + std::to_string(i));
    }
    for (const auto& [before, after] : swig.outcome_relabels) {
        (void)before;
        if (!d_separated(swig.graph, {after}, treatments, features)) return false;
    }
    return true;
}

bool verify_network_ignorability(int m, const AllocationRule& rule) {
    return verify_network_ignorability(build_ad_dag(m), rule);
}

} // namespace ilab
