#include "ilab/models.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ilab {

double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
    if (scores.empty()) throw std::invalid_argument("auc: empty input");
    std::size_t n_pos = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw std::invalid_argument("auc: labels must be 0/1");
        n_pos += static_cast<std::size_t>(y);
    }
    const std::size_t n = scores.size();
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auc: undefined metric, only one class present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Rank-sum with average ranks over ties.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::baseline: return "baseline";
        case Variant::block: return "block";
        case Variant::block_cross: return "block-cross";
        case Variant::full: return "full";
        case Variant::discovered: return "discovered";
    }
    throw std::logic_error("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "baseline") return Variant::baseline;
    if (name == "block") return Variant::block;
    if (name == "block-cross") return Variant::block_cross;
    if (name == "full") return Variant::full;
    if (name == "discovered") return Variant::discovered;
    throw std::invalid_argument("unknown variant: " + name);
}

std::string model_kind_name(ModelKind k) {
    return k == ModelKind::logistic ? "logistic" : "forest";
}

ModelKind model_kind_from_name(const std::string& name) {
    if (name == "logistic") return ModelKind::logistic;
    if (name == "forest") return ModelKind::forest;
    throw std::invalid_argument("unknown model kind: " + name);
}

std::string propensity_mode_name(PropensityMode m) {
    return m == PropensityMode::joint ? "joint" : "product";
}

PropensityMode propensity_mode_from_name(const std::string& name) {
    if (name == "joint") return PropensityMode::joint;
    if (name == "product") return PropensityMode::product;
    throw std::invalid_argument("unknown propensity mode: " + name);
}

// ---------------------------------------------------------------------------
// DesignBuilder
// ---------------------------------------------------------------------------

namespace {

// Parses "x{j}_{k}" -> (j, k), both 1-based in the name.
bool parse_indexed(const std::string& s, const std::string& prefix, int* j, int* k) {
    if (s.rfind(prefix, 0) != 0) return false;
    const std::string rest = s.substr(prefix.size());
    auto us = rest.find('_');
    if (us == std::string::npos || us == 0 || us + 1 >= rest.size()) return false;
    try {
        *j = std::stoi(rest.substr(0, us));
        *k = std::stoi(rest.substr(us + 1));
    } catch (const std::exception&) {
        return false;
    }
    return true;
}

} // namespace

DesignBuilder::DesignBuilder(int m, int p, int position, std::vector<std::string> columns)
    : m_(m), p_(p), position_(position), columns_(std::move(columns)) {
    if (position < 0 || position >= m)
        throw std::invalid_argument("DesignBuilder: position out of range");
    tokens_.reserve(columns_.size());
    for (const auto& name : columns_) {
        Token tok;
        int j = 0, k = 0;
        if (name == "a_self") {
            tok.kind = TokenKind::a_self;
        } else if (name == "top_count") {
            tok.kind = TokenKind::top_count;
        } else if (parse_indexed(name, "d1_x", &j, &k)) {
            tok.kind = TokenKind::d1;
        } else if (parse_indexed(name, "d2_x", &j, &k)) {
            tok.kind = TokenKind::d2;
        } else if (parse_indexed(name, "x", &j, &k)) {
            tok.kind = TokenKind::raw;
        } else if (name.size() > 1 && name[0] == 'a' &&
                   name.find_first_not_of("0123456789", 1) == std::string::npos) {
            tok.kind = TokenKind::alloc;
            j = std::stoi(name.substr(1));
            k = 1;
        } else {
            throw std::invalid_argument("DesignBuilder: unknown column " + name);
        }
        if (tok.kind != TokenKind::a_self && tok.kind != TokenKind::top_count) {
            if (j < 1 || j > m || k < 1 || k > p)
                throw std::invalid_argument("DesignBuilder: column out of range " + name);
            tok.j = j - 1;
            tok.k = k - 1;
        }
        tokens_.push_back(tok);
    }
}

DesignBuilder DesignBuilder::for_variant(int m, int p, int position, const FeatureSetSpec& spec) {
    std::vector<std::string> cols;
    auto self_features = [&] {
        for (int k = 1; k <= p; ++k)
            cols.push_back("x" + std::to_string(position + 1) + "_" + std::to_string(k));
    };
    switch (spec.variant) {
        case Variant::baseline:
            cols = {"a_self", "top_count"};
            self_features();
            break;
        case Variant::block:
            cols = {"a_self", "top_count"};
            self_features();
            for (int j = 1; j <= m; ++j) {
                if (j == position + 1) continue;
                for (int k = 1; k <= p; ++k)
                    cols.push_back("d2_x" + std::to_string(j) + "_" + std::to_string(k));
            }
            break;
        case Variant::block_cross:
            cols = {"a_self", "top_count"};
            self_features();
            for (int j = 1; j <= m; ++j) {
                if (j == position + 1) continue;
                for (int k = 1; k <= p; ++k)
                    cols.push_back("d2_x" + std::to_string(j) + "_" + std::to_string(k));
            }
            for (int j = 1; j <= m; ++j) {
                if (j == position + 1) continue;
                for (int k = 1; k <= p; ++k)
                    cols.push_back("d1_x" + std::to_string(j) + "_" + std::to_string(k));
            }
            break;
        case Variant::full:
            for (int j = 1; j <= m; ++j) cols.push_back("a" + std::to_string(j));
            for (int j = 1; j <= m; ++j)
                for (int k = 1; k <= p; ++k)
                    cols.push_back("x" + std::to_string(j) + "_" + std::to_string(k));
            break;
        case Variant::discovered:
            if (spec.discovered_parents.empty())
                throw std::invalid_argument(
                    "DesignBuilder: discovered variant requires a parent list");
            cols = spec.discovered_parents;
            break;
    }
    return DesignBuilder(m, p, position, std::move(cols));
}

std::vector<double> DesignBuilder::row(const Pageview& pv, const AllocationRule& a) const {
    if (a.size() != m_) throw std::invalid_argument("DesignBuilder: rule length mismatch");
    std::vector<double> out(tokens_.size());
    const int ai = a.bits[position_];
    for (std::size_t t = 0; t < tokens_.size(); ++t) {
        const Token& tok = tokens_[t];
        switch (tok.kind) {
            case TokenKind::a_self: out[t] = ai; break;
            case TokenKind::top_count: out[t] = a.top_count(); break;
            case TokenKind::alloc: out[t] = a.bits[tok.j]; break;
            case TokenKind::raw: out[t] = pv.x[tok.j][tok.k]; break;
            case TokenKind::d1:
                out[t] = (a.bits[tok.j] == ai) ? 0.0 : pv.x[tok.j][tok.k];
                break;
            case TokenKind::d2:
                out[t] = (tok.j == position_ || a.bits[tok.j] == ai) ? pv.x[tok.j][tok.k] : 0.0;
                break;
        }
    }
    return out;
}

bool DesignBuilder::depends_on_allocation() const {
    for (const auto& tok : tokens_)
        if (tok.kind != TokenKind::raw) return true;
    return false;
}

// ---------------------------------------------------------------------------
// OutcomeModel
// ---------------------------------------------------------------------------

OutcomeModel::OutcomeModel(ModelKind kind, FeatureSetSpec spec, DesignBuilder design)
    : kind_(kind), spec_(std::move(spec)), design_(std::move(design)) {}

double OutcomeModel::predict(const Pageview& pv, const AllocationRule& a) const {
    std::vector<double> feat = design_.row(pv, a);
    return kind_ == ModelKind::logistic ? logistic.predict(feat) : forest.predict(feat);
}

const LogisticDiagnostics* OutcomeModel::logistic_diagnostics() const {
    return kind_ == ModelKind::logistic ? &logistic.diag : nullptr;
}

OutcomeModel fit_outcome(const Dataset& d, int position, const FeatureSetSpec& spec,
                         ModelKind kind, const FitOptions& opts) {
    if (d.pageviews.empty()) throw std::invalid_argument("fit_outcome: empty dataset");
    const int m = d.m();
    const int p = d.p();
    if (position < 0 || position >= m)
        throw std::invalid_argument("fit_outcome: position out of range");

    DesignBuilder design = DesignBuilder::for_variant(m, p, position, spec);
    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    rows.reserve(d.size());
    labels.reserve(d.size());
    for (const auto& pv : d.pageviews) {
        rows.push_back(design.row(pv));
        labels.push_back(pv.y[position]);
    }

    OutcomeModel model(kind, spec, std::move(design));
    if (kind == ModelKind::logistic) {
        model.logistic = fit_logistic(rows, labels, opts.ridge);
    } else {
        ForestParams params{opts.forest_trees, opts.forest_depth, opts.forest_min_leaf,
                            opts.seed, opts.forest_feature_frac};
        model.forest = fit_forest(rows, labels, params);
    }
    return model;
}

// ---------------------------------------------------------------------------
// PropensityModel
// ---------------------------------------------------------------------------

PropensityModel::PropensityModel(int m, PropensityMode mode, ModelKind kind)
    : m_(m), mode_(mode), kind_(kind) {}

std::vector<double> PropensityModel::flat_features(const Pageview& pv) const {
    std::vector<double> out;
    out.reserve(pv.x.size() * pv.x[0].size());
    for (const auto& xi : pv.x) out.insert(out.end(), xi.begin(), xi.end());
    return out;
}

std::vector<double> PropensityModel::rule_probs(const Pageview& pv) const {
    const auto feat = flat_features(pv);
    const std::size_t n_rules = static_cast<std::size_t>(m_) + 1;
    std::vector<double> probs(n_rules, 0.0);

    if (mode_ == PropensityMode::joint) {
        if (kind_ == ModelKind::logistic) {
            probs = multinomial.probs(feat);
        } else {
            double total = 0.0;
            for (std::size_t r = 0; r < n_rules; ++r) {
                probs[r] = per_rule[r].predict(feat);
                total += probs[r];
            }
            if (total <= 0.0) {
                probs.assign(n_rules, 1.0 / static_cast<double>(n_rules));
            } else {
                for (double& v : probs) v /= total;
            }
        }
    } else {
        const auto rules = enumerate_valid_rules(m_);
        double total = 0.0;
        for (std::size_t r = 0; r < n_rules; ++r) {
            probs[r] = marginal_product(pv, rules[r]);
            total += probs[r];
        }
        for (double& v : probs) v /= total;
    }

    if (smoothing_eps > 0.0) {
        const double k = static_cast<double>(n_rules);
        for (double& v : probs) v = (v + smoothing_eps) / (1.0 + k * smoothing_eps);
    }
    return probs;
}

double PropensityModel::rule_prob(const Pageview& pv, const AllocationRule& a) const {
    if (!a.valid() || a.size() != m_)
        throw std::invalid_argument("rule_prob: invalid rule " + a.str());
    return rule_probs(pv)[rule_index(a)];
}

double PropensityModel::marginal_product(const Pageview& pv, const AllocationRule& a) const {
    if (mode_ != PropensityMode::product)
        throw std::logic_error("marginal_product: only available in product mode");
    if (!a.valid() || a.size() != m_)
        throw std::invalid_argument("marginal_product: invalid rule " + a.str());
    const auto feat = flat_features(pv);
    double prod = 1.0;
    for (int i = 0; i < m_; ++i) {
        const double p_top = kind_ == ModelKind::logistic
                                 ? per_position_logistic[i].predict(feat)
                                 : per_position_forest[i].predict(feat);
        prod *= a.bits[i] ? p_top : (1.0 - p_top);
    }
    return prod;
}

PropensityModel fit_propensity(const Dataset& d, PropensityMode mode, ModelKind kind,
                               const FitOptions& opts) {
    if (d.pageviews.empty()) throw std::invalid_argument("fit_propensity: empty dataset");
    const int m = d.m();
    const auto rules = enumerate_valid_rules(m);

    std::vector<std::vector<double>> rows;
    rows.reserve(d.size());
    std::vector<int> rule_labels;
    rule_labels.reserve(d.size());
    std::vector<std::size_t> rule_counts(rules.size(), 0);
    for (const auto& pv : d.pageviews) {
        std::vector<double> feat;
        feat.reserve(pv.x.size() * pv.x[0].size());
        for (const auto& xi : pv.x) feat.insert(feat.end(), xi.begin(), xi.end());
        rows.push_back(std::move(feat));
        const int r = rule_index(pv.a);
        rule_labels.push_back(r);
        ++rule_counts[r];
    }

    PropensityModel model(m, mode, kind);
    model.smoothing_eps = opts.smoothing_eps;
    for (std::size_t r = 0; r < rules.size(); ++r) {
        if (rule_counts[r] == 0 && mode == PropensityMode::joint && opts.smoothing_eps <= 0.0)
            throw std::invalid_argument("fit_propensity: rule " + rules[r].str() +
                                        " never observed; supply smoothing_eps or more data");
    }

    if (mode == PropensityMode::joint) {
        if (kind == ModelKind::logistic) {
            model.multinomial = fit_multinomial(rows, rule_labels,
                                                static_cast<int>(rules.size()), opts.ridge);
        } else {
            model.per_rule.resize(rules.size());
            for (std::size_t r = 0; r < rules.size(); ++r) {
                std::vector<int> labels(rows.size());
                for (std::size_t n = 0; n < rows.size(); ++n)
                    labels[n] = rule_labels[n] == static_cast<int>(r) ? 1 : 0;
                if (rule_counts[r] == 0 || rule_counts[r] == rows.size()) {
                    // Degenerate class: constant-rate stump forest.
                    DecisionTree stump;
                    stump.nodes.push_back({});
                    stump.nodes.back().rate =
                        static_cast<double>(rule_counts[r]) / static_cast<double>(rows.size());
                    model.per_rule[r].params = {1, 0, 1, opts.seed};
                    model.per_rule[r].trees = {stump};
                    continue;
                }
                ForestParams params{opts.forest_trees, opts.forest_depth, opts.forest_min_leaf,
                                    Rng(opts.seed).derive(0xA110C + r).next_u64(),
                                    opts.forest_feature_frac};
                model.per_rule[r] = fit_forest(rows, labels, params);
            }
        }
    } else {
        for (int i = 0; i < m; ++i) {
            std::vector<int> labels(rows.size());
            for (std::size_t n = 0; n < rows.size(); ++n)
                labels[n] = d.pageviews[n].a.bits[i];
            if (kind == ModelKind::logistic) {
                model.per_position_logistic.push_back(fit_logistic(rows, labels, opts.ridge));
            } else {
                ForestParams params{opts.forest_trees, opts.forest_depth, opts.forest_min_leaf,
                                    Rng(opts.seed).derive(0xB10C0 + static_cast<std::uint64_t>(i))
                                        .next_u64(),
                                    opts.forest_feature_frac};
                model.per_position_forest.push_back(fit_forest(rows, labels, params));
            }
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

nlohmann::json logistic_to_json(const LogisticModel& m) {
    return {{"weights", m.weights},
            {"log_loss", m.diag.log_loss},
            {"iterations", m.diag.iterations}};
}

LogisticModel logistic_from_json(const nlohmann::json& j) {
    LogisticModel m;
    m.weights = j.at("weights").get<std::vector<double>>();
    m.diag.log_loss = j.value("log_loss", 0.0);
    m.diag.iterations = j.value("iterations", 0);
    return m;
}

nlohmann::json forest_to_json(const ForestModel& f) {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& tree : f.trees) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const auto& nd : tree.nodes)
            nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.rate});
        trees.push_back(std::move(nodes));
    }
    return {{"n_trees", f.params.n_trees},
            {"max_depth", f.params.max_depth},
            {"min_leaf", f.params.min_leaf},
            {"seed", f.params.seed},
            {"feature_frac", f.params.feature_frac},
            {"trees", std::move(trees)}};
}

ForestModel forest_from_json(const nlohmann::json& j) {
    ForestModel f;
    f.params.n_trees = j.at("n_trees").get<int>();
    f.params.max_depth = j.at("max_depth").get<int>();
    f.params.min_leaf = j.at("min_leaf").get<int>();
    f.params.seed = j.at("seed").get<std::uint64_t>();
    f.params.feature_frac = j.value("feature_frac", 0.0);
    for (const auto& tj : j.at("trees")) {
        DecisionTree tree;
        for (const auto& nj : tj) {
            TreeNode nd;
            nd.feature = nj.at(0).get<int>();
            nd.threshold = nj.at(1).get<double>();
            nd.left = nj.at(2).get<int>();
            nd.right = nj.at(3).get<int>();
            nd.rate = nj.at(4).get<double>();
            tree.nodes.push_back(nd);
        }
        f.trees.push_back(std::move(tree));
    }
    return f;
}

nlohmann::json multinomial_to_json(const MultinomialModel& m) {
    return {{"n_classes", m.n_classes}, {"weights", m.weights}};
}

MultinomialModel multinomial_from_json(const nlohmann::json& j) {
    MultinomialModel m;
    m.n_classes = j.at("n_classes").get<int>();
    m.weights = j.at("weights").get<std::vector<std::vector<double>>>();
    return m;
}

} // namespace

std::string OutcomeModel::to_json() const {
    nlohmann::json j;
    j["type"] = "outcome";
    j["kind"] = model_kind_name(kind_);
    j["variant"] = variant_name(spec_.variant);
    j["position"] = design_.position();
    j["columns"] = design_.columns();
    j["m"] = design_.m();
    j["p"] = design_.p();
    if (kind_ == ModelKind::logistic) j["logistic"] = logistic_to_json(logistic);
    else j["forest"] = forest_to_json(forest);
    return j.dump(2);
}

OutcomeModel OutcomeModel::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("type", "") != "outcome")
        throw std::invalid_argument("OutcomeModel::from_json: not an outcome model");
    FeatureSetSpec spec;
    spec.variant = variant_from_name(j.at("variant").get<std::string>());
    auto columns = j.at("columns").get<std::vector<std::string>>();
    if (spec.variant == Variant::discovered) spec.discovered_parents = columns;
    DesignBuilder design(j.at("m").get<int>(), j.at("p").get<int>(),
                         j.at("position").get<int>(), columns);
    OutcomeModel model(model_kind_from_name(j.at("kind").get<std::string>()), std::move(spec),
                       std::move(design));
    if (model.kind() == ModelKind::logistic) model.logistic = logistic_from_json(j.at("logistic"));
    else model.forest = forest_from_json(j.at("forest"));
    return model;
}

std::string PropensityModel::to_json() const {
    nlohmann::json j;
    j["type"] = "propensity";
    j["m"] = m_;
    j["mode"] = propensity_mode_name(mode_);
    j["kind"] = model_kind_name(kind_);
    j["smoothing_eps"] = smoothing_eps;
    if (mode_ == PropensityMode::joint) {
        if (kind_ == ModelKind::logistic) {
            j["multinomial"] = multinomial_to_json(multinomial);
        } else {
            j["per_rule"] = nlohmann::json::array();
            for (const auto& f : per_rule) j["per_rule"].push_back(forest_to_json(f));
        }
    } else {
        if (kind_ == ModelKind::logistic) {
            j["per_position"] = nlohmann::json::array();
            for (const auto& l : per_position_logistic)
                j["per_position"].push_back(logistic_to_json(l));
        } else {
            j["per_position"] = nlohmann::json::array();
            for (const auto& f : per_position_forest)
                j["per_position"].push_back(forest_to_json(f));
        }
    }
    return j.dump(2);
}

PropensityModel PropensityModel::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("type", "") != "propensity")
        throw std::invalid_argument("PropensityModel::from_json: not a propensity model");
    PropensityModel model(j.at("m").get<int>(),
                          propensity_mode_from_name(j.at("mode").get<std::string>()),
                          model_kind_from_name(j.at("kind").get<std::string>()));
    model.smoothing_eps = j.value("smoothing_eps", 0.0);
    if (model.mode() == PropensityMode::joint) {
        if (model.kind() == ModelKind::logistic) {
            model.multinomial = multinomial_from_json(j.at("multinomial"));
        } else {
            for (const auto& fj : j.at("per_rule")) model.per_rule.push_back(forest_from_json(fj));
        }
    } else {
        if (model.kind() == ModelKind::logistic) {
            for (const auto& lj : j.at("per_position"))
                model.per_position_logistic.push_back(logistic_from_json(lj));
        } else {
            for (const auto& fj : j.at("per_position"))
                model.per_position_forest.push_back(forest_from_json(fj));
        }
    }
    return model;
}

} // namespace ilab
