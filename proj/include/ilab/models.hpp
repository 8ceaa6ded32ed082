#pragma once

#include "ilab/sem.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ilab {

// Mann-Whitney AUC with ties counted 1/2. Throws if only one class present.
double auc(std::span<const double> scores, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Logistic regression (penalized Bernoulli MLE, damped Newton)
// ---------------------------------------------------------------------------

struct LogisticDiagnostics {
    double log_loss = 0.0; // mean per-row
    int iterations = 0;
    double grad_norm = 0.0;
    std::string warning;
};

struct LogisticModel {
    std::vector<double> weights; // intercept first, then one per feature
    LogisticDiagnostics diag;

    double decision(std::span<const double> features) const;
    double predict(std::span<const double> features) const; // in (0,1)
};

LogisticModel fit_logistic(const std::vector<std::vector<double>>& rows,
                           const std::vector<int>& labels, double ridge = 1e-6,
                           const std::vector<double>* warm_start = nullptr);

struct MultinomialModel {
    int n_classes = 0;
    // (n_classes-1) rows of (1 + n_features) weights; last class is reference.
    std::vector<std::vector<double>> weights;
    LogisticDiagnostics diag;

    std::vector<double> probs(std::span<const double> features) const;
};

MultinomialModel fit_multinomial(const std::vector<std::vector<double>>& rows,
                                 const std::vector<int>& labels, int n_classes,
                                 double ridge = 1e-6,
                                 const MultinomialModel* warm_start = nullptr);

// ---------------------------------------------------------------------------
// Random forest (bagged trees, per-split feature subsampling)
// ---------------------------------------------------------------------------

struct ForestParams {
    int n_trees = 200;
    int max_depth = 6;
    int min_leaf = 1;
    std::uint64_t seed = 0;
    double feature_frac = 0.0; // candidate features per split; 0 = sqrt(d)
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double rate = 0.0; // leaf click rate
};

struct DecisionTree {
    std::vector<TreeNode> nodes;
    double predict(std::span<const double> features) const;
};

struct ForestModel {
    ForestParams params;
    std::vector<DecisionTree> trees;
    double predict(std::span<const double> features) const; // mean of leaf rates
};

// Rows are canonicalized (sorted) before resampling, so the fit does not
// depend on input row order.
ForestModel fit_forest(const std::vector<std::vector<double>>& rows,
                       const std::vector<int>& labels, const ForestParams& params);

// ---------------------------------------------------------------------------
// Feature designs over pageviews
// ---------------------------------------------------------------------------

enum class Variant { baseline, block, block_cross, full, discovered };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct FeatureSetSpec {
    Variant variant = Variant::full;
    std::vector<std::string> discovered_parents; // required iff variant == discovered
};

// Materializes named columns from a pageview for a given target position,
// under the observed allocation or a counterfactual one. Tokens: a_self,
// top_count, a{j}, x{j}_{k}, d1_x{j}_{k} (zeroed when A_j == A_i, self always
// zero), d2_x{j}_{k} (zeroed when A_j != A_i, self always kept).
class DesignBuilder {
  public:
    DesignBuilder(int m, int p, int position, std::vector<std::string> columns);
    static DesignBuilder for_variant(int m, int p, int position, const FeatureSetSpec& spec);

    std::vector<double> row(const Pageview& pv) const { return row(pv, pv.a); }
    std::vector<double> row(const Pageview& pv, const AllocationRule& a) const;

    bool depends_on_allocation() const;
    const std::vector<std::string>& columns() const { return columns_; }
    int position() const { return position_; }
    int m() const { return m_; }
    int p() const { return p_; }

  private:
    enum class TokenKind { a_self, top_count, alloc, raw, d1, d2 };
    struct Token {
        TokenKind kind;
        int j = 0; // 0-based ad index
        int k = 0; // 0-based feature index
    };
    int m_, p_, position_;
    std::vector<std::string> columns_;
    std::vector<Token> tokens_;
};

// ---------------------------------------------------------------------------
// Outcome regression E[Y_i | A, X] and propensity p(A | X)
// ---------------------------------------------------------------------------

enum class ModelKind { logistic, forest };

std::string model_kind_name(ModelKind k);
ModelKind model_kind_from_name(const std::string& name);

struct FitOptions {
    double ridge = 1e-6;
    int forest_trees = 200;
    int forest_depth = 6;
    int forest_min_leaf = 1;
    double forest_feature_frac = 0.0; // 0 = sqrt(d)
    std::uint64_t seed = 0;
    double smoothing_eps = 0.0; // joint propensity: uniform mixing for unobserved rules
};

class OutcomeModel {
  public:
    OutcomeModel(ModelKind kind, FeatureSetSpec spec, DesignBuilder design);

    double predict(const Pageview& pv) const { return predict(pv, pv.a); }
    double predict(const Pageview& pv, const AllocationRule& a) const;

    bool depends_on_allocation() const { return design_.depends_on_allocation(); }
    int position() const { return design_.position(); }
    ModelKind kind() const { return kind_; }
    const FeatureSetSpec& spec() const { return spec_; }
    const DesignBuilder& design() const { return design_; }
    const LogisticDiagnostics* logistic_diagnostics() const;

    std::string to_json() const;
    static OutcomeModel from_json(const std::string& text);

    // Exposed for fitting; not part of the prediction contract.
    LogisticModel logistic;
    ForestModel forest;

  private:
    ModelKind kind_;
    FeatureSetSpec spec_;
    DesignBuilder design_;
};

OutcomeModel fit_outcome(const Dataset& d, int position, const FeatureSetSpec& spec,
                         ModelKind kind, const FitOptions& opts = {});

enum class PropensityMode { joint, product };

std::string propensity_mode_name(PropensityMode m);
PropensityMode propensity_mode_from_name(const std::string& name);

class PropensityModel {
  public:
    PropensityModel(int m, PropensityMode mode, ModelKind kind);

    // Normalized over the m+1 valid rules, enumerate_valid_rules order.
    std::vector<double> rule_probs(const Pageview& pv) const;
    double rule_prob(const Pageview& pv, const AllocationRule& a) const;
    // The literal per-position product (no renormalization); product mode only.
    double marginal_product(const Pageview& pv, const AllocationRule& a) const;

    int m() const { return m_; }
    PropensityMode mode() const { return mode_; }
    ModelKind kind() const { return kind_; }

    std::string to_json() const;
    static PropensityModel from_json(const std::string& text);

    // Fitting state: joint mode uses `multinomial` (logistic) or `per_rule`
    // one-vs-rest forests; product mode uses m per-position binary models.
    MultinomialModel multinomial;
    std::vector<ForestModel> per_rule;
    std::vector<LogisticModel> per_position_logistic;
    std::vector<ForestModel> per_position_forest;
    double smoothing_eps = 0.0;

  private:
    std::vector<double> flat_features(const Pageview& pv) const;
    int m_;
    PropensityMode mode_;
    ModelKind kind_;
};

// mode=joint fits one multiclass model over valid rules; mode=product fits m
// per-position binary models whose product is renormalized over valid rules.
// A never-observed rule is an error in joint mode unless smoothing_eps > 0.
PropensityModel fit_propensity(const Dataset& d, PropensityMode mode, ModelKind kind,
                               const FitOptions& opts = {});

} // namespace ilab
