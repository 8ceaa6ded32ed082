#pragma once

#include "ilab/models.hpp"
#include "ilab/sem.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ilab {

// Propensities are clipped to this floor before entering a denominator.
constexpr double kPropensityClip = 1e-3;

struct EffectEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    double level = 0.95;
    std::string estimator; // gformula | ipw | aipw | contrast provenance
    std::string target;
    long n_used = 0;
    bool degenerate = false; // e.g. rule never observed
};

using OutcomeFn = std::function<double(const Pageview&, const AllocationRule&)>;
using RulePropensityFn = std::function<double(const Pageview&, const AllocationRule&)>;

OutcomeFn outcome_fn(const OutcomeModel& model);
RulePropensityFn propensity_fn(const PropensityModel& model);
// Eq-(4)-literal product-of-marginals denominator (product-mode model).
RulePropensityFn propensity_fn_product_literal(const PropensityModel& model);

// Empirical g-formula: mean over pageviews of mu(a, X_n).
EffectEstimate gformula_mean(const Dataset& d, const OutcomeModel& model,
                             const AllocationRule& a, int position);
EffectEstimate gformula_mean_fn(const Dataset& d, const OutcomeFn& mu, const AllocationRule& a,
                                int position);

// Horvitz-Thompson style inverse probability weighting.
EffectEstimate ipw_mean(const Dataset& d, const PropensityModel& model, const AllocationRule& a,
                        int position);
EffectEstimate ipw_mean_fn(const Dataset& d, const RulePropensityFn& pi, const AllocationRule& a,
                           int position);

// Doubly-robust AIPW with prefit nuisances (no sample splitting).
EffectEstimate aipw_mean_fitted(const Dataset& d, const OutcomeModel& outcome,
                                const PropensityModel& propensity, const AllocationRule& a,
                                int position);
EffectEstimate aipw_mean_fn(const Dataset& d, const OutcomeFn& mu, const RulePropensityFn& pi,
                            const AllocationRule& a, int position);

// Nuisance training closures for cross-fitting; `outcome` must fit the model
// for the requested position.
struct NuisanceFitters {
    std::function<OutcomeModel(const Dataset&, int position)> outcome;
    std::function<PropensityModel(const Dataset&)> propensity;
};

// k_folds == 1 fits in-sample; k_folds > 1 cross-fits with folds assigned by
// hashed pageview id (order-invariant).
EffectEstimate aipw_mean(const Dataset& d, const NuisanceFitters& fitters,
                         const AllocationRule& a, int position, int k_folds,
                         std::uint64_t fold_seed = 0);

// Every (rule, position) target from one pass of nuisance fits per fold;
// result indexed [rule][position] in the given rule order.
std::vector<std::vector<EffectEstimate>> aipw_mean_table(const Dataset& d,
                                                         const NuisanceFitters& fitters,
                                                         const std::vector<AllocationRule>& rules,
                                                         int k_folds,
                                                         std::uint64_t fold_seed = 0);

// ---------------------------------------------------------------------------
// Effects (contrasts of counterfactual means)
// ---------------------------------------------------------------------------

using RuleMeans = std::map<AllocationRule, EffectEstimate>;

// Optional covariance between mean estimates, keyed by rule strings.
struct CovarianceTable {
    std::map<std::pair<std::string, std::string>, double> entries;
    double get(const std::string& a, const std::string& b) const;
    void set(const std::string& a, const std::string& b, double v);
};

// E[Y_i(a', rest_-i)] - E[Y_i(a'', rest_-i)]; both composed rules must be valid.
EffectEstimate unit_effect(const RuleMeans& means, int position, int block_a, int block_b,
                           const AllocationRule& rest, const CovarianceTable* cov = nullptr);

// E[Y_i(a, rest'_-i)] - E[Y_i(a, rest''_-i)].
EffectEstimate spillover_effect(const RuleMeans& means, int position, int block,
                                const AllocationRule& rest_a, const AllocationRule& rest_b,
                                const CovarianceTable* cov = nullptr);

EffectEstimate overall_effect(const RuleMeans& means, int position, const AllocationRule& a,
                              const AllocationRule& b, const CovarianceTable* cov = nullptr);

// Mean over positions of OE_i(a, b); `means_by_position` is indexed by i.
EffectEstimate average_overall_effect(const std::vector<RuleMeans>& means_by_position,
                                      const AllocationRule& a, const AllocationRule& b,
                                      const CovarianceTable* cov = nullptr);

// ---------------------------------------------------------------------------
// Nonparametric bootstrap over whole pageviews
// ---------------------------------------------------------------------------

struct BootstrapResult {
    std::vector<double> point;  // estimator on the original data
    std::vector<double> stderr_;
    std::vector<double> ci_low;
    std::vector<double> ci_high;
    std::vector<std::vector<double>> covariance;
    int n_resamples = 0;
    int n_dropped = 0;
};

// estimator maps a dataset to a fixed-length target vector and is refit per
// resample. Resamples that throw are dropped (error if > 10% drop).
BootstrapResult bootstrap(const Dataset& d,
                          const std::function<std::vector<double>(const Dataset&)>& estimator,
                          int n_resamples, double level, std::uint64_t seed);

} // namespace ilab
