#pragma once

#include "ilab/allocation.hpp"
#include "ilab/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace ilab {

// All structural-equation parameters. The outcome law for ad i under rule a:
//   logit P(Y_i = 1) = beta0 + delta[i] + a_i * delta_top[i] + lambda_u * U
//                      + gamma_self . X_i
//                      + sum_j [ I(a_j == a_i) gamma . X_j + I(a_j != a_i) eta . X_j ]
// U ~ N(0,1), C = U + sigma_c * eps, X_i = C * basis_i + sigma_x * eps-vector.
// Rules are drawn from a softmax over the m+1 valid rules mixed with a
// uniform floor so every rule has probability >= epsilon_pos.
struct SemConfig {
    int m = 3;
    int p = 4;
    double lambda_u = 0.0;
    double beta0 = 0.0;
    std::vector<double> delta;      // length m
    std::vector<double> delta_top;  // length m; extra Top-block lift (zeros = block-free)
    std::vector<double> gamma;      // length p, same-block coefficients
    std::vector<double> eta;        // length p, cross-block coefficients
    std::vector<double> gamma_self; // length p; own-ad term independent of blocks
    std::vector<double> w_prop;     // length p, rule-score weights
    double sigma_c = 1.0;
    double sigma_x = 1.0;
    double epsilon_pos = 0.02;
    std::uint64_t seed = 0;

    void validate() const; // throws invalid_argument
    std::string to_json() const;
    static SemConfig from_json(const std::string& text);
    std::string digest() const;

    // Feature coordinate the query signal C loads on: the last one, shared
    // by all ads. The remaining coordinates are ad-idiosyncratic noise, so
    // interference coefficients on them are decoupled from the latent layer.
    int basis_index(int i) const {
        (void)i;
        return p - 1;
    }
};

struct Pageview {
    long id = 0;
    std::vector<std::vector<double>> x; // m rows of p features
    AllocationRule a;
    std::vector<int> y; // length m, {0,1}
};

struct Dataset {
    std::vector<Pageview> pageviews;
    std::vector<std::string> schema; // feature column names x{i}_{k}
    std::string provenance;          // config digest or "external"

    int m() const;
    int p() const;
    std::size_t size() const { return pageviews.size(); }

    std::string to_csv() const;
    static Dataset from_csv(const std::string& text);
};

std::vector<std::string> dataset_schema(int m, int p);

double sigmoid(double t);

// Linear predictor / Bernoulli mean of Y_i given latents and an allocation.
double outcome_predictor(const SemConfig& cfg, double u,
                         const std::vector<std::vector<double>>& x, const AllocationRule& a,
                         int position);
double outcome_probability(const SemConfig& cfg, double u,
                           const std::vector<std::vector<double>>& x, const AllocationRule& a,
                           int position);

// p(A = a | X) for every valid rule, in enumerate_valid_rules order.
std::vector<double> true_rule_probs(const SemConfig& cfg,
                                    const std::vector<std::vector<double>>& x);

struct PageviewTrace {
    double u = 0.0;
    double c = 0.0;
    std::vector<double> click_prob; // Bernoulli mean used for each Y_i
    std::vector<double> rule_probs; // propensity vector the rule was drawn from
};

struct SimulationResult {
    Dataset data;
    std::vector<PageviewTrace> traces;
};

Dataset simulate(const SemConfig& cfg, std::size_t n_pageviews);
SimulationResult simulate_traced(const SemConfig& cfg, std::size_t n_pageviews);

struct OracleValue {
    double psi = 0.0;
    double mc_se = 0.0;
    std::size_t n_draws = 0;
};

// Ground-truth counterfactual mean E[Y_i(a)] by Monte Carlo over the
// unmutilated (U, C, X) laws with A set to `a`. Rao-Blackwellized: averages
// the Bernoulli mean rather than sampled clicks. Draws are indexed from
// draw_offset, sharing one stream across rules (common random numbers), so
// contrasts of symmetric rules are exactly zero and disjoint draw ranges are
// independent halves.
OracleValue counterfactual_oracle(const SemConfig& cfg, const AllocationRule& a, int position,
                                  std::size_t n_draws, std::size_t draw_offset = 0);
std::vector<OracleValue> oracle_all_positions(const SemConfig& cfg, const AllocationRule& a,
                                              std::size_t n_draws, std::size_t draw_offset = 0);

enum class EffectKind { unit, spillover, overall, average_overall };

std::string effect_kind_name(EffectKind k);

struct TrueEffectRow {
    EffectKind kind;
    int position; // 0-based; -1 for average_overall
    AllocationRule rule_a;
    AllocationRule rule_b;
    double value;
    double mc_se;
};

// UE/SE/OE contrasts over all ordered pairs of valid rules for one position.
std::vector<TrueEffectRow> ground_truth_effects(const SemConfig& cfg, int position,
                                                std::size_t n_draws);

// Same classification over a precomputed psi table (rules in
// enumerate_valid_rules order; psi_by_rule[r][i]).
std::vector<TrueEffectRow> effects_from_psi(const std::vector<AllocationRule>& rules,
                                            const std::vector<std::vector<OracleValue>>& psi_by_rule,
                                            int position);

// The true outcome regression E[Y_i | A = a, X = x]: integrates the latent U
// posterior given X (linear-Gaussian algebra + Gauss-Hermite quadrature).
class TrueOutcomeModel {
  public:
    explicit TrueOutcomeModel(SemConfig cfg, int quadrature_order = 61);
    double conditional_mean(const std::vector<std::vector<double>>& x, const AllocationRule& a,
                            int position) const;
    // Posterior moments of U | X, exposed for tests.
    void posterior_u(const std::vector<std::vector<double>>& x, double* mean, double* var) const;

  private:
    SemConfig cfg_;
    std::vector<double> gh_nodes_;
    std::vector<double> gh_weights_;
};

} // namespace ilab
