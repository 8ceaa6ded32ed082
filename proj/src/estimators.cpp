#include "ilab/estimators.hpp"

#include "ilab/parallel.hpp"
#include "ilab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ilab {

namespace {

// Floor-only: a denominator near 1 is harmless and the exact estimator
// identities on degenerate one-rule designs rely on p = 1 staying 1.
double clip_propensity(double p) { return std::max(kPropensityClip, p); }

void check_target(const Dataset& d, const AllocationRule& a, int position) {
    if (d.pageviews.empty()) throw std::invalid_argument("estimator: empty dataset");
    if (!a.valid()) throw std::invalid_argument("estimator: invalid rule " + a.str());
    if (a.size() != d.m()) throw std::invalid_argument("estimator: rule length mismatch");
    if (position < 0 || position >= d.m())
        throw std::invalid_argument("estimator: position out of range");
}

EffectEstimate from_contributions(const std::vector<double>& contrib, const std::string& name,
                                  const std::string& target) {
    const double n = static_cast<double>(contrib.size());
    double mean = std::accumulate(contrib.begin(), contrib.end(), 0.0) / n;
    double ss = 0.0;
    for (double c : contrib) ss += (c - mean) * (c - mean);
    const double se = n > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    EffectEstimate est;
    est.value = mean;
    est.stderr_ = se;
    est.ci_low = mean - 1.959963984540054 * se;
    est.ci_high = mean + 1.959963984540054 * se;
    est.estimator = name;
    est.target = target;
    est.n_used = static_cast<long>(contrib.size());
    return est;
}

std::string target_str(const AllocationRule& a, int position) {
    return "psi[" + a.str() + "][i=" + std::to_string(position + 1) + "]";
}

} // namespace

OutcomeFn outcome_fn(const OutcomeModel& model) {
    return [&model](const Pageview& pv, const AllocationRule& a) { return model.predict(pv, a); };
}

RulePropensityFn propensity_fn(const PropensityModel& model) {
    return
        [&model](const Pageview& pv, const AllocationRule& a) { return model.rule_prob(pv, a); };
}

RulePropensityFn propensity_fn_product_literal(const PropensityModel& model) {
    return [&model](const Pageview& pv, const AllocationRule& a) {
        return model.marginal_product(pv, a);
    };
}

EffectEstimate gformula_mean_fn(const Dataset& d, const OutcomeFn& mu, const AllocationRule& a,
                                int position) {
    check_target(d, a, position);
    std::vector<double> contrib(d.size());
    for (std::size_t n = 0; n < d.size(); ++n) contrib[n] = mu(d.pageviews[n], a);
    return from_contributions(contrib, "gformula", target_str(a, position));
}

EffectEstimate gformula_mean(const Dataset& d, const OutcomeModel& model, const AllocationRule& a,
                             int position) {
    if (!model.depends_on_allocation())
        throw std::invalid_argument(
            "gformula_mean: outcome model has no allocation-dependent inputs");
    if (model.position() != position)
        throw std::invalid_argument("gformula_mean: model was fit for a different position");
    return gformula_mean_fn(d, outcome_fn(model), a, position);
}

EffectEstimate ipw_mean_fn(const Dataset& d, const RulePropensityFn& pi, const AllocationRule& a,
                           int position) {
    check_target(d, a, position);
    std::vector<double> contrib(d.size(), 0.0);
    std::size_t matched = 0;
    for (std::size_t n = 0; n < d.size(); ++n) {
        const Pageview& pv = d.pageviews[n];
        if (pv.a == a) {
            contrib[n] = pv.y[position] / clip_propensity(pi(pv, a));
            ++matched;
        }
    }
    EffectEstimate est = from_contributions(contrib, "ipw", target_str(a, position));
    if (matched == 0) {
        est.value = 0.0;
        est.degenerate = true;
    }
    return est;
}

EffectEstimate ipw_mean(const Dataset& d, const PropensityModel& model, const AllocationRule& a,
                        int position) {
    return ipw_mean_fn(d, propensity_fn(model), a, position);
}

EffectEstimate aipw_mean_fn(const Dataset& d, const OutcomeFn& mu, const RulePropensityFn& pi,
                            const AllocationRule& a, int position) {
    check_target(d, a, position);
    std::vector<double> contrib(d.size());
    std::size_t matched = 0;
    for (std::size_t n = 0; n < d.size(); ++n) {
        const Pageview& pv = d.pageviews[n];
        const double mu_hat = mu(pv, a);
        double c = mu_hat;
        if (pv.a == a) {
            c += (pv.y[position] - mu_hat) / clip_propensity(pi(pv, a));
            ++matched;
        }
        contrib[n] = c;
    }
    EffectEstimate est = from_contributions(contrib, "aipw", target_str(a, position));
    est.degenerate = matched == 0;
    return est;
}

EffectEstimate aipw_mean_fitted(const Dataset& d, const OutcomeModel& outcome,
                                const PropensityModel& propensity, const AllocationRule& a,
                                int position) {
    if (!outcome.depends_on_allocation())
        throw std::invalid_argument("aipw: outcome model has no allocation-dependent inputs");
    if (outcome.position() != position)
        throw std::invalid_argument("aipw: outcome model was fit for a different position");
    return aipw_mean_fn(d, outcome_fn(outcome), propensity_fn(propensity), a, position);
}

namespace {

std::vector<int> fold_assignment(const Dataset& d, int k_folds, std::uint64_t fold_seed) {
    std::vector<int> fold(d.size());
    for (std::size_t n = 0; n < d.size(); ++n) {
        const std::uint64_t h = mix64(fold_seed ^ mix64(static_cast<std::uint64_t>(
                                          d.pageviews[n].id) + 0x51DEB00CULL));
        fold[n] = static_cast<int>(h % static_cast<std::uint64_t>(k_folds));
    }
    return fold;
}

} // namespace

std::vector<std::vector<EffectEstimate>> aipw_mean_table(const Dataset& d,
                                                         const NuisanceFitters& fitters,
                                                         const std::vector<AllocationRule>& rules,
                                                         int k_folds, std::uint64_t fold_seed) {
    if (d.pageviews.empty()) throw std::invalid_argument("aipw_mean_table: empty dataset");
    if (rules.empty()) throw std::invalid_argument("aipw_mean_table: no rules");
    if (k_folds < 1) throw std::invalid_argument("aipw_mean_table: k_folds must be >= 1");
    const int m = d.m();
    for (const auto& rule : rules) check_target(d, rule, 0);

    const std::vector<int> fold =
        k_folds == 1 ? std::vector<int>(d.size(), -1) : fold_assignment(d, k_folds, fold_seed);

    // contrib[rule][position][n]
    std::vector<std::vector<std::vector<double>>> contrib(
        rules.size(), std::vector<std::vector<double>>(m, std::vector<double>(d.size(), 0.0)));
    std::vector<std::vector<std::size_t>> matched(rules.size(), std::vector<std::size_t>(m, 0));

    for (int f = (k_folds == 1 ? -1 : 0); f < (k_folds == 1 ? 0 : k_folds); ++f) {
        Dataset train;
        const Dataset* fit_on = &d;
        if (k_folds > 1) {
            train.schema = d.schema;
            train.provenance = d.provenance;
            for (std::size_t n = 0; n < d.size(); ++n)
                if (fold[n] != f) train.pageviews.push_back(d.pageviews[n]);
            if (train.pageviews.empty())
                throw std::runtime_error("aipw_mean_table: empty training fold; reduce k_folds");
            fit_on = &train;
        }
        PropensityModel propensity = fitters.propensity(*fit_on);
        for (int i = 0; i < m; ++i) {
            OutcomeModel outcome = fitters.outcome(*fit_on, i);
            if (!outcome.depends_on_allocation())
                throw std::invalid_argument(
                    "aipw: outcome model has no allocation-dependent inputs");
            for (std::size_t n = 0; n < d.size(); ++n) {
                if (fold[n] != f) continue;
                const Pageview& pv = d.pageviews[n];
                for (std::size_t r = 0; r < rules.size(); ++r) {
                    const double mu_hat = outcome.predict(pv, rules[r]);
                    double c = mu_hat;
                    if (pv.a == rules[r]) {
                        c += (pv.y[i] - mu_hat) /
                             clip_propensity(propensity.rule_prob(pv, rules[r]));
                        ++matched[r][i];
                    }
                    contrib[r][i][n] = c;
                }
            }
        }
    }

    std::vector<std::vector<EffectEstimate>> out(rules.size(),
                                                 std::vector<EffectEstimate>(m));
    for (std::size_t r = 0; r < rules.size(); ++r)
        for (int i = 0; i < m; ++i) {
            out[r][i] = from_contributions(contrib[r][i], "aipw", target_str(rules[r], i));
            out[r][i].degenerate = matched[r][i] == 0;
        }
    return out;
}

EffectEstimate aipw_mean(const Dataset& d, const NuisanceFitters& fitters,
                         const AllocationRule& a, int position, int k_folds,
                         std::uint64_t fold_seed) {
    check_target(d, a, position);
    if (k_folds < 1) throw std::invalid_argument("aipw_mean: k_folds must be >= 1");

    if (k_folds == 1) {
        OutcomeModel outcome = fitters.outcome(d, position);
        PropensityModel propensity = fitters.propensity(d);
        return aipw_mean_fitted(d, outcome, propensity, a, position);
    }

    const std::vector<int> fold = fold_assignment(d, k_folds, fold_seed);
    std::vector<double> contrib(d.size(), 0.0);
    std::size_t matched = 0;
    for (int f = 0; f < k_folds; ++f) {
        Dataset train;
        train.schema = d.schema;
        train.provenance = d.provenance;
        for (std::size_t n = 0; n < d.size(); ++n)
            if (fold[n] != f) train.pageviews.push_back(d.pageviews[n]);
        if (train.pageviews.empty())
            throw std::runtime_error("aipw_mean: empty training fold; reduce k_folds");
        OutcomeModel outcome = fitters.outcome(train, position);
        if (!outcome.depends_on_allocation())
            throw std::invalid_argument("aipw: outcome model has no allocation-dependent inputs");
        PropensityModel propensity = fitters.propensity(train);
        for (std::size_t n = 0; n < d.size(); ++n) {
            if (fold[n] != f) continue;
            const Pageview& pv = d.pageviews[n];
            const double mu_hat = outcome.predict(pv, a);
            double c = mu_hat;
            if (pv.a == a) {
                c += (pv.y[position] - mu_hat) / clip_propensity(propensity.rule_prob(pv, a));
                ++matched;
            }
            contrib[n] = c;
        }
    }
    EffectEstimate est = from_contributions(contrib, "aipw", target_str(a, position));
    est.degenerate = matched == 0;
    return est;
}

// ---------------------------------------------------------------------------
// Effects
// ---------------------------------------------------------------------------

double CovarianceTable::get(const std::string& a, const std::string& b) const {
    auto it = entries.find({a, b});
    if (it != entries.end()) return it->second;
    it = entries.find({b, a});
    return it != entries.end() ? it->second : 0.0;
}

void CovarianceTable::set(const std::string& a, const std::string& b, double v) {
    entries[{a, b}] = v;
}

namespace {

const EffectEstimate& lookup_mean(const RuleMeans& means, const AllocationRule& rule,
                                  const std::string& who) {
    auto it = means.find(rule);
    if (it == means.end())
        throw std::invalid_argument(who + ": no mean estimate for rule " + rule.str());
    return it->second;
}

EffectEstimate contrast(const EffectEstimate& ea, const EffectEstimate& eb,
                        const CovarianceTable* cov, const std::string& target) {
    EffectEstimate out;
    out.value = ea.value - eb.value;
    double var = ea.stderr_ * ea.stderr_ + eb.stderr_ * eb.stderr_;
    if (cov) var -= 2.0 * cov->get(ea.target, eb.target);
    out.stderr_ = std::sqrt(std::max(0.0, var));
    out.ci_low = out.value - 1.959963984540054 * out.stderr_;
    out.ci_high = out.value + 1.959963984540054 * out.stderr_;
    out.estimator = ea.estimator == eb.estimator ? ea.estimator : "mixed";
    out.target = target;
    out.n_used = std::min(ea.n_used, eb.n_used);
    out.degenerate = ea.degenerate || eb.degenerate;
    return out;
}

AllocationRule compose_rule(const AllocationRule& rest, int position, int block,
                            const std::string& who) {
    if (block != 0 && block != 1)
        throw std::invalid_argument(who + ": block must be 0 or 1");
    AllocationRule rule = rest;
    if (position < 0 || position >= rule.size())
        throw std::invalid_argument(who + ": position out of range");
    rule.bits[position] = block;
    if (!rule.valid())
        throw std::invalid_argument(who + ": composed rule " + rule.str() +
                                    " violates position monotonicity");
    return rule;
}

} // namespace

EffectEstimate unit_effect(const RuleMeans& means, int position, int block_a, int block_b,
                           const AllocationRule& rest, const CovarianceTable* cov) {
    const AllocationRule ra = compose_rule(rest, position, block_a, "unit_effect");
    const AllocationRule rb = compose_rule(rest, position, block_b, "unit_effect");
    const std::string target = "UE[i=" + std::to_string(position + 1) + "," +
                               std::to_string(block_a) + "vs" + std::to_string(block_b) +
                               ",rest=" + rest.str() + "]";
    return contrast(lookup_mean(means, ra, "unit_effect"), lookup_mean(means, rb, "unit_effect"),
                    cov, target);
}

EffectEstimate spillover_effect(const RuleMeans& means, int position, int block,
                                const AllocationRule& rest_a, const AllocationRule& rest_b,
                                const CovarianceTable* cov) {
    const AllocationRule ra = compose_rule(rest_a, position, block, "spillover_effect");
    const AllocationRule rb = compose_rule(rest_b, position, block, "spillover_effect");
    const std::string target = "SE[i=" + std::to_string(position + 1) + ",block=" +
                               std::to_string(block) + "," + ra.str() + "vs" + rb.str() + "]";
    return contrast(lookup_mean(means, ra, "spillover_effect"),
                    lookup_mean(means, rb, "spillover_effect"), cov, target);
}

EffectEstimate overall_effect(const RuleMeans& means, int position, const AllocationRule& a,
                              const AllocationRule& b, const CovarianceTable* cov) {
    if (!a.valid()) throw std::invalid_argument("overall_effect: invalid rule " + a.str());
    if (!b.valid()) throw std::invalid_argument("overall_effect: invalid rule " + b.str());
    const std::string target =
        "OE[i=" + std::to_string(position + 1) + "," + a.str() + "vs" + b.str() + "]";
    return contrast(lookup_mean(means, a, "overall_effect"),
                    lookup_mean(means, b, "overall_effect"), cov, target);
}

EffectEstimate average_overall_effect(const std::vector<RuleMeans>& means_by_position,
                                      const AllocationRule& a, const AllocationRule& b,
                                      const CovarianceTable* cov) {
    if (means_by_position.empty())
        throw std::invalid_argument("average_overall_effect: no positions");
    const double m = static_cast<double>(means_by_position.size());
    EffectEstimate out;
    double var = 0.0;
    long n_used = 0;
    for (std::size_t i = 0; i < means_by_position.size(); ++i) {
        EffectEstimate oe =
            overall_effect(means_by_position[i], static_cast<int>(i), a, b, cov);
        out.value += oe.value / m;
        var += oe.stderr_ * oe.stderr_ / (m * m); // cross-position covariance not tracked
        n_used = std::max(n_used, oe.n_used);
        out.degenerate = out.degenerate || oe.degenerate;
        out.estimator = oe.estimator;
    }
    out.stderr_ = std::sqrt(var);
    out.ci_low = out.value - 1.959963984540054 * out.stderr_;
    out.ci_high = out.value + 1.959963984540054 * out.stderr_;
    out.target = "AOE[" + a.str() + "vs" + b.str() + "]";
    out.n_used = n_used;
    return out;
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

namespace {

double percentile(std::vector<double> sorted, double q) {
    // Linear interpolation between order statistics (type 7).
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double h = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(n - 1, lo + 1);
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

} // namespace

BootstrapResult bootstrap(const Dataset& d,
                          const std::function<std::vector<double>(const Dataset&)>& estimator,
                          int n_resamples, double level, std::uint64_t seed) {
    if (n_resamples < 50) throw std::invalid_argument("bootstrap: need at least 50 resamples");
    if (level <= 0.0 || level >= 1.0) throw std::invalid_argument("bootstrap: bad level");
    if (d.pageviews.empty()) throw std::invalid_argument("bootstrap: empty dataset");

    BootstrapResult out;
    out.point = estimator(d);
    const std::size_t n_targets = out.point.size();
    const std::size_t n = d.size();

    std::vector<std::vector<double>> draws(n_resamples);
    std::vector<char> ok(n_resamples, 0);
    const Rng root = Rng(seed).derive(0xB007);
    parallel_for(static_cast<std::size_t>(n_resamples), [&](std::size_t b) {
        Rng rng = root.derive(b);
        Dataset resample;
        resample.schema = d.schema;
        resample.provenance = d.provenance;
        resample.pageviews.reserve(n);
        for (std::size_t t = 0; t < n; ++t)
            resample.pageviews.push_back(d.pageviews[rng.uniform_below(n)]);
        try {
            std::vector<double> value = estimator(resample);
            if (value.size() != n_targets)
                throw std::runtime_error("bootstrap: estimator changed target count");
            draws[b] = std::move(value);
            ok[b] = 1;
        } catch (const std::exception&) {
            ok[b] = 0; // dropped, counted below
        }
    });

    std::vector<std::vector<double>> kept;
    for (int b = 0; b < n_resamples; ++b)
        if (ok[b]) kept.push_back(std::move(draws[b]));
    out.n_resamples = static_cast<int>(kept.size());
    out.n_dropped = n_resamples - out.n_resamples;
    if (out.n_dropped * 10 > n_resamples)
        throw std::runtime_error("bootstrap: more than 10% of resamples failed (" +
                                 std::to_string(out.n_dropped) + "/" +
                                 std::to_string(n_resamples) + ")");
    if (kept.empty()) throw std::runtime_error("bootstrap: all resamples failed");

    const double nb = static_cast<double>(kept.size());
    std::vector<double> mean(n_targets, 0.0);
    for (const auto& row : kept)
        for (std::size_t t = 0; t < n_targets; ++t) mean[t] += row[t];
    for (std::size_t t = 0; t < n_targets; ++t) mean[t] /= nb;

    out.covariance.assign(n_targets, std::vector<double>(n_targets, 0.0));
    for (const auto& row : kept)
        for (std::size_t t1 = 0; t1 < n_targets; ++t1)
            for (std::size_t t2 = 0; t2 < n_targets; ++t2)
                out.covariance[t1][t2] +=
                    (row[t1] - mean[t1]) * (row[t2] - mean[t2]) / std::max(1.0, nb - 1.0);

    out.stderr_.resize(n_targets);
    out.ci_low.resize(n_targets);
    out.ci_high.resize(n_targets);
    const double alpha = 1.0 - level;
    for (std::size_t t = 0; t < n_targets; ++t) {
        out.stderr_[t] = std::sqrt(out.covariance[t][t]);
        std::vector<double> values(kept.size());
        for (std::size_t b = 0; b < kept.size(); ++b) values[b] = kept[b][t];
        std::sort(values.begin(), values.end());
        out.ci_low[t] = percentile(values, alpha / 2.0);
        out.ci_high[t] = percentile(values, 1.0 - alpha / 2.0);
    }
    return out;
}

} // namespace ilab
