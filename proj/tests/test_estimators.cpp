#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ilab/estimators.hpp"
#include "ilab/models.hpp"
#include "ilab/parallel.hpp"
#include "ilab/rng.hpp"
#include "ilab/sem.hpp"

#include <cmath>
#include <numeric>

using namespace ilab;

namespace {

SemConfig demo_config() {
    SemConfig cfg;
    cfg.m = 3;
    cfg.p = 4;
    cfg.lambda_u = 0.4;
    cfg.beta0 = -0.5;
    cfg.delta = {0.3, 0.0, -0.3};
    cfg.delta_top = {0.5, 0.4, 0.3};
    cfg.gamma = {0.7, -0.5, 0.35, 0.0};
    cfg.eta = {-0.4, 0.25, 0.0, 0.4};
    cfg.w_prop = {0.5, -0.3, 0.4, 0.2};
    cfg.seed = 314;
    return cfg;
}

// Intercept-only logistic dressed with allocation columns so the gformula
// precondition (A among the inputs) is satisfied.
OutcomeModel constant_model(int m, int p, int position, double value) {
    FeatureSetSpec spec;
    spec.variant = Variant::full;
    DesignBuilder design = DesignBuilder::for_variant(m, p, position, spec);
    OutcomeModel model(ModelKind::logistic, spec, design);
    model.logistic.weights.assign(design.columns().size() + 1, 0.0);
    model.logistic.weights[0] = std::log(value / (1.0 - value));
    return model;
}

RulePropensityFn true_propensity(const SemConfig& cfg) {
    return [cfg](const Pageview& pv, const AllocationRule& a) {
        return true_rule_probs(cfg, pv.x)[rule_index(a)];
    };
}

OutcomeFn true_outcome(const TrueOutcomeModel& model, int position) {
    return [&model, position](const Pageview& pv, const AllocationRule& a) {
        return model.conditional_mean(pv.x, a, position);
    };
}

Dataset one_rule_dataset(const SemConfig& cfg, std::size_t n, const std::string& rule) {
    Dataset d = simulate(cfg, 12 * n);
    Dataset out;
    out.schema = d.schema;
    out.provenance = d.provenance;
    for (const auto& pv : d.pageviews) {
        if (pv.a.str() == rule) out.pageviews.push_back(pv);
        if (out.pageviews.size() == n) break;
    }
    return out;
}

} // namespace

TEST_CASE("gformula with a constant model returns the constant") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 500);
    OutcomeModel c = constant_model(3, 4, 1, 0.37);
    EffectEstimate est = gformula_mean(d, c, rule_from_string("110"), 1);
    CHECK(est.value == doctest::Approx(0.37).epsilon(1e-12));
    CHECK(est.stderr_ == doctest::Approx(0.0));
    CHECK(est.estimator == "gformula");
}

TEST_CASE("gformula rejects outcome models without allocation inputs") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 200);
    FeatureSetSpec spec;
    spec.variant = Variant::discovered;
    spec.discovered_parents = {"x1_1", "x2_3"}; // raw features only
    OutcomeModel model = fit_outcome(d, 0, spec, ModelKind::logistic);
    CHECK_FALSE(model.depends_on_allocation());
    CHECK_THROWS_AS(gformula_mean(d, model, rule_from_string("100"), 0), std::invalid_argument);
}

TEST_CASE("gformula with the true outcome regression matches the oracle") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 40000);
    TrueOutcomeModel truth(cfg);
    for (const auto& rule : {rule_from_string("111"), rule_from_string("100")}) {
        for (int i : {0, 2}) {
            EffectEstimate est = gformula_mean_fn(d, true_outcome(truth, i), rule, i);
            OracleValue oracle = counterfactual_oracle(cfg, rule, i, 500000);
            CHECK(std::abs(est.value - oracle.psi) <=
                  4.0 * std::hypot(est.stderr_, oracle.mc_se));
        }
    }
}

TEST_CASE("no-homophily stratified identity: true regression, X-only propensity") {
    SemConfig cfg = demo_config();
    cfg.lambda_u = 0.0;
    Dataset d = simulate(cfg, 40000);
    TrueOutcomeModel truth(cfg);
    const auto rule = rule_from_string("110");
    EffectEstimate est = gformula_mean_fn(d, true_outcome(truth, 1), rule, 1);
    OracleValue oracle = counterfactual_oracle(cfg, rule, 1, 500000);
    CHECK(std::abs(est.value - oracle.psi) <= 4.0 * std::hypot(est.stderr_, oracle.mc_se));
}

TEST_CASE("one-rule degenerate dataset: gformula equals the average fitted value") {
    SemConfig cfg = demo_config();
    Dataset d = one_rule_dataset(cfg, 500, "110");
    REQUIRE(d.size() == 500);
    OutcomeModel model = fit_outcome(d, 1, {Variant::full, {}}, ModelKind::logistic);
    EffectEstimate est = gformula_mean(d, model, rule_from_string("110"), 1);
    double avg = 0.0;
    for (const auto& pv : d.pageviews) avg += model.predict(pv);
    avg /= static_cast<double>(d.size());
    CHECK(est.value == doctest::Approx(avg).epsilon(1e-12));
}

TEST_CASE("IPW identities") {
    SemConfig cfg = demo_config();
    cfg.w_prop = {0.0, 0.0, 0.0, 0.0}; // uniform true propensity
    Dataset d = simulate(cfg, 20000);
    const auto rule = rule_from_string("100");
    const int i = 0;

    SUBCASE("uniform propensity: IPW is the scaled stratified mean") {
        EffectEstimate est = ipw_mean_fn(
            d, [&](const Pageview&, const AllocationRule&) { return 0.25; }, rule, i);
        double matched_sum = 0.0;
        std::size_t matched = 0;
        for (const auto& pv : d.pageviews)
            if (pv.a == rule) {
                matched_sum += pv.y[i];
                ++matched;
            }
        const double stratified = matched_sum / static_cast<double>(matched);
        const double scaling =
            4.0 * static_cast<double>(matched) / static_cast<double>(d.size());
        CHECK(est.value == doctest::Approx(scaling * stratified).epsilon(1e-12));
    }

    SUBCASE("unit propensity on a one-rule dataset: IPW is the sample mean") {
        Dataset solo = one_rule_dataset(cfg, 400, "110");
        EffectEstimate est = ipw_mean_fn(
            solo, [](const Pageview&, const AllocationRule&) { return 1.0; },
            rule_from_string("110"), 1);
        double mean = 0.0;
        for (const auto& pv : solo.pageviews) mean += pv.y[1];
        mean /= static_cast<double>(solo.size());
        CHECK(est.value == doctest::Approx(mean).epsilon(1e-12));
    }

    SUBCASE("rule never observed: zero estimate flagged degenerate") {
        Dataset solo = one_rule_dataset(cfg, 400, "110");
        EffectEstimate est = ipw_mean_fn(
            solo, [](const Pageview&, const AllocationRule&) { return 0.5; },
            rule_from_string("000"), 1);
        CHECK(est.value == 0.0);
        CHECK(est.degenerate);
    }
}

TEST_CASE("IPW with true propensities matches the oracle") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 40000);
    const auto rule = rule_from_string("110");
    for (int i : {0, 1, 2}) {
        EffectEstimate est = ipw_mean_fn(d, true_propensity(cfg), rule, i);
        OracleValue oracle = counterfactual_oracle(cfg, rule, i, 500000);
        CHECK(std::abs(est.value - oracle.psi) <= 3.0 * std::hypot(est.stderr_, oracle.mc_se));
    }
}

TEST_CASE("AIPW decompositions and identities") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 20000);
    TrueOutcomeModel truth(cfg);
    const auto rule = rule_from_string("110");
    const int i = 1;

    SUBCASE("AIPW = gformula + mean weighted residual; residuals centered") {
        EffectEstimate aipw = aipw_mean_fn(d, true_outcome(truth, i), true_propensity(cfg), rule, i);
        EffectEstimate gf = gformula_mean_fn(d, true_outcome(truth, i), rule, i);
        double resid = 0.0;
        for (const auto& pv : d.pageviews)
            if (pv.a == rule)
                resid += (pv.y[i] - truth.conditional_mean(pv.x, rule, i)) /
                         std::max(kPropensityClip, true_propensity(cfg)(pv, rule));
        resid /= static_cast<double>(d.size());
        CHECK(aipw.value == doctest::Approx(gf.value + resid).epsilon(1e-12));
        CHECK(std::abs(resid) <= 4.0 * aipw.stderr_);
    }

    SUBCASE("unit propensity on a one-rule dataset: AIPW is the sample mean") {
        Dataset solo = one_rule_dataset(cfg, 400, "110");
        OutcomeModel arbitrary = constant_model(3, 4, 1, 0.9);
        EffectEstimate est = aipw_mean_fn(
            solo, outcome_fn(arbitrary), [](const Pageview&, const AllocationRule&) { return 1.0; },
            rule, i);
        double mean = 0.0;
        for (const auto& pv : solo.pageviews) mean += pv.y[1];
        mean /= static_cast<double>(solo.size());
        CHECK(est.value == doctest::Approx(mean).epsilon(1e-12));
    }

    SUBCASE("zero outcome model: AIPW equals IPW exactly") {
        OutcomeFn zero = [](const Pageview&, const AllocationRule&) { return 0.0; };
        EffectEstimate aipw = aipw_mean_fn(d, zero, true_propensity(cfg), rule, i);
        EffectEstimate ipw = ipw_mean_fn(d, true_propensity(cfg), rule, i);
        CHECK(aipw.value == doctest::Approx(ipw.value).epsilon(1e-12));
    }

    SUBCASE("rule never observed: AIPW degrades to the gformula term") {
        Dataset solo = one_rule_dataset(cfg, 400, "111");
        EffectEstimate aipw =
            aipw_mean_fn(solo, true_outcome(truth, i), true_propensity(cfg),
                         rule_from_string("000"), i);
        EffectEstimate gf = gformula_mean_fn(solo, true_outcome(truth, i),
                                             rule_from_string("000"), i);
        CHECK(aipw.value == doctest::Approx(gf.value).epsilon(1e-12));
        CHECK(aipw.degenerate);
    }
}

TEST_CASE("cross-fitted AIPW with fitted nuisances tracks the oracle") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 30000);
    NuisanceFitters fitters;
    fitters.outcome = [](const Dataset& train, int position) {
        return fit_outcome(train, position, {Variant::full, {}}, ModelKind::logistic);
    };
    fitters.propensity = [](const Dataset& train) {
        return fit_propensity(train, PropensityMode::joint, ModelKind::logistic);
    };
    const auto rule = rule_from_string("100");
    for (int i : {0, 1}) {
        EffectEstimate est = aipw_mean(d, fitters, rule, i, 2, 7);
        OracleValue oracle = counterfactual_oracle(cfg, rule, i, 500000);
        CHECK(std::abs(est.value - oracle.psi) <= 0.02);
        CHECK(est.stderr_ > 0.0);
        CHECK(est.n_used == 30000);
    }
    CHECK_THROWS_AS(aipw_mean(d, fitters, rule, 0, 0), std::invalid_argument);
}

TEST_CASE("estimators are invariant to pageview order") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 8000);
    Dataset shuffled = d;
    Rng rng(55);
    auto perm = rng.permutation(d.size());
    for (std::size_t n = 0; n < d.size(); ++n) shuffled.pageviews[n] = d.pageviews[perm[n]];

    TrueOutcomeModel truth(cfg);
    const auto rule = rule_from_string("110");
    EffectEstimate a1 = aipw_mean_fn(d, true_outcome(truth, 1), true_propensity(cfg), rule, 1);
    EffectEstimate a2 =
        aipw_mean_fn(shuffled, true_outcome(truth, 1), true_propensity(cfg), rule, 1);
    CHECK(a1.value == doctest::Approx(a2.value).epsilon(1e-12));

    NuisanceFitters fitters;
    fitters.outcome = [](const Dataset& train, int position) {
        return fit_outcome(train, position, {Variant::full, {}}, ModelKind::logistic);
    };
    fitters.propensity = [](const Dataset& train) {
        return fit_propensity(train, PropensityMode::joint, ModelKind::logistic);
    };
    EffectEstimate c1 = aipw_mean(d, fitters, rule, 1, 2, 11);
    EffectEstimate c2 = aipw_mean(shuffled, fitters, rule, 1, 2, 11);
    CHECK(c1.value == doctest::Approx(c2.value).epsilon(1e-9));
}

namespace {

RuleMeans table2_position2() {
    // Published counterfactual means for the second ad.
    RuleMeans means;
    auto put = [&](const std::string& rule, double value) {
        EffectEstimate est;
        est.value = value;
        est.estimator = "aipw";
        est.target = "psi[" + rule + "][i=2]";
        means[rule_from_string(rule)] = est;
    };
    put("111", 0.28);
    put("110", 0.32);
    put("100", 0.11);
    put("000", 0.28);
    return means;
}

} // namespace

TEST_CASE("published effect arithmetic reproduces exactly") {
    RuleMeans means = table2_position2();
    const int i = 1; // second ad, 0-based

    EffectEstimate ue = unit_effect(means, i, 1, 0, rule_from_string("100"));
    CHECK(ue.value == doctest::Approx(0.21).epsilon(1e-12));

    EffectEstimate se =
        spillover_effect(means, i, 1, rule_from_string("111"), rule_from_string("100"));
    CHECK(se.value == doctest::Approx(-0.04).epsilon(1e-12));

    EffectEstimate oe = overall_effect(means, i, rule_from_string("111"), rule_from_string("100"));
    CHECK(oe.value == doctest::Approx(0.17).epsilon(1e-12));
    CHECK(oe.value == doctest::Approx(ue.value + se.value).epsilon(1e-12));
}

TEST_CASE("null contrasts are exactly zero") {
    RuleMeans means = table2_position2();
    CHECK(unit_effect(means, 1, 1, 1, rule_from_string("100")).value == 0.0);
    CHECK(spillover_effect(means, 1, 1, rule_from_string("111"), rule_from_string("111")).value ==
          0.0);
    CHECK(overall_effect(means, 1, rule_from_string("110"), rule_from_string("110")).value == 0.0);
}

TEST_CASE("invalid composed rules are rejected by name") {
    RuleMeans means = table2_position2();
    // Setting position 2 to Top under rest (0,0,0) composes (0,1,0).
    CHECK_THROWS_WITH_AS(static_cast<void>(unit_effect(means, 1, 1, 0, rule_from_string("000"))),
                         doctest::Contains("010"), std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(overall_effect(means, 1, AllocationRule({0, 1, 1}),
                                                     rule_from_string("111"))),
                    std::invalid_argument);
}

TEST_CASE("telescoping identity holds for any decomposition") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        RuleMeans means;
        for (const auto& rule : enumerate_valid_rules(3)) {
            EffectEstimate est;
            est.value = rng.uniform01();
            est.target = "psi[" + rule.str() + "]";
            means[rule] = est;
        }
        const auto a = rule_from_string("111"), mid = rule_from_string("110"),
                   b = rule_from_string("100");
        EffectEstimate oe = overall_effect(means, 1, a, b);
        EffectEstimate upper = overall_effect(means, 1, a, mid);
        EffectEstimate lower = overall_effect(means, 1, mid, b);
        CHECK(std::abs(oe.value - (upper.value + lower.value)) <= 1e-12);

        // The paper's decomposition: OE = UE + SE through the same midpoint.
        EffectEstimate ue = unit_effect(means, 1, 1, 0, b);       // (110) vs (100)
        EffectEstimate se = spillover_effect(means, 1, 1, a, b);  // (111) vs (110)
        CHECK(std::abs(oe.value - (ue.value + se.value)) <= 1e-12);
    }
}

TEST_CASE("average overall effect is the position mean") {
    std::vector<RuleMeans> by_position(3);
    for (int i = 0; i < 3; ++i) {
        for (const auto& rule : enumerate_valid_rules(3)) {
            EffectEstimate est;
            est.value = 0.1 * (i + 1) * (rule.top_count() + 1);
            est.target = "psi[" + rule.str() + "][i=" + std::to_string(i + 1) + "]";
            by_position[i][rule] = est;
        }
    }
    const auto a = rule_from_string("111"), b = rule_from_string("000");
    EffectEstimate aoe = average_overall_effect(by_position, a, b);
    double expect = 0.0;
    for (int i = 0; i < 3; ++i)
        expect += (0.1 * (i + 1) * 4 - 0.1 * (i + 1) * 1) / 3.0;
    CHECK(aoe.value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("covariance-aware contrast variance") {
    RuleMeans means = table2_position2();
    means[rule_from_string("110")].stderr_ = 0.02;
    means[rule_from_string("100")].stderr_ = 0.01;
    CovarianceTable cov;
    cov.set("psi[110][i=2]", "psi[100][i=2]", 1e-4);
    EffectEstimate ue = unit_effect(means, 1, 1, 0, rule_from_string("100"), &cov);
    CHECK(ue.stderr_ == doctest::Approx(std::sqrt(4e-4 + 1e-4 - 2e-4)).epsilon(1e-12));
}

TEST_CASE("bootstrap basics") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 10000);

    SUBCASE("constant estimator yields a zero-width interval") {
        auto est = [](const Dataset&) { return std::vector<double>{1.5}; };
        BootstrapResult r = bootstrap(d, est, 60, 0.95, 3);
        CHECK(r.stderr_[0] == 0.0);
        CHECK(r.ci_low[0] == 1.5);
        CHECK(r.ci_high[0] == 1.5);
        CHECK(r.n_dropped == 0);
    }

    SUBCASE("sample-mean stderr matches the closed form") {
        auto est = [](const Dataset& data) {
            double mean = 0.0;
            for (const auto& pv : data.pageviews) mean += pv.y[0];
            return std::vector<double>{mean / static_cast<double>(data.size())};
        };
        BootstrapResult r = bootstrap(d, est, 400, 0.95, 5);
        double rate = est(d)[0];
        const double truth = std::sqrt(rate * (1.0 - rate) / static_cast<double>(d.size()));
        CHECK(std::abs(r.stderr_[0] - truth) / truth < 0.15);
        CHECK(r.ci_low[0] < rate);
        CHECK(r.ci_high[0] > rate);
    }

    SUBCASE("failed resamples are dropped and counted; too many is an error") {
        auto flaky = [](const Dataset& data) {
            long total = 0;
            for (const auto& pv : data.pageviews) total += pv.id;
            if (total % 23 == 0) throw std::runtime_error("synthetic failure");
            return std::vector<double>{0.0};
        };
        BootstrapResult r = bootstrap(d, flaky, 100, 0.95, 7);
        CHECK(r.n_dropped >= 0);
        CHECK(r.n_dropped * 10 <= 100);

        auto broken = [](const Dataset& data) -> std::vector<double> {
            long total = 0;
            for (const auto& pv : data.pageviews) total += pv.id;
            if (total % 23 != 0) throw std::runtime_error("synthetic failure");
            return {0.0};
        };
        CHECK_THROWS_AS(bootstrap(d, broken, 100, 0.95, 7), std::runtime_error);
    }

    SUBCASE("covariance across targets is reported") {
        auto est = [](const Dataset& data) {
            double y0 = 0.0, y01 = 0.0;
            for (const auto& pv : data.pageviews) {
                y0 += pv.y[0];
                y01 += pv.y[0] + pv.y[1];
            }
            const double n = static_cast<double>(data.size());
            return std::vector<double>{y0 / n, y01 / n};
        };
        BootstrapResult r = bootstrap(d, est, 200, 0.95, 11);
        CHECK(r.covariance[0][1] > 0.0);
        CHECK(r.covariance[0][1] == doctest::Approx(r.covariance[1][0]));
    }

    SUBCASE("fewer than 50 resamples is rejected") {
        auto est = [](const Dataset&) { return std::vector<double>{0.0}; };
        CHECK_THROWS_AS(bootstrap(d, est, 49, 0.95, 1), std::invalid_argument);
    }
}

TEST_CASE("bootstrap is deterministic across worker counts") {
    SemConfig cfg = demo_config();
    Dataset d = simulate(cfg, 3000);
    auto est = [](const Dataset& data) {
        double mean = 0.0;
        for (const auto& pv : data.pageviews) mean += pv.y[2];
        return std::vector<double>{mean / static_cast<double>(data.size())};
    };
    set_max_threads(1);
    BootstrapResult r1 = bootstrap(d, est, 80, 0.95, 13);
    set_max_threads(2);
    BootstrapResult r2 = bootstrap(d, est, 80, 0.95, 13);
    set_max_threads(0);
    CHECK(r1.stderr_[0] == r2.stderr_[0]);
    CHECK(r1.ci_low[0] == r2.ci_low[0]);
    CHECK(r1.ci_high[0] == r2.ci_high[0]);
}
