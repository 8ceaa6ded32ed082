#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "ilab/discovery.hpp"
#include "ilab/models.hpp"
#include "ilab/preprocess.hpp"
#include "ilab/rng.hpp"
#include "ilab/sem.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace ilab;

namespace {

DataTable gaussian_table(Rng& rng, std::size_t n,
                         const std::vector<std::string>& names,
                         const std::function<std::vector<double>(Rng&)>& draw) {
    DataTable t;
    t.columns = names;
    for (std::size_t r = 0; r < n; ++r) t.rows.push_back(draw(rng));
    return t;
}

// Sparse-coefficient config used for recovery checks: gamma acts on features
// 1 and 2, eta on feature 3 only; the propensity leans on the query-loaded
// feature 4 so allocation bits stay blockable with small conditioning sets.
SemConfig sparse_config() {
    SemConfig cfg;
    cfg.m = 3;
    cfg.p = 4;
    cfg.lambda_u = 0.0;
    cfg.beta0 = -0.1;
    cfg.delta = {0.15, 0.0, -0.15};
    cfg.gamma = {0.5, -0.45, 0.0, 0.0};
    cfg.eta = {0.0, 0.0, 0.5, 0.0};
    cfg.w_prop = {0.1, -0.08, 0.08, 0.3};
    cfg.sigma_x = 1.0;
    cfg.seed = 4242;
    return cfg;
}

std::set<std::string> true_parent_columns(int m, int target /*0-based*/) {
    std::set<std::string> truth;
    for (int j = 1; j <= m; ++j) {
        truth.insert("d2_x" + std::to_string(j) + "_1");
        truth.insert("d2_x" + std::to_string(j) + "_2");
        if (j != target + 1) truth.insert("d1_x" + std::to_string(j) + "_3");
    }
    return truth;
}

} // namespace

TEST_CASE("fisher-z null calibration") {
    Rng rng(100);
    int rejects = 0;
    const int trials = 400;
    const double alpha = 0.05;
    for (int t = 0; t < trials; ++t) {
        DataTable tab = gaussian_table(rng, 2000, {"x", "y"}, [](Rng& r) {
            return std::vector<double>{r.normal(), r.normal()};
        });
        if (!fisher_z_test(tab, "x", "y", {}, alpha).independent) ++rejects;
    }
    const double rate = static_cast<double>(rejects) / trials;
    CHECK(rate >= alpha / 2.0);
    CHECK(rate <= 2.0 * alpha);
}

TEST_CASE("fisher-z detects near-deterministic dependence") {
    Rng rng(7);
    DataTable tab = gaussian_table(rng, 5000, {"x", "y"}, [](Rng& r) {
        const double x = r.normal();
        return std::vector<double>{x, x + 0.01 * r.normal()};
    });
    CiTestResult res = fisher_z_test(tab, "x", "y", {}, 0.05);
    CHECK(res.p_value < 1e-10);
    CHECK_FALSE(res.independent);
}

TEST_CASE("fisher-z separates a chain when conditioning on the middle") {
    Rng rng(9);
    DataTable tab = gaussian_table(rng, 10000, {"x", "z", "y"}, [](Rng& r) {
        const double x = r.normal();
        const double z = x + 0.5 * r.normal();
        const double y = z + 0.5 * r.normal();
        return std::vector<double>{x, z, y};
    });
    CHECK_FALSE(fisher_z_test(tab, "x", "y", {}, 0.01).independent);
    CHECK(fisher_z_test(tab, "x", "y", {"z"}, 0.01).independent);
}

TEST_CASE("fisher-z statistic is symmetric in its arguments") {
    Rng rng(13);
    DataTable tab = gaussian_table(rng, 3000, {"x", "z", "y"}, [](Rng& r) {
        const double x = r.normal();
        return std::vector<double>{x, x - r.normal(), 0.4 * x + r.normal()};
    });
    CiTestResult xy = fisher_z_test(tab, "x", "y", {"z"}, 0.05);
    CiTestResult yx = fisher_z_test(tab, "y", "x", {"z"}, 0.05);
    CHECK(xy.statistic == doctest::Approx(yx.statistic).epsilon(1e-12));
}

TEST_CASE("fisher-z names collinear conditioning columns") {
    Rng rng(15);
    DataTable tab = gaussian_table(rng, 500, {"x", "y", "z1", "z2"}, [](Rng& r) {
        const double z = r.normal();
        return std::vector<double>{r.normal(), r.normal(), z, 2.0 * z};
    });
    CHECK_THROWS_WITH_AS(
        static_cast<void>(fisher_z_test(tab, "x", "y", {"z1", "z2"}, 0.05)),
        doctest::Contains("z2"), std::runtime_error);

    // Constant conditioning column is reported too.
    DataTable tab2 = gaussian_table(rng, 500, {"x", "y", "zc"}, [](Rng& r) {
        return std::vector<double>{r.normal(), r.normal(), 1.0};
    });
    CHECK_THROWS_WITH_AS(static_cast<void>(fisher_z_test(tab2, "x", "y", {"zc"}, 0.05)),
                         doctest::Contains("zc"), std::runtime_error);
}

TEST_CASE("fisher-z input validation") {
    Rng rng(17);
    DataTable tab = gaussian_table(rng, 8, {"x", "y", "z"}, [](Rng& r) {
        return std::vector<double>{r.normal(), r.normal(), r.normal()};
    });
    CHECK_THROWS_AS(static_cast<void>(fisher_z_test(tab, "x", "y", {"z", "x"}, 0.05)),
                    std::invalid_argument);
    CHECK_THROWS_AS(static_cast<void>(fisher_z_test(tab, "x", "x", {}, 0.05)),
                    std::invalid_argument);
    // 8 rows cannot support |Z| = 4.
    DataTable wide = gaussian_table(rng, 8, {"x", "y", "a", "b", "c", "d"}, [](Rng& r) {
        return std::vector<double>{r.normal(), r.normal(), r.normal(),
                                   r.normal(), r.normal(), r.normal()};
    });
    CHECK_THROWS_AS(
        static_cast<void>(fisher_z_test(wide, "x", "y", {"a", "b", "c", "d"}, 0.05)),
        std::invalid_argument);
}

TEST_CASE("kernel test null calibration") {
    Rng rng(19);
    int rejects = 0;
    const int trials = 150;
    const double alpha = 0.05;
    CiTestOptions opts;
    opts.n_permutations = 150;
    for (int t = 0; t < trials; ++t) {
        opts.seed = 1000 + t;
        DataTable tab = gaussian_table(rng, 300, {"x", "y"}, [](Rng& r) {
            return std::vector<double>{r.normal(), r.normal()};
        });
        if (!kernel_ci_test(tab, "x", "y", {}, alpha, opts).independent) ++rejects;
    }
    const double rate = static_cast<double>(rejects) / trials;
    CHECK(rate >= alpha / 2.0 - 0.01);
    CHECK(rate <= 2.0 * alpha + 0.01);
}

TEST_CASE("kernel test catches the quadratic dependence Fisher-z misses") {
    Rng rng(23);
    DataTable tab = gaussian_table(rng, 2000, {"x", "y"}, [](Rng& r) {
        const double x = r.normal();
        return std::vector<double>{x, x * x + 0.3 * r.normal()};
    });
    CHECK(fisher_z_test(tab, "x", "y", {}, 0.01).independent); // zero correlation
    CiTestOptions opts;
    opts.seed = 3;
    CiTestResult res = kernel_ci_test(tab, "x", "y", {}, 0.01, opts);
    CHECK(res.p_value < 0.01);
    CHECK_FALSE(res.independent);
}

TEST_CASE("kernel test: conditioning on the common cause removes dependence") {
    Rng rng(29);
    DataTable tab = gaussian_table(rng, 800, {"x", "z", "y"}, [](Rng& r) {
        const double z = r.normal();
        return std::vector<double>{z + 0.4 * r.normal(), z, z * z + 0.4 * r.normal()};
    });
    CiTestOptions opts;
    opts.seed = 5;
    CHECK_FALSE(kernel_ci_test(tab, "x", "y", {}, 0.05, opts).independent);
    CHECK(kernel_ci_test(tab, "x", "y", {"z"}, 0.05, opts).independent);

    // Exact functional dependence: conditioning on the cause of both.
    DataTable exact = gaussian_table(rng, 600, {"x", "y"}, [](Rng& r) {
        const double x = r.normal();
        return std::vector<double>{x, std::sin(x)};
    });
    CHECK(kernel_ci_test(exact, "x", "y", {"x"}, 0.05, opts).independent);
}

TEST_CASE("kernel test statistic is symmetric in x and y") {
    Rng rng(31);
    DataTable tab = gaussian_table(rng, 500, {"x", "y"}, [](Rng& r) {
        const double x = r.normal();
        return std::vector<double>{x, x * x + r.normal()};
    });
    CiTestOptions opts;
    opts.seed = 11;
    CiTestResult xy = kernel_ci_test(tab, "x", "y", {}, 0.05, opts);
    CiTestResult yx = kernel_ci_test(tab, "y", "x", {}, 0.05, opts);
    CHECK(xy.statistic == doctest::Approx(yx.statistic).epsilon(1e-9));
}

TEST_CASE("kernel test row cap") {
    Rng rng(37);
    DataTable tab = gaussian_table(rng, 1200, {"x", "y"}, [](Rng& r) {
        return std::vector<double>{r.normal(), r.normal()};
    });
    CiTestOptions opts;
    opts.kernel_cap = 500;
    opts.allow_subsample = false;
    CHECK_THROWS_AS(static_cast<void>(kernel_ci_test(tab, "x", "y", {}, 0.05, opts)),
                    std::runtime_error);
    opts.allow_subsample = true;
    CHECK_NOTHROW(static_cast<void>(kernel_ci_test(tab, "x", "y", {}, 0.05, opts)));
}

TEST_CASE("parent recovery on the sparse-coefficient simulator") {
    SemConfig cfg = sparse_config();
    Dataset d = simulate(cfg, 20000);
    const int target_position = 0;
    DataTable table = fci_preprocess(d, target_position);

    std::vector<CiTraceRow> trace;
    ParentSet parents =
        discover_parents(table, "y1", 0.01, CiTestKind::fisher_z, 3, {}, &trace);

    const std::set<std::string> truth = true_parent_columns(3, target_position);
    const auto found_cols = parents.columns();
    std::set<std::string> found(found_cols.begin(), found_cols.end());
    std::size_t tp = 0;
    for (const auto& c : found)
        if (truth.count(c)) ++tp;
    const double precision = found.empty() ? 0.0 : static_cast<double>(tp) / found.size();
    const double recall = static_cast<double>(tp) / truth.size();
    CAPTURE(precision);
    CAPTURE(recall);
    CHECK(precision >= 0.9);
    CHECK(recall >= 0.9);

    // Category tags follow the column vocabulary.
    for (const auto& parent : parents.parents) {
        if (parent.column.rfind("d1_", 0) == 0) CHECK(parent.category == "cross-block");
        if (parent.column == "d2_x1_1") CHECK(parent.category == "self-ad");
        if (parent.column == "d2_x2_1") CHECK(parent.category == "same-block");
        if (parent.column[0] == 'a') CHECK(parent.category == "allocation");
    }
    CHECK(!trace.empty());
}

TEST_CASE("no-signal null yields an (almost) empty parent set") {
    SemConfig cfg = sparse_config();
    cfg.gamma = {0.0, 0.0, 0.0, 0.0};
    cfg.eta = {0.0, 0.0, 0.0, 0.0};
    cfg.lambda_u = 0.0;
    Dataset d = simulate(cfg, 10000);
    DataTable table = fci_preprocess(d, 1);
    ParentSet parents = discover_parents(table, "y2", 0.01, CiTestKind::fisher_z, 2);
    CHECK(parents.parents.size() <= 2); // a few alpha-level survivors allowed
}

TEST_CASE("regression on recovered parents matches regression on true parents") {
    SemConfig cfg = sparse_config();
    Dataset train = simulate(cfg, 20000);
    SemConfig test_cfg = cfg;
    test_cfg.seed = cfg.seed + 1;
    Dataset test = simulate(test_cfg, 12000);
    const int i = 0;

    DataTable table = fci_preprocess(train, i);
    ParentSet parents = discover_parents(table, "y1", 0.01, CiTestKind::fisher_z, 3);
    REQUIRE(!parents.parents.empty());

    FeatureSetSpec discovered{Variant::discovered, parents.columns()};
    const std::set<std::string> truth_set = true_parent_columns(3, i);
    FeatureSetSpec truth{Variant::discovered,
                         std::vector<std::string>(truth_set.begin(), truth_set.end())};
    OutcomeModel m_disc = fit_outcome(train, i, discovered, ModelKind::logistic);
    OutcomeModel m_true = fit_outcome(train, i, truth, ModelKind::logistic);

    auto holdout = [&](const OutcomeModel& model) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& pv : test.pageviews) {
            scores.push_back(model.predict(pv));
            labels.push_back(pv.y[i]);
        }
        return auc(scores, labels);
    };
    CHECK(holdout(m_disc) >= holdout(m_true) - 0.01);
}

TEST_CASE("discovery is invariant to candidate column order") {
    SemConfig cfg = sparse_config();
    Dataset d = simulate(cfg, 5000);
    DataTable table = fci_preprocess(d, 2);

    DataTable shuffled;
    std::vector<std::size_t> perm(table.n_cols());
    Rng rng(77);
    auto p = rng.permutation(table.n_cols());
    shuffled.columns.resize(table.n_cols());
    for (std::size_t c = 0; c < table.n_cols(); ++c) shuffled.columns[c] = table.columns[p[c]];
    for (const auto& row : table.rows) {
        std::vector<double> r(row.size());
        for (std::size_t c = 0; c < row.size(); ++c) r[c] = row[p[c]];
        shuffled.rows.push_back(std::move(r));
    }

    ParentSet a = discover_parents(table, "y3", 0.01, CiTestKind::fisher_z, 2);
    ParentSet b = discover_parents(shuffled, "y3", 0.01, CiTestKind::fisher_z, 2);
    CHECK(a.columns() == b.columns());
}

TEST_CASE("enlarging alpha never shrinks the survivor set on a fixed trace") {
    SemConfig cfg = sparse_config();
    Dataset d = simulate(cfg, 8000);
    DataTable table = fci_preprocess(d, 0);
    std::vector<CiTraceRow> trace;
    discover_parents(table, "y1", 0.01, CiTestKind::fisher_z, 2, {}, &trace);

    std::vector<std::string> prev;
    for (double alpha : {1e-4, 1e-3, 1e-2, 0.05, 0.2}) {
        auto survivors = survivors_from_trace(trace, alpha);
        for (const auto& c : prev)
            CHECK(std::find(survivors.begin(), survivors.end(), c) != survivors.end());
        prev = survivors;
    }
}

TEST_CASE("discovery with the kernel test on a small instance") {
    SemConfig cfg = sparse_config();
    cfg.m = 2;
    cfg.p = 2;
    cfg.delta = {0.2, -0.2};
    cfg.gamma = {1.0, 0.0};
    cfg.eta = {0.0, 0.0};
    cfg.w_prop = {0.3, 0.2};
    cfg.lambda_u = 0.0;
    Dataset d = simulate(cfg, 700);
    DataTable table = fci_preprocess(d, 0);
    CiTestOptions opts;
    opts.n_permutations = 120;
    opts.seed = 17;
    ParentSet parents = discover_parents(table, "y1", 0.01, CiTestKind::kernel, 1, opts);
    // The strong same-block driver d2_x1_1 must survive.
    auto cols = parents.columns();
    CHECK(std::find(cols.begin(), cols.end(), "d2_x1_1") != cols.end());
}

TEST_CASE("discover_parents validation and trace output") {
    SemConfig cfg = sparse_config();
    Dataset d = simulate(cfg, 1000);
    DataTable table = fci_preprocess(d, 0);
    CHECK_THROWS_AS(
        static_cast<void>(discover_parents(table, "y1", 0.01, CiTestKind::fisher_z, -1)),
        std::invalid_argument);
    CHECK_THROWS_AS(
        static_cast<void>(discover_parents(table, "d1_x1_1", 0.01, CiTestKind::fisher_z, 1)),
        std::invalid_argument);

    std::vector<CiTraceRow> trace;
    ParentSet parents = discover_parents(table, "y1", 0.05, CiTestKind::fisher_z, 1, {}, &trace);
    const std::string csv = trace_to_csv(trace);
    CHECK(csv.rfind("x,y,z,statistic,p_value,independent\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(trace.size()) + 1);
    CHECK(parents.to_json().find("\"target\"") != std::string::npos);
}
