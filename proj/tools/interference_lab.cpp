// interference_lab: simulate | graph | estimate | discover | predict-eval | report
//
// File-based pipeline over the pageview-interference library. Every artifact
// embeds the fully resolved configuration and content digests of its inputs,
// and reruns with the same config and seed are byte-identical regardless of
// --jobs.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ilab/discovery.hpp"
#include "ilab/estimators.hpp"
#include "ilab/graph.hpp"
#include "ilab/models.hpp"
#include "ilab/parallel.hpp"
#include "ilab/preprocess.hpp"
#include "ilab/sem.hpp"
#include "ilab/table.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ilab;

namespace {

constexpr const char* kVersion = "interference-lab 0.1.0";

// Exit codes: 0 success, 2 validation error, 3 runtime/numerical error.
struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::uint64_t resolve_seed(std::optional<std::uint64_t> cli_seed, std::uint64_t fallback) {
    if (cli_seed) return *cli_seed;
    if (const char* env = std::getenv("INTERFERENCE_LAB_SEED")) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (end == env || *end != '\0')
            throw ValidationError("INTERFERENCE_LAB_SEED is not an integer");
        return static_cast<std::uint64_t>(v);
    }
    return fallback;
}

// Holds the .lock file for the lifetime of a subcommand.
class OutDir {
  public:
    explicit OutDir(const std::string& path) : dir_(path) {
        if (dir_.empty()) throw ValidationError("--out-dir is required");
        fs::create_directories(dir_);
        lock_ = dir_ / ".lock";
        FILE* f = std::fopen(lock_.c_str(), "wx");
        if (!f)
            throw std::runtime_error("output directory " + dir_.string() +
                                     " is locked by another run (remove " + lock_.string() +
                                     " if stale)");
        std::fclose(f);
    }
    ~OutDir() {
        std::error_code ec;
        fs::remove(lock_, ec);
    }
    OutDir(const OutDir&) = delete;
    OutDir& operator=(const OutDir&) = delete;

    std::string file(const std::string& name) const { return (dir_ / name).string(); }

  private:
    fs::path dir_;
    fs::path lock_;
};

struct MetaBuilder {
    json meta;

    MetaBuilder(const std::string& command, const json& resolved_config) {
        meta["tool"] = kVersion;
        meta["command"] = command;
        meta["config"] = resolved_config;
        meta["inputs"] = json::object();
        meta["outputs"] = json::object();
    }
    void input(const std::string& name, const std::string& path) {
        meta["inputs"][name] = {{"path", path}, {"digest", content_digest(read_text_file(path))}};
    }
    void output(const OutDir& dir, const std::string& name, const std::string& content) {
        write_text_file(dir.file(name), content);
        meta["outputs"][name] = content_digest(content);
    }
    void write(const OutDir& dir) { write_text_file(dir.file("meta.json"), meta.dump(2) + "\n"); }
};

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

Dataset load_dataset(const std::string& path) {
    if (path.empty()) throw ValidationError("--dataset is required");
    return Dataset::from_csv(read_text_file(path));
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
    std::string config_path;
    std::string out_dir;
    std::size_t n = 50000;
    std::size_t oracle_draws = 1000000;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
};

std::string oracle_csv(const std::vector<AllocationRule>& rules,
                       const std::vector<std::vector<OracleValue>>& psi, std::size_t draws) {
    std::string out = "rule,position,psi,mc_se,n_draws\n";
    for (std::size_t r = 0; r < rules.size(); ++r)
        for (std::size_t i = 0; i < psi[r].size(); ++i)
            out += rules[r].str() + "," + std::to_string(i + 1) + "," +
                   format_double(psi[r][i].psi) + "," + format_double(psi[r][i].mc_se) + "," +
                   std::to_string(draws) + "\n";
    return out;
}

std::string truth_effects_csv(const std::vector<AllocationRule>& rules,
                              const std::vector<std::vector<OracleValue>>& psi) {
    const int m = rules.front().size();
    std::string out = "kind,position,rule_a,rule_b,value,mc_se\n";
    for (int i = 0; i < m; ++i)
        for (const auto& row : effects_from_psi(rules, psi, i))
            out += effect_kind_name(row.kind) + "," + std::to_string(i + 1) + "," +
                   row.rule_a.str() + "," + row.rule_b.str() + "," + format_double(row.value) +
                   "," + format_double(row.mc_se) + "\n";
    // Pageview-level comparison: average over positions.
    for (std::size_t ra = 0; ra < rules.size(); ++ra)
        for (std::size_t rb = 0; rb < rules.size(); ++rb) {
            if (ra == rb) continue;
            double value = 0.0, var = 0.0;
            for (int i = 0; i < m; ++i) {
                const auto& va = psi[ra][i];
                const auto& vb = psi[rb][i];
                value += (va.psi - vb.psi) / m;
                var += (va.mc_se * va.mc_se + vb.mc_se * vb.mc_se) / (double(m) * m);
            }
            out += "AOE,," + rules[ra].str() + "," + rules[rb].str() + "," +
                   format_double(value) + "," + format_double(std::sqrt(var)) + "\n";
        }
    return out;
}

int cmd_simulate(const SimulateArgs& args) {
    if (args.config_path.empty()) throw ValidationError("--config is required");
    SemConfig cfg = SemConfig::from_json(read_text_file(args.config_path));
    cfg.seed = resolve_seed(args.seed, cfg.seed);
    set_max_threads(args.jobs);

    OutDir dir(args.out_dir);
    json resolved = json::parse(cfg.to_json());
    resolved["n_pageviews"] = args.n;
    resolved["oracle_draws"] = args.oracle_draws;
    resolved["jobs"] = args.jobs;
    MetaBuilder meta("simulate", resolved);
    meta.input("config", args.config_path);

    Dataset d = simulate(cfg, args.n);
    const auto rules = enumerate_valid_rules(cfg.m);
    std::vector<std::vector<OracleValue>> psi(rules.size());
    for (std::size_t r = 0; r < rules.size(); ++r)
        psi[r] = oracle_all_positions(cfg, rules[r], args.oracle_draws);
    meta.output(dir, "dataset.csv", d.to_csv());
    meta.output(dir, "truth_oracle.csv", oracle_csv(rules, psi, args.oracle_draws));
    meta.output(dir, "truth_effects.csv", truth_effects_csv(rules, psi));
    meta.output(dir, "config.json", cfg.to_json() + "\n");
    meta.write(dir);
    std::cout << "simulate: wrote " << args.n << " pageviews to " << dir.file("dataset.csv")
              << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// graph
// ---------------------------------------------------------------------------

struct GraphArgs {
    int m = 3;
    std::string rule_str;
    std::vector<std::string> inject;
    std::string out_dir;
};

int cmd_graph(const GraphArgs& args) {
    if (args.m < 1) throw ValidationError("--m must be >= 1");
    AllocationRule rule = args.rule_str.empty()
                              ? enumerate_valid_rules(args.m).front()
                              : rule_from_string(args.rule_str);
    if (!rule.valid() || rule.size() != args.m)
        throw ValidationError("--rule " + args.rule_str + " is not a valid length-" +
                              std::to_string(args.m) + " monotone rule");

    Dag dag = build_ad_dag(args.m);
    for (const auto& spec : args.inject) {
        auto arrow = spec.find("->");
        if (arrow == std::string::npos)
            throw ValidationError("--inject-edge expects FROM->TO, got " + spec);
        dag.add_edge(spec.substr(0, arrow), spec.substr(arrow + 2));
    }
    Swig swig = swig_transform(dag, rule);
    const bool ignorable = verify_network_ignorability(dag, rule);

    OutDir dir(args.out_dir);
    json resolved = {{"m", args.m}, {"rule", rule.str()}, {"inject_edges", args.inject}};
    MetaBuilder meta("graph", resolved);
    meta.output(dir, "dag.json", dag.to_json() + "\n");
    meta.output(dir, "swig.json", swig.to_json() + "\n");
    json verdict = {{"rule", rule.str()},
                    {"network_conditional_ignorability", ignorable},
                    {"conditioning_set", "X1..X" + std::to_string(args.m)}};
    meta.output(dir, "ignorability.json", verdict.dump(2) + "\n");
    meta.write(dir);
    std::cout << "graph: network conditional ignorability "
              << (ignorable ? "holds" : "FAILS") << " for rule " << rule.str() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

struct EstimateArgs {
    std::string dataset_path;
    std::string out_dir;
    std::string outcome_kind = "logistic";
    std::string propensity_kind = "logistic";
    std::string propensity_mode = "joint";
    std::string outcome_variant = "full";
    int k_folds = 2;
    int bootstrap_b = 100;
    double level = 0.95;
    int trees = 200;
    int depth = 6;
    double ridge = 1e-6;
    double smoothing = 0.0;
    double feature_frac = 0.0;
    bool save_models = false;
    std::string models_dir; // reuse previously saved fits instead of refitting
    std::optional<std::uint64_t> seed;
    int jobs = 0;
};

struct EstimateBundle {
    std::vector<AllocationRule> rules;
    int m = 0;
    std::vector<std::vector<EffectEstimate>> aipw;     // [rule][position]
    std::vector<std::vector<EffectEstimate>> gformula; // [rule][position]
    std::vector<std::vector<EffectEstimate>> ipw;      // [rule][position]
    std::vector<EffectEstimate> observed;              // [position]
    CovarianceTable cov;
    bool have_cov = false;
};

json estimate_to_json(const EffectEstimate& est) {
    return {{"value", est.value},        {"stderr", est.stderr_}, {"ci_low", est.ci_low},
            {"ci_high", est.ci_high},    {"level", est.level},    {"estimator", est.estimator},
            {"target", est.target},      {"n_used", est.n_used},  {"degenerate", est.degenerate}};
}

int cmd_estimate(const EstimateArgs& args) {
    Dataset d = load_dataset(args.dataset_path);
    const std::uint64_t seed = resolve_seed(args.seed, 0);
    set_max_threads(args.jobs);
    if (args.k_folds < 1) throw ValidationError("--k-folds must be >= 1");

    const ModelKind outcome_kind = model_kind_from_name(args.outcome_kind);
    const ModelKind propensity_kind = model_kind_from_name(args.propensity_kind);
    const PropensityMode mode = propensity_mode_from_name(args.propensity_mode);
    FeatureSetSpec outcome_spec;
    outcome_spec.variant = variant_from_name(args.outcome_variant);
    if (outcome_spec.variant == Variant::discovered)
        throw ValidationError("estimate: use predict-eval for the discovered variant");

    FitOptions opts;
    opts.ridge = args.ridge;
    opts.forest_trees = args.trees;
    opts.forest_depth = args.depth;
    opts.forest_feature_frac = args.feature_frac;
    opts.smoothing_eps = args.smoothing;
    opts.seed = seed;

    NuisanceFitters fitters;
    fitters.outcome = [&](const Dataset& train, int position) {
        return fit_outcome(train, position, outcome_spec, outcome_kind, opts);
    };
    fitters.propensity = [&](const Dataset& train) {
        return fit_propensity(train, mode, propensity_kind, opts);
    };

    EstimateBundle bundle;
    bundle.m = d.m();
    bundle.rules = enumerate_valid_rules(bundle.m);

    if (!args.models_dir.empty() && args.bootstrap_b > 0)
        throw ValidationError(
            "estimate: --models-dir skips nuisance refits, which the bootstrap requires; "
            "pass --bootstrap 0");

    // One nuisance fit per fold serves every (rule, position) target.
    auto all_aipw = [&](const Dataset& data) {
        auto table = aipw_mean_table(data, fitters, bundle.rules, args.k_folds, seed);
        std::vector<double> values;
        values.reserve(bundle.rules.size() * bundle.m);
        for (int i = 0; i < bundle.m; ++i)
            for (std::size_t r = 0; r < bundle.rules.size(); ++r)
                values.push_back(table[r][i].value);
        return values;
    };

    std::vector<OutcomeModel> outcome_models;
    std::optional<PropensityModel> propensity_model;
    if (!args.models_dir.empty()) {
        for (int i = 0; i < bundle.m; ++i)
            outcome_models.push_back(OutcomeModel::from_json(read_text_file(
                args.models_dir + "/outcome_y" + std::to_string(i + 1) + ".json")));
        propensity_model =
            PropensityModel::from_json(read_text_file(args.models_dir + "/propensity.json"));
    } else {
        for (int i = 0; i < bundle.m; ++i) outcome_models.push_back(fitters.outcome(d, i));
        propensity_model = fitters.propensity(d);
    }

    bundle.gformula.assign(bundle.rules.size(), std::vector<EffectEstimate>(bundle.m));
    bundle.ipw.assign(bundle.rules.size(), std::vector<EffectEstimate>(bundle.m));
    bundle.aipw.assign(bundle.rules.size(), std::vector<EffectEstimate>(bundle.m));
    if (args.models_dir.empty())
        bundle.aipw = aipw_mean_table(d, fitters, bundle.rules, args.k_folds, seed);
    for (int i = 0; i < bundle.m; ++i) {
        const OutcomeModel& outcome = outcome_models[i];
        const PropensityModel& propensity = *propensity_model;
        for (std::size_t r = 0; r < bundle.rules.size(); ++r) {
            bundle.gformula[r][i] = gformula_mean(d, outcome, bundle.rules[r], i);
            bundle.ipw[r][i] = ipw_mean(d, propensity, bundle.rules[r], i);
            if (!args.models_dir.empty())
                bundle.aipw[r][i] =
                    aipw_mean_fitted(d, outcome, propensity, bundle.rules[r], i);
        }
        EffectEstimate obs;
        double mean = 0.0;
        for (const auto& pv : d.pageviews) mean += pv.y[i];
        mean /= static_cast<double>(d.size());
        obs.value = mean;
        obs.stderr_ = std::sqrt(mean * (1.0 - mean) / static_cast<double>(d.size()));
        obs.ci_low = mean - 1.959963984540054 * obs.stderr_;
        obs.ci_high = mean + 1.959963984540054 * obs.stderr_;
        obs.estimator = "observed";
        obs.target = "observed[i=" + std::to_string(i + 1) + "]";
        obs.n_used = static_cast<long>(d.size());
        bundle.observed.push_back(obs);
    }

    if (args.bootstrap_b > 0) {
        BootstrapResult boot = bootstrap(d, all_aipw, args.bootstrap_b, args.level, seed);
        std::size_t t = 0;
        std::vector<std::string> targets;
        for (int i = 0; i < bundle.m; ++i)
            for (std::size_t r = 0; r < bundle.rules.size(); ++r) {
                EffectEstimate& est = bundle.aipw[r][i];
                est.stderr_ = boot.stderr_[t];
                est.ci_low = boot.ci_low[t];
                est.ci_high = boot.ci_high[t];
                est.level = args.level;
                targets.push_back(est.target);
                ++t;
            }
        for (std::size_t t1 = 0; t1 < targets.size(); ++t1)
            for (std::size_t t2 = 0; t2 < targets.size(); ++t2)
                bundle.cov.set(targets[t1], targets[t2], boot.covariance[t1][t2]);
        bundle.have_cov = true;
    }

    // Table-2-style CSV: rows = positions, columns = rules + observed mean.
    std::string table = "position";
    for (const auto& rule : bundle.rules) table += ",E[Y(" + rule.str() + ")]";
    table += ",observed\n";
    for (int i = 0; i < bundle.m; ++i) {
        table += std::to_string(i + 1);
        for (std::size_t r = 0; r < bundle.rules.size(); ++r) {
            const EffectEstimate& est = bundle.aipw[r][i];
            table += "," + fixed(est.value) + " ± " + fixed((est.ci_high - est.ci_low) / 2.0);
        }
        table += "," + fixed(bundle.observed[i].value) + "\n";
    }

    // Effects over every contrast reachable in the valid-rule space.
    const CovarianceTable* cov = bundle.have_cov ? &bundle.cov : nullptr;
    std::string effects = "kind,position,rule_a,rule_b,value,stderr,ci_low,ci_high\n";
    json effects_json = json::array();
    std::vector<RuleMeans> means_by_position(bundle.m);
    for (int i = 0; i < bundle.m; ++i)
        for (std::size_t r = 0; r < bundle.rules.size(); ++r)
            means_by_position[i][bundle.rules[r]] = bundle.aipw[r][i];
    auto emit = [&](const EffectEstimate& est, const std::string& kind, int position,
                    const AllocationRule& a, const AllocationRule& b) {
        effects += kind + "," + (position >= 0 ? std::to_string(position + 1) : "") + "," +
                   a.str() + "," + b.str() + "," + format_double(est.value) + "," +
                   format_double(est.stderr_) + "," + format_double(est.ci_low) + "," +
                   format_double(est.ci_high) + "\n";
        json j = estimate_to_json(est);
        j["kind"] = kind;
        if (position >= 0) j["position"] = position + 1;
        j["rule_a"] = a.str();
        j["rule_b"] = b.str();
        effects_json.push_back(std::move(j));
    };
    for (int i = 0; i < bundle.m; ++i) {
        for (std::size_t ra = 0; ra < bundle.rules.size(); ++ra) {
            for (std::size_t rb = ra + 1; rb < bundle.rules.size(); ++rb) {
                const auto& a = bundle.rules[ra];
                const auto& b = bundle.rules[rb];
                EffectEstimate oe = overall_effect(means_by_position[i], i, a, b, cov);
                emit(oe, "OE", i, a, b);
                int diff = 0;
                for (int j = 0; j < bundle.m; ++j) diff += a.bits[j] != b.bits[j];
                if (diff == 1 && a.bits[i] != b.bits[i]) {
                    EffectEstimate ue = unit_effect(means_by_position[i], i, a.bits[i], b.bits[i],
                                                    b, cov);
                    emit(ue, "UE", i, a, b);
                }
                if (a.bits[i] == b.bits[i]) {
                    EffectEstimate se =
                        spillover_effect(means_by_position[i], i, a.bits[i], a, b, cov);
                    emit(se, "SE", i, a, b);
                }
            }
        }
    }
    for (std::size_t ra = 0; ra < bundle.rules.size(); ++ra)
        for (std::size_t rb = ra + 1; rb < bundle.rules.size(); ++rb) {
            EffectEstimate aoe = average_overall_effect(means_by_position, bundle.rules[ra],
                                                        bundle.rules[rb], cov);
            emit(aoe, "AOE", -1, bundle.rules[ra], bundle.rules[rb]);
        }

    json out;
    out["targets"] = json::array();
    for (int i = 0; i < bundle.m; ++i) {
        for (std::size_t r = 0; r < bundle.rules.size(); ++r) {
            json j;
            j["rule"] = bundle.rules[r].str();
            j["position"] = i + 1;
            j["aipw"] = estimate_to_json(bundle.aipw[r][i]);
            j["gformula"] = estimate_to_json(bundle.gformula[r][i]);
            j["ipw"] = estimate_to_json(bundle.ipw[r][i]);
            out["targets"].push_back(std::move(j));
        }
        out["observed"].push_back(estimate_to_json(bundle.observed[i]));
    }
    out["effects"] = std::move(effects_json);
    out["bootstrap"] = args.bootstrap_b;

    OutDir dir(args.out_dir);
    json resolved = {{"dataset", args.dataset_path},
                     {"outcome_kind", args.outcome_kind},
                     {"propensity_kind", args.propensity_kind},
                     {"propensity_mode", args.propensity_mode},
                     {"outcome_variant", args.outcome_variant},
                     {"k_folds", args.k_folds},
                     {"bootstrap", args.bootstrap_b},
                     {"level", args.level},
                     {"trees", args.trees},
                     {"depth", args.depth},
                     {"ridge", args.ridge},
                     {"smoothing", args.smoothing},
                     {"save_models", args.save_models},
                     {"models_dir", args.models_dir},
                     {"seed", seed},
                     {"jobs", args.jobs}};
    MetaBuilder meta("estimate", resolved);
    meta.input("dataset", args.dataset_path);
    meta.output(dir, "estimates.csv", table);
    meta.output(dir, "effects.csv", effects);
    meta.output(dir, "estimates.json", out.dump(2) + "\n");
    if (args.save_models) {
        for (int i = 0; i < bundle.m; ++i)
            meta.output(dir, "outcome_y" + std::to_string(i + 1) + ".json",
                        outcome_models[i].to_json() + "\n");
        meta.output(dir, "propensity.json", propensity_model->to_json() + "\n");
    }
    meta.write(dir);
    std::cout << "estimate: " << bundle.rules.size() * bundle.m << " counterfactual means -> "
              << dir.file("estimates.csv") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// discover
// ---------------------------------------------------------------------------

struct DiscoverArgs {
    std::string dataset_path;
    std::string out_dir;
    double alpha = 0.01;
    std::string test = "fisher_z";
    int max_cond = 3;
    int positions = 0; // 0 = all, else 1-based position
    int kernel_cap = 5000;
    int n_perm = 200;
    bool keep_self_d1 = false;
    bool emit_tables = false;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
};

int cmd_discover(const DiscoverArgs& args) {
    Dataset d = load_dataset(args.dataset_path);
    const std::uint64_t seed = resolve_seed(args.seed, 0);
    set_max_threads(args.jobs);
    const CiTestKind kind = ci_test_kind_from_name(args.test);
    if (args.alpha <= 0.0 || args.alpha >= 1.0) throw ValidationError("--alpha must be in (0,1)");

    std::vector<int> positions;
    if (args.positions == 0)
        for (int i = 0; i < d.m(); ++i) positions.push_back(i);
    else if (args.positions >= 1 && args.positions <= d.m())
        positions.push_back(args.positions - 1);
    else
        throw ValidationError("--position out of range");

    CiTestOptions opts;
    opts.kernel_cap = args.kernel_cap;
    opts.n_permutations = args.n_perm;
    opts.seed = seed;

    OutDir dir(args.out_dir);
    json resolved = {{"dataset", args.dataset_path}, {"alpha", args.alpha},
                     {"test", args.test},            {"max_cond", args.max_cond},
                     {"kernel_cap", args.kernel_cap}, {"n_perm", args.n_perm},
                     {"keep_self_d1", args.keep_self_d1}, {"seed", seed},
                     {"jobs", args.jobs}};
    MetaBuilder meta("discover", resolved);
    meta.input("dataset", args.dataset_path);

    json combined = json::array();
    for (int i : positions) {
        DataTable table = fci_preprocess(d, i, args.keep_self_d1);
        if (args.emit_tables)
            meta.output(dir, "fci_y" + std::to_string(i + 1) + ".csv", table.to_csv());
        std::vector<CiTraceRow> trace;
        ParentSet parents = discover_parents(table, "y" + std::to_string(i + 1), args.alpha,
                                             kind, args.max_cond, opts, &trace);
        meta.output(dir, "parents_y" + std::to_string(i + 1) + ".json",
                    parents.to_json() + "\n");
        meta.output(dir, "ci_trace_y" + std::to_string(i + 1) + ".csv", trace_to_csv(trace));
        combined.push_back(json::parse(parents.to_json()));
        std::cout << "discover: y" << i + 1 << " has " << parents.parents.size()
                  << " parents (" << trace.size() << " CI tests)\n";
    }
    meta.output(dir, "parents.json", combined.dump(2) + "\n");
    meta.write(dir);
    return 0;
}

// ---------------------------------------------------------------------------
// predict-eval
// ---------------------------------------------------------------------------

struct PredictEvalArgs {
    std::string dataset_path;
    std::string out_dir;
    std::string model_kind = "logistic";
    int trees = 200;
    int depth = 6;
    double ridge = 1e-6;
    double train_fraction = 0.7;
    std::string parents_file;
    double alpha = 0.01;
    int max_cond = 3;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
    bool positive_only = false;
};

// Pageviews with at least one click and a full complement of impressed ads.
Dataset filter_positive(const Dataset& d) {
    Dataset out;
    out.schema = d.schema;
    out.provenance = d.provenance;
    for (const auto& pv : d.pageviews) {
        int clicks = 0;
        for (int y : pv.y) clicks += y;
        if (clicks >= 1) out.pageviews.push_back(pv);
    }
    return out;
}

int cmd_predict_eval(const PredictEvalArgs& args) {
    Dataset full = load_dataset(args.dataset_path);
    if (args.positive_only) full = filter_positive(full);
    const std::uint64_t seed = resolve_seed(args.seed, 0);
    set_max_threads(args.jobs);
    if (args.train_fraction <= 0.0 || args.train_fraction >= 1.0)
        throw ValidationError("--train-fraction must be in (0,1)");
    const ModelKind kind = model_kind_from_name(args.model_kind);

    // Split by hashed pageview id: stable under row order and subsetting.
    Dataset train, test;
    train.schema = test.schema = full.schema;
    train.provenance = test.provenance = full.provenance;
    const std::uint64_t threshold =
        static_cast<std::uint64_t>(args.train_fraction * 4294967296.0);
    for (const auto& pv : full.pageviews) {
        const std::uint64_t h =
            mix64(seed ^ mix64(static_cast<std::uint64_t>(pv.id) + 0x70A57ULL)) & 0xFFFFFFFFULL;
        (h < threshold ? train : test).pageviews.push_back(pv);
    }
    if (train.pageviews.empty() || test.pageviews.empty())
        throw std::runtime_error("predict-eval: degenerate train/test split");

    FitOptions opts;
    opts.ridge = args.ridge;
    opts.forest_trees = args.trees;
    opts.forest_depth = args.depth;
    opts.seed = seed;

    // Parent sets for variant (v): from a discover run, or learned on the
    // training split.
    std::map<int, std::vector<std::string>> parents_by_position;
    if (!args.parents_file.empty()) {
        json pj = json::parse(read_text_file(args.parents_file));
        for (const auto& entry : pj) {
            const std::string target = entry.at("target").get<std::string>();
            const int position = std::stoi(target.substr(1)) - 1;
            std::vector<std::string> cols;
            for (const auto& p : entry.at("parents")) cols.push_back(p.at("column"));
            parents_by_position[position] = std::move(cols);
        }
    } else {
        for (int i = 0; i < full.m(); ++i) {
            DataTable table = fci_preprocess(train, i);
            ParentSet ps = discover_parents(table, "y" + std::to_string(i + 1), args.alpha,
                                            CiTestKind::fisher_z, args.max_cond);
            parents_by_position[i] = ps.columns();
        }
    }

    const std::vector<Variant> variants = {Variant::baseline, Variant::block,
                                           Variant::block_cross, Variant::full,
                                           Variant::discovered};
    std::string csv = "position,variant,auc,rel_diff_pct\n";
    json out = json::array();
    for (int i = 0; i < full.m(); ++i) {
        std::vector<int> labels;
        labels.reserve(test.size());
        for (const auto& pv : test.pageviews) labels.push_back(pv.y[i]);
        double baseline_auc = 0.0;
        for (Variant v : variants) {
            FeatureSetSpec spec;
            spec.variant = v;
            if (v == Variant::discovered) {
                spec.discovered_parents = parents_by_position[i];
                if (spec.discovered_parents.empty()) {
                    // Nothing discovered: fall back to the self-ad columns so
                    // the variant stays defined.
                    spec.discovered_parents = {"a_self", "top_count"};
                    for (int k = 1; k <= full.p(); ++k)
                        spec.discovered_parents.push_back(
                            "x" + std::to_string(i + 1) + "_" + std::to_string(k));
                }
            }
            OutcomeModel model = fit_outcome(train, i, spec, kind, opts);
            std::vector<double> scores;
            scores.reserve(test.size());
            for (const auto& pv : test.pageviews) scores.push_back(model.predict(pv));
            const double a = auc(scores, labels);
            if (v == Variant::baseline) baseline_auc = a;
            const double rel = (a - baseline_auc) / baseline_auc * 100.0;
            csv += std::to_string(i + 1) + "," + variant_name(v) + "," + format_double(a) + "," +
                   format_double(rel) + "\n";
            out.push_back({{"position", i + 1},
                           {"variant", variant_name(v)},
                           {"auc", a},
                           {"rel_diff_pct", rel},
                           {"n_train", train.size()},
                           {"n_test", test.size()}});
        }
    }

    OutDir dir(args.out_dir);
    json resolved = {{"dataset", args.dataset_path},
                     {"model_kind", args.model_kind},
                     {"trees", args.trees},
                     {"depth", args.depth},
                     {"ridge", args.ridge},
                     {"train_fraction", args.train_fraction},
                     {"parents_file", args.parents_file},
                     {"alpha", args.alpha},
                     {"max_cond", args.max_cond},
                     {"positive_only", args.positive_only},
                     {"seed", seed},
                     {"jobs", args.jobs}};
    MetaBuilder meta("predict-eval", resolved);
    meta.input("dataset", args.dataset_path);
    if (!args.parents_file.empty()) meta.input("parents", args.parents_file);
    meta.output(dir, "auc.csv", csv);
    meta.output(dir, "auc.json", json(out).dump(2) + "\n");
    meta.write(dir);
    std::cout << "predict-eval: " << out.size() << " (position, variant) AUCs -> "
              << dir.file("auc.csv") << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
    std::string dir;
    std::string out_dir;
};

int cmd_report(const ReportArgs& args) {
    const fs::path src(args.dir.empty() ? args.out_dir : args.dir);
    auto need = [&](const std::string& name, const std::string& producer) {
        const fs::path p = src / name;
        if (!fs::exists(p))
            throw std::runtime_error("report: missing " + p.string() + "; run `interference_lab " +
                                     producer + "` first");
        return p.string();
    };
    auto optional_file = [&](const std::string& name) -> std::optional<std::string> {
        const fs::path p = src / name;
        if (!fs::exists(p)) return std::nullopt;
        return p.string();
    };

    const std::string estimates_path = need("estimates.json", "estimate");
    json estimates = json::parse(read_text_file(estimates_path));

    std::string report;
    report += "pageview interference report\n";
    report += "============================\n\n";

    // Counterfactual mean table with oracle comparison when available.
    std::map<std::pair<std::string, int>, std::pair<double, double>> oracle; // rule,pos -> psi,se
    if (auto path = optional_file("truth_oracle.csv")) {
        // Format: rule,position,psi,mc_se,n_draws
        std::istringstream in(read_text_file(*path));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string rule, pos, psi, se, nd;
            std::getline(row, rule, ',');
            std::getline(row, pos, ',');
            std::getline(row, psi, ',');
            std::getline(row, se, ',');
            std::getline(row, nd, ',');
            oracle[{rule, std::stoi(pos)}] = {parse_double(psi), parse_double(se)};
        }
        report += "oracle table: " + *path + "\n\n";
    }

    report += "counterfactual means (AIPW)\n";
    int flagged = 0;
    for (const auto& target : estimates.at("targets")) {
        const std::string rule = target.at("rule").get<std::string>();
        const int position = target.at("position").get<int>();
        const auto& aipw = target.at("aipw");
        const double value = aipw.at("value").get<double>();
        const double lo = aipw.at("ci_low").get<double>();
        const double hi = aipw.at("ci_high").get<double>();
        report += "  E[Y" + std::to_string(position) + "(" + rule + ")] = " + fixed(value) +
                  "  [" + fixed(lo) + ", " + fixed(hi) + "]";
        auto it = oracle.find({rule, position});
        if (it != oracle.end()) {
            report += "  oracle " + fixed(it->second.first);
            if (it->second.first < lo || it->second.first > hi) {
                report += "  ** CI excludes oracle **";
                ++flagged;
            }
        }
        report += "\n";
    }
    report += "\n";
    if (!oracle.empty())
        report += "intervals excluding the oracle value: " + std::to_string(flagged) + "\n\n";

    if (auto path = optional_file("effects.csv")) {
        report += "effects table: " + *path + "\n";
        std::istringstream in(read_text_file(*path));
        std::string line;
        std::getline(in, line);
        int shown = 0;
        while (std::getline(in, line) && shown < 12) {
            if (line.rfind("UE", 0) == 0 || line.rfind("AOE", 0) == 0) {
                report += "  " + line + "\n";
                ++shown;
            }
        }
        report += "\n";
    }

    if (auto path = optional_file("parents.json")) {
        json parents = json::parse(read_text_file(*path));
        report += "discovered parents\n";
        for (const auto& entry : parents) {
            report += "  " + entry.at("target").get<std::string>() + ":";
            for (const auto& p : entry.at("parents"))
                report += " " + p.at("column").get<std::string>();
            report += "\n";
        }
        report += "\n";
    }

    if (auto path = optional_file("auc.csv")) {
        report += "click prediction (held-out AUC)\n";
        std::istringstream in(read_text_file(*path));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line))
            if (!line.empty()) report += "  " + line + "\n";
        report += "\n";
    }

    // Provenance: digests of everything consumed.
    report += "provenance\n";
    report += "  tool: " + std::string(kVersion) + "\n";
    for (const auto& name : {"meta.json", "estimates.json", "truth_oracle.csv", "effects.csv",
                             "parents.json", "auc.csv"}) {
        if (auto path = optional_file(name))
            report += "  " + std::string(name) + ": " + content_digest(read_text_file(*path)) +
                      "\n";
    }

    OutDir dir(args.out_dir);
    json resolved = {{"source_dir", src.string()}};
    MetaBuilder meta("report", resolved);
    meta.input("estimates", estimates_path);
    meta.output(dir, "report.txt", report);
    meta.write(dir);
    std::cout << "report: " << dir.file("report.txt") << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{std::string(kVersion) +
                 " - causal effect estimation for ad placement under interference"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* s = app.add_subcommand("simulate", "draw pageviews and ground-truth oracle tables");
    s->add_option("--config", sim.config_path, "structural-equation config JSON");
    s->add_option("--n", sim.n, "pageviews to draw");
    s->add_option("--oracle-draws", sim.oracle_draws, "Monte Carlo draws per oracle value");
    s->add_option("--seed", sim.seed, "seed override");
    s->add_option("--out-dir", sim.out_dir, "output directory");
    s->add_option("--jobs", sim.jobs, "worker threads (0 = auto)");

    GraphArgs graph;
    auto* g = app.add_subcommand("graph", "emit the pageview DAG, its SWIG and the ignorability verdict");
    g->add_option("--m", graph.m, "ads per pageview");
    g->add_option("--rule", graph.rule_str, "allocation rule, e.g. 110");
    g->add_option("--inject-edge", graph.inject, "extra edge FROM->TO (repeatable)");
    g->add_option("--out-dir", graph.out_dir, "output directory");

    EstimateArgs est;
    auto* e = app.add_subcommand("estimate", "counterfactual means and interference effects");
    e->add_option("--dataset", est.dataset_path, "dataset CSV");
    e->add_option("--out-dir", est.out_dir, "output directory");
    e->add_option("--outcome-kind", est.outcome_kind, "logistic|forest");
    e->add_option("--propensity-kind", est.propensity_kind, "logistic|forest");
    e->add_option("--propensity-mode", est.propensity_mode, "joint|product");
    e->add_option("--outcome-variant", est.outcome_variant,
                  "baseline|block|block-cross|full conditioning set");
    e->add_option("--k-folds", est.k_folds, "cross-fitting folds (1 = in-sample)");
    e->add_option("--bootstrap", est.bootstrap_b, "bootstrap resamples (0 = influence SEs)");
    e->add_option("--level", est.level, "confidence level");
    e->add_option("--trees", est.trees, "forest size");
    e->add_option("--depth", est.depth, "forest depth");
    e->add_option("--ridge", est.ridge, "logistic ridge penalty");
    e->add_option("--feature-frac", est.feature_frac,
                  "forest feature fraction per split (0 = sqrt(d))");
    e->add_flag("--save-models", est.save_models, "serialize the full-data nuisance fits");
    e->add_option("--models-dir", est.models_dir,
                  "reuse nuisance fits saved by a previous --save-models run");
    e->add_option("--smoothing", est.smoothing, "propensity smoothing for unobserved rules");
    e->add_option("--seed", est.seed, "seed override");
    e->add_option("--jobs", est.jobs, "worker threads (0 = auto)");

    DiscoverArgs disc;
    auto* dsc = app.add_subcommand("discover", "learn outcome parents from preprocessed data");
    dsc->add_option("--dataset", disc.dataset_path, "dataset CSV");
    dsc->add_option("--out-dir", disc.out_dir, "output directory");
    dsc->add_option("--alpha", disc.alpha, "significance level");
    dsc->add_option("--test", disc.test, "fisher_z|kernel");
    dsc->add_option("--max-cond", disc.max_cond, "max conditioning set size");
    dsc->add_option("--position", disc.positions, "1-based position (0 = all)");
    dsc->add_option("--kernel-cap", disc.kernel_cap, "kernel test row cap");
    dsc->add_option("--n-perm", disc.n_perm, "kernel permutations");
    dsc->add_flag("--keep-self-d1", disc.keep_self_d1, "spare the target's own features in D1");
    dsc->add_flag("--emit-tables", disc.emit_tables, "write the preprocessed D1|D2 tables as CSV");
    dsc->add_option("--seed", disc.seed, "seed override");
    dsc->add_option("--jobs", disc.jobs, "worker threads (0 = auto)");

    PredictEvalArgs pe;
    auto* p = app.add_subcommand("predict-eval", "compare click models with/without interference features");
    p->add_option("--dataset", pe.dataset_path, "dataset CSV");
    p->add_option("--out-dir", pe.out_dir, "output directory");
    p->add_option("--model-kind", pe.model_kind, "logistic|forest");
    p->add_option("--trees", pe.trees, "forest size");
    p->add_option("--depth", pe.depth, "forest depth");
    p->add_option("--ridge", pe.ridge, "logistic ridge penalty");
    p->add_option("--train-fraction", pe.train_fraction, "train split fraction");
    p->add_option("--parents-file", pe.parents_file, "parents.json from a discover run");
    p->add_option("--alpha", pe.alpha, "discovery alpha when no parents file is given");
    p->add_option("--max-cond", pe.max_cond, "discovery conditioning cap");
    p->add_flag("--positive-only", pe.positive_only, "keep pageviews with at least one click");
    p->add_option("--seed", pe.seed, "seed override");
    p->add_option("--jobs", pe.jobs, "worker threads (0 = auto)");

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "merge prior outputs into one summary");
    r->add_option("--dir", rep.dir, "directory holding prior artifacts");
    r->add_option("--out-dir", rep.out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& help) {
        return app.exit(help);
    } catch (const CLI::ParseError& err) {
        app.exit(err);
        return 2;
    }

    try {
        if (s->parsed()) return cmd_simulate(sim);
        if (g->parsed()) return cmd_graph(graph);
        if (e->parsed()) return cmd_estimate(est);
        if (dsc->parsed()) return cmd_discover(disc);
        if (p->parsed()) return cmd_predict_eval(pe);
        if (r->parsed()) return cmd_report(rep);
    } catch (const std::invalid_argument& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    }
    return 0;
}
