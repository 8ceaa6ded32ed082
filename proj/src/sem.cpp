#include "ilab/sem.hpp"

#include "ilab/parallel.hpp"
#include "ilab/table.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ilab {

namespace {

constexpr std::uint64_t kStreamData = 0x11;
constexpr std::uint64_t kStreamOracle = 0x22;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument("SemConfig: " + msg);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
}

} // namespace

void SemConfig::validate() const {
    require(m >= 1, "m must be >= 1");
    require(p >= 1, "p must be >= 1");
    require(sigma_c > 0.0, "sigma_c must be > 0");
    require(sigma_x > 0.0, "sigma_x must be > 0");
    require(static_cast<int>(delta.size()) == m, "delta must have length m");
    require(delta_top.empty() || static_cast<int>(delta_top.size()) == m,
            "delta_top must be empty or length m");
    require(static_cast<int>(gamma.size()) == p, "gamma must have length p");
    require(static_cast<int>(eta.size()) == p, "eta must have length p");
    require(gamma_self.empty() || static_cast<int>(gamma_self.size()) == p,
            "gamma_self must be empty or length p");
    require(static_cast<int>(w_prop.size()) == p, "w_prop must have length p");
    require(epsilon_pos > 0.0 && epsilon_pos * (m + 1) < 1.0,
            "epsilon_pos must lie in (0, 1/(m+1))");
}

std::string SemConfig::to_json() const {
    nlohmann::json j;
    j["m"] = m;
    j["p"] = p;
    j["lambda_u"] = lambda_u;
    j["beta0"] = beta0;
    j["delta"] = delta;
    if (!delta_top.empty()) j["delta_top"] = delta_top;
    j["gamma"] = gamma;
    j["eta"] = eta;
    if (!gamma_self.empty()) j["gamma_self"] = gamma_self;
    j["w_prop"] = w_prop;
    j["sigma_c"] = sigma_c;
    j["sigma_x"] = sigma_x;
    j["epsilon_pos"] = epsilon_pos;
    j["seed"] = seed;
    return j.dump(2);
}

SemConfig SemConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    SemConfig cfg;
    cfg.m = j.at("m").get<int>();
    cfg.p = j.at("p").get<int>();
    cfg.lambda_u = j.at("lambda_u").get<double>();
    cfg.beta0 = j.at("beta0").get<double>();
    cfg.delta = j.at("delta").get<std::vector<double>>();
    if (j.contains("delta_top")) cfg.delta_top = j["delta_top"].get<std::vector<double>>();
    cfg.gamma = j.at("gamma").get<std::vector<double>>();
    cfg.eta = j.at("eta").get<std::vector<double>>();
    if (j.contains("gamma_self")) cfg.gamma_self = j["gamma_self"].get<std::vector<double>>();
    cfg.w_prop = j.at("w_prop").get<std::vector<double>>();
    cfg.sigma_c = j.at("sigma_c").get<double>();
    cfg.sigma_x = j.at("sigma_x").get<double>();
    if (j.contains("epsilon_pos")) cfg.epsilon_pos = j["epsilon_pos"].get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

std::string SemConfig::digest() const { return content_digest(to_json()); }

int Dataset::m() const {
    if (pageviews.empty()) throw std::logic_error("Dataset::m: empty dataset");
    return pageviews.front().a.size();
}

int Dataset::p() const {
    if (pageviews.empty()) throw std::logic_error("Dataset::p: empty dataset");
    return static_cast<int>(pageviews.front().x.front().size());
}

std::vector<std::string> dataset_schema(int m, int p) {
    std::vector<std::string> names;
    for (int i = 1; i <= m; ++i)
        for (int k = 1; k <= p; ++k)
            names.push_back("x" + std::to_string(i) + "_" + std::to_string(k));
    return names;
}

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

double outcome_predictor(const SemConfig& cfg, double u,
                         const std::vector<std::vector<double>>& x, const AllocationRule& a,
                         int position) {
    if (!a.valid()) throw std::invalid_argument("outcome_predictor: invalid rule " + a.str());
    if (position < 0 || position >= cfg.m)
        throw std::invalid_argument("outcome_predictor: position out of range");
    double lin = cfg.beta0 + cfg.delta[position] + cfg.lambda_u * u;
    if (!cfg.delta_top.empty() && a.bits[position] == 1) lin += cfg.delta_top[position];
    if (!cfg.gamma_self.empty()) lin += dot(cfg.gamma_self, x[position]);
    for (int j = 0; j < cfg.m; ++j)
        lin += (a.bits[j] == a.bits[position]) ? dot(cfg.gamma, x[j]) : dot(cfg.eta, x[j]);
    return lin;
}

double outcome_probability(const SemConfig& cfg, double u,
                           const std::vector<std::vector<double>>& x, const AllocationRule& a,
                           int position) {
    return sigmoid(outcome_predictor(cfg, u, x, a, position));
}

std::vector<double> true_rule_probs(const SemConfig& cfg,
                                    const std::vector<std::vector<double>>& x) {
    const auto rules = enumerate_valid_rules(cfg.m);
    std::vector<double> scores(rules.size(), 0.0);
    for (std::size_t r = 0; r < rules.size(); ++r)
        for (int j = 0; j < cfg.m; ++j)
            if (rules[r].bits[j]) scores[r] += dot(cfg.w_prop, x[j]);
    double smax = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double& s : scores) {
        s = std::exp(s - smax);
        z += s;
    }
    // Uniform floor keeps every rule at probability >= epsilon_pos even for
    // extreme feature draws.
    const double rho = cfg.epsilon_pos * static_cast<double>(rules.size());
    std::vector<double> probs(rules.size());
    for (std::size_t r = 0; r < rules.size(); ++r)
        probs[r] = (1.0 - rho) * scores[r] / z + rho / static_cast<double>(rules.size());
    return probs;
}

namespace {

struct DrawnPage {
    double u;
    double c;
    std::vector<std::vector<double>> x;
};

DrawnPage draw_covariates(const SemConfig& cfg, Rng& rng) {
    DrawnPage page;
    page.u = rng.normal();
    page.c = page.u + cfg.sigma_c * rng.normal();
    page.x.assign(cfg.m, std::vector<double>(cfg.p, 0.0));
    for (int i = 0; i < cfg.m; ++i)
        for (int k = 0; k < cfg.p; ++k) {
            double mean = (k == cfg.basis_index(i)) ? page.c : 0.0;
            page.x[i][k] = mean + cfg.sigma_x * rng.normal();
        }
    return page;
}

} // namespace

SimulationResult simulate_traced(const SemConfig& cfg, std::size_t n_pageviews) {
    cfg.validate();
    const auto rules = enumerate_valid_rules(cfg.m);
    SimulationResult out;
    out.data.schema = dataset_schema(cfg.m, cfg.p);
    out.data.provenance = cfg.digest();
    out.data.pageviews.resize(n_pageviews);
    out.traces.resize(n_pageviews);

    const Rng root = Rng(cfg.seed).derive(kStreamData);
    parallel_for(n_pageviews, [&](std::size_t n) {
        Rng rng = root.derive(n);
        DrawnPage page = draw_covariates(cfg, rng);
        std::vector<double> probs = true_rule_probs(cfg, page.x);
        for (double pr : probs)
            if (pr < cfg.epsilon_pos - 1e-12)
                throw std::logic_error("positivity violated during simulation");
        std::size_t ridx = rng.categorical(probs);

        Pageview pv;
        pv.id = static_cast<long>(n);
        pv.x = std::move(page.x);
        pv.a = rules[ridx];
        pv.y.resize(cfg.m);
        PageviewTrace trace;
        trace.u = page.u;
        trace.c = page.c;
        trace.rule_probs = probs;
        trace.click_prob.resize(cfg.m);
        for (int i = 0; i < cfg.m; ++i) {
            double pr = outcome_probability(cfg, page.u, pv.x, pv.a, i);
            trace.click_prob[i] = pr;
            pv.y[i] = rng.bernoulli(pr) ? 1 : 0;
        }
        out.data.pageviews[n] = std::move(pv);
        out.traces[n] = std::move(trace);
    });
    return out;
}

Dataset simulate(const SemConfig& cfg, std::size_t n_pageviews) {
    return simulate_traced(cfg, n_pageviews).data;
}

std::vector<OracleValue> oracle_all_positions(const SemConfig& cfg, const AllocationRule& a,
                                              std::size_t n_draws, std::size_t draw_offset) {
    cfg.validate();
    if (!a.valid() || a.size() != cfg.m)
        throw std::invalid_argument("counterfactual_oracle: invalid rule " + a.str());
    if (n_draws == 0) throw std::invalid_argument("counterfactual_oracle: n_draws must be > 0");

    // Common random numbers across rules: contrasts of symmetric rules are
    // exactly zero and quadrature-propagated errors stay conservative.
    const Rng root = Rng(cfg.seed).derive(kStreamOracle);

    // Fixed-size chunks accumulated in index order, so totals do not depend
    // on the worker count.
    const std::size_t chunk = 8192;
    const std::size_t n_chunks = (n_draws + chunk - 1) / chunk;
    std::vector<std::vector<double>> sum(n_chunks), sumsq(n_chunks);
    parallel_for(n_chunks, [&](std::size_t ci) {
        std::vector<double> s(cfg.m, 0.0), s2(cfg.m, 0.0);
        const std::size_t begin = ci * chunk;
        const std::size_t end = std::min(n_draws, begin + chunk);
        for (std::size_t d = begin; d < end; ++d) {
            Rng rng = root.derive(draw_offset + d);
            DrawnPage page = draw_covariates(cfg, rng);
            for (int i = 0; i < cfg.m; ++i) {
                double pr = outcome_probability(cfg, page.u, page.x, a, i);
                s[i] += pr;
                s2[i] += pr * pr;
            }
        }
        sum[ci] = std::move(s);
        sumsq[ci] = std::move(s2);
    });

    std::vector<OracleValue> out(cfg.m);
    for (int i = 0; i < cfg.m; ++i) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t ci = 0; ci < n_chunks; ++ci) {
            s += sum[ci][i];
            s2 += sumsq[ci][i];
        }
        const double n = static_cast<double>(n_draws);
        const double mean = s / n;
        const double var = std::max(0.0, s2 / n - mean * mean);
        out[i].psi = mean;
        out[i].mc_se = std::sqrt(var / n);
        out[i].n_draws = n_draws;
    }
    return out;
}

OracleValue counterfactual_oracle(const SemConfig& cfg, const AllocationRule& a, int position,
                                  std::size_t n_draws, std::size_t draw_offset) {
    if (position < 0 || position >= cfg.m)
        throw std::invalid_argument("counterfactual_oracle: position out of range");
    return oracle_all_positions(cfg, a, n_draws, draw_offset)[position];
}

std::string effect_kind_name(EffectKind k) {
    switch (k) {
        case EffectKind::unit: return "UE";
        case EffectKind::spillover: return "SE";
        case EffectKind::overall: return "OE";
        case EffectKind::average_overall: return "AOE";
    }
    throw std::logic_error("effect_kind_name: unknown kind");
}

std::vector<TrueEffectRow> effects_from_psi(
    const std::vector<AllocationRule>& rules,
    const std::vector<std::vector<OracleValue>>& psi_by_rule, int position) {
    if (rules.empty() || psi_by_rule.size() != rules.size())
        throw std::invalid_argument("effects_from_psi: psi table shape mismatch");
    const int m = rules.front().size();
    if (position < 0 || position >= m)
        throw std::invalid_argument("effects_from_psi: position out of range");

    std::vector<TrueEffectRow> out;
    for (std::size_t ra = 0; ra < rules.size(); ++ra) {
        for (std::size_t rb = 0; rb < rules.size(); ++rb) {
            if (ra == rb) continue;
            const OracleValue& va = psi_by_rule[ra][position];
            const OracleValue& vb = psi_by_rule[rb][position];
            const double value = va.psi - vb.psi;
            const double se = std::hypot(va.mc_se, vb.mc_se);
            int diff = 0;
            for (int j = 0; j < m; ++j) diff += rules[ra].bits[j] != rules[rb].bits[j];
            const bool same_at_i = rules[ra].bits[position] == rules[rb].bits[position];
            out.push_back({EffectKind::overall, position, rules[ra], rules[rb], value, se});
            if (diff == 1 && !same_at_i)
                out.push_back({EffectKind::unit, position, rules[ra], rules[rb], value, se});
            if (same_at_i)
                out.push_back({EffectKind::spillover, position, rules[ra], rules[rb], value, se});
        }
    }
    return out;
}

std::vector<TrueEffectRow> ground_truth_effects(const SemConfig& cfg, int position,
                                                std::size_t n_draws) {
    const auto rules = enumerate_valid_rules(cfg.m);
    std::vector<std::vector<OracleValue>> psi(rules.size());
    for (std::size_t r = 0; r < rules.size(); ++r)
        psi[r] = oracle_all_positions(cfg, rules[r], n_draws);
    return effects_from_psi(rules, psi, position);
}

std::string Dataset::to_csv() const {
    if (schema.empty()) throw std::logic_error("Dataset::to_csv: missing schema");
    // Schema carries the layout even when there are no rows.
    int m_cols = 0;
    for (const auto& name : schema) {
        auto us = name.find('_');
        m_cols = std::max(m_cols, std::stoi(name.substr(1, us - 1)));
    }
    DataTable t;
    t.columns.push_back("pv_id");
    for (const auto& name : schema) t.columns.push_back(name);
    for (int i = 1; i <= m_cols; ++i) t.columns.push_back("a" + std::to_string(i));
    for (int i = 1; i <= m_cols; ++i) t.columns.push_back("y" + std::to_string(i));

    for (const auto& pv : pageviews) {
        std::vector<double> row;
        row.reserve(t.columns.size());
        row.push_back(static_cast<double>(pv.id));
        for (const auto& xi : pv.x) row.insert(row.end(), xi.begin(), xi.end());
        for (int b : pv.a.bits) row.push_back(b);
        for (int yi : pv.y) row.push_back(yi);
        t.rows.push_back(std::move(row));
    }
    return t.to_csv();
}

Dataset Dataset::from_csv(const std::string& text) {
    DataTable t = DataTable::from_csv(text);
    if (t.columns.empty() || t.columns[0] != "pv_id")
        throw std::invalid_argument("dataset CSV: first column must be pv_id");
    int m = 0, p = 0;
    for (const auto& name : t.columns) {
        if (name.size() > 1 && name[0] == 'a' && name.find('_') == std::string::npos)
            m = std::max(m, std::stoi(name.substr(1)));
        if (name.size() > 1 && name[0] == 'x') {
            auto us = name.find('_');
            if (us != std::string::npos) p = std::max(p, std::stoi(name.substr(us + 1)));
        }
    }
    if (m < 1 || p < 1) throw std::invalid_argument("dataset CSV: cannot infer m and p from header");
    const auto expected = [&] {
        std::vector<std::string> cols{"pv_id"};
        for (const auto& name : dataset_schema(m, p)) cols.push_back(name);
        for (int i = 1; i <= m; ++i) cols.push_back("a" + std::to_string(i));
        for (int i = 1; i <= m; ++i) cols.push_back("y" + std::to_string(i));
        return cols;
    }();
    if (t.columns != expected)
        throw std::invalid_argument("dataset CSV: header does not match the expected layout");

    Dataset d;
    d.schema = dataset_schema(m, p);
    d.provenance = "external";
    d.pageviews.reserve(t.n_rows());
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
        const auto& row = t.rows[r];
        Pageview pv;
        pv.id = static_cast<long>(row[0]);
        pv.x.assign(m, std::vector<double>(p, 0.0));
        std::size_t c = 1;
        for (int i = 0; i < m; ++i)
            for (int k = 0; k < p; ++k) pv.x[i][k] = row[c++];
        std::vector<int> bits(m);
        for (int i = 0; i < m; ++i) {
            double b = row[c++];
            if (b != 0.0 && b != 1.0)
                throw std::invalid_argument("dataset CSV row " + std::to_string(r + 2) +
                                            ": allocation bits must be 0/1");
            bits[i] = static_cast<int>(b);
        }
        pv.a = AllocationRule(bits);
        if (!pv.a.valid())
            throw std::invalid_argument("dataset CSV row " + std::to_string(r + 2) +
                                        ": observed rule " + pv.a.str() +
                                        " violates position monotonicity");
        pv.y.resize(m);
        for (int i = 0; i < m; ++i) {
            double yv = row[c++];
            if (yv != 0.0 && yv != 1.0)
                throw std::invalid_argument("dataset CSV row " + std::to_string(r + 2) +
                                            ": clicks must be 0/1");
            pv.y[i] = static_cast<int>(yv);
        }
        d.pageviews.push_back(std::move(pv));
    }
    return d;
}

TrueOutcomeModel::TrueOutcomeModel(SemConfig cfg, int quadrature_order) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (quadrature_order < 1) throw std::invalid_argument("quadrature order must be >= 1");
    // Golub-Welsch for Gauss-Hermite (physicists'): eigen-decompose the
    // Jacobi matrix; weights from first eigenvector components.
    const int n = quadrature_order;
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        double b = std::sqrt(k / 2.0);
        jacobi(k, k - 1) = b;
        jacobi(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi);
    gh_nodes_.resize(n);
    gh_weights_.resize(n);
    const double sqrt_pi = std::sqrt(M_PI);
    for (int k = 0; k < n; ++k) {
        gh_nodes_[k] = solver.eigenvalues()(k);
        const double v0 = solver.eigenvectors()(0, k);
        gh_weights_[k] = sqrt_pi * v0 * v0;
    }
}

void TrueOutcomeModel::posterior_u(const std::vector<std::vector<double>>& x, double* mean,
                                   double* var) const {
    // C has prior variance 1 + sigma_c^2; each basis coordinate of X_i is a
    // noisy observation of C with variance sigma_x^2.
    const double var_c_prior = 1.0 + cfg_.sigma_c * cfg_.sigma_c;
    const double sx2 = cfg_.sigma_x * cfg_.sigma_x;
    double obs_sum = 0.0;
    for (int i = 0; i < cfg_.m; ++i) obs_sum += x[i][cfg_.basis_index(i)];
    const double prec_c = 1.0 / var_c_prior + cfg_.m / sx2;
    const double mu_c = (obs_sum / sx2) / prec_c;
    const double var_c = 1.0 / prec_c;
    // U | C is Gaussian with mean C / (1 + sigma_c^2).
    const double shrink = 1.0 / var_c_prior;
    *mean = shrink * mu_c;
    *var = (1.0 - shrink) + shrink * shrink * var_c;
}

double TrueOutcomeModel::conditional_mean(const std::vector<std::vector<double>>& x,
                                          const AllocationRule& a, int position) const {
    double mu, var;
    posterior_u(x, &mu, &var);
    const double sd = std::sqrt(var);
    const double base = outcome_predictor(cfg_, 0.0, x, a, position);
    if (cfg_.lambda_u == 0.0) return sigmoid(base);
    const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
    double total = 0.0;
    for (std::size_t k = 0; k < gh_nodes_.size(); ++k) {
        const double u = mu + std::sqrt(2.0) * sd * gh_nodes_[k];
        total += gh_weights_[k] * sigmoid(base + cfg_.lambda_u * u);
    }
    return total * inv_sqrt_pi;
}

} // namespace ilab
