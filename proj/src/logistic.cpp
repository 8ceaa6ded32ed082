#include "ilab/models.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ilab {

namespace {

constexpr double kGradTol = 1e-8;
constexpr int kMaxIter = 500;
constexpr double kWeightWarnThreshold = 30.0;

Eigen::MatrixXd design_matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("fit: empty training data");
    const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
    const Eigen::Index d = static_cast<Eigen::Index>(rows[0].size());
    Eigen::MatrixXd x(n, d + 1);
    for (Eigen::Index r = 0; r < n; ++r) {
        if (static_cast<Eigen::Index>(rows[r].size()) != d)
            throw std::invalid_argument("fit: ragged feature rows");
        x(r, 0) = 1.0;
        for (Eigen::Index c = 0; c < d; ++c) x(r, c + 1) = rows[r][c];
    }
    return x;
}

void check_binary_labels(const std::vector<int>& labels, std::size_t n) {
    if (labels.size() != n) throw std::invalid_argument("fit: labels/rows size mismatch");
    bool has0 = false, has1 = false;
    for (int y : labels) {
        if (y == 0) has0 = true;
        else if (y == 1) has1 = true;
        else throw std::invalid_argument("fit: labels must be 0/1");
    }
    if (!has0 || !has1) throw std::invalid_argument("fit: need both classes present");
}

} // namespace

double LogisticModel::decision(std::span<const double> features) const {
    if (features.size() + 1 != weights.size())
        throw std::invalid_argument("LogisticModel: feature width mismatch");
    double t = weights[0];
    for (std::size_t k = 0; k < features.size(); ++k) t += weights[k + 1] * features[k];
    return t;
}

double LogisticModel::predict(std::span<const double> features) const {
    return sigmoid(decision(features));
}

LogisticModel fit_logistic(const std::vector<std::vector<double>>& rows,
                           const std::vector<int>& labels, double ridge,
                           const std::vector<double>* warm_start) {
    if (ridge < 0.0) throw std::invalid_argument("fit_logistic: ridge must be >= 0");
    check_binary_labels(labels, rows.size());

    const Eigen::MatrixXd x = design_matrix(rows);
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    Eigen::VectorXd y(n);
    for (Eigen::Index r = 0; r < n; ++r) y(r) = labels[r];

    Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
    if (warm_start) {
        if (static_cast<Eigen::Index>(warm_start->size()) != d)
            throw std::invalid_argument("fit_logistic: warm start width mismatch");
        for (Eigen::Index k = 0; k < d; ++k) w(k) = (*warm_start)[k];
    }

    // Mean-scale penalized deviance; the intercept is not penalized.
    Eigen::VectorXd pen_mask = Eigen::VectorXd::Ones(d);
    pen_mask(0) = 0.0;

    auto loss_at = [&](const Eigen::VectorXd& wv, Eigen::VectorXd* probs) -> double {
        Eigen::VectorXd t = x * wv;
        double total = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
            // log(1+exp(.)) without overflow
            double z = t(r);
            total += (z > 0 ? z : 0.0) + std::log1p(std::exp(-std::abs(z))) - y(r) * z;
            if (probs) (*probs)(r) = sigmoid(z);
        }
        double penalty = 0.5 * ridge * (pen_mask.array() * wv.array() * wv.array()).sum();
        return total / static_cast<double>(n) + penalty;
    };

    Eigen::VectorXd probs(n);
    double loss = loss_at(w, &probs);
    int iter = 0;
    double grad_norm = 0.0;
    for (; iter < kMaxIter; ++iter) {
        Eigen::VectorXd grad =
            x.transpose() * (probs - y) / static_cast<double>(n) +
            ridge * (pen_mask.array() * w.array()).matrix();
        grad_norm = grad.lpNorm<Eigen::Infinity>();
        if (grad_norm <= kGradTol) break;

        Eigen::VectorXd wdiag = (probs.array() * (1.0 - probs.array())).matrix();
        Eigen::MatrixXd hess =
            x.transpose() * wdiag.asDiagonal() * x / static_cast<double>(n);
        hess.diagonal() += ridge * pen_mask;
        hess.diagonal().array() += 1e-12; // keep the solve well-posed near separation
        Eigen::VectorXd step = hess.ldlt().solve(grad);

        double scale = 1.0;
        Eigen::VectorXd w_new;
        double loss_new = 0.0;
        for (int half = 0; half < 40; ++half) {
            w_new = w - scale * step;
            loss_new = loss_at(w_new, &probs);
            if (loss_new <= loss + 1e-14) break;
            scale *= 0.5;
        }
        if (loss - loss_new < 1e-15 && grad_norm < 1e-6) {
            w = w_new;
            break;
        }
        w = w_new;
        loss = loss_new;
    }

    LogisticModel model;
    model.weights.assign(w.data(), w.data() + d);
    loss_at(w, &probs);
    double ll = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        double pr = std::min(1.0 - 1e-15, std::max(1e-15, probs(r)));
        ll -= y(r) * std::log(pr) + (1.0 - y(r)) * std::log(1.0 - pr);
    }
    model.diag.log_loss = ll / static_cast<double>(n);
    model.diag.iterations = iter;
    model.diag.grad_norm = grad_norm;
    if (w.lpNorm<Eigen::Infinity>() > kWeightWarnThreshold)
        model.diag.warning = "weights very large; data may be separable";
    else if (iter >= kMaxIter)
        model.diag.warning = "Newton did not converge within iteration cap";
    return model;
}

std::vector<double> MultinomialModel::probs(std::span<const double> features) const {
    std::vector<double> logits(n_classes, 0.0);
    for (int c = 0; c + 1 < n_classes; ++c) {
        const auto& wc = weights[c];
        if (features.size() + 1 != wc.size())
            throw std::invalid_argument("MultinomialModel: feature width mismatch");
        double t = wc[0];
        for (std::size_t k = 0; k < features.size(); ++k) t += wc[k + 1] * features[k];
        logits[c] = t;
    }
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    std::vector<double> out(n_classes);
    for (int c = 0; c < n_classes; ++c) {
        out[c] = std::exp(logits[c] - mx);
        z += out[c];
    }
    for (double& v : out) v /= z;
    return out;
}

MultinomialModel fit_multinomial(const std::vector<std::vector<double>>& rows,
                                 const std::vector<int>& labels, int n_classes, double ridge,
                                 const MultinomialModel* warm_start) {
    if (n_classes < 2) throw std::invalid_argument("fit_multinomial: need >= 2 classes");
    if (labels.size() != rows.size())
        throw std::invalid_argument("fit_multinomial: labels/rows size mismatch");
    for (int y : labels)
        if (y < 0 || y >= n_classes)
            throw std::invalid_argument("fit_multinomial: label out of range");

    const Eigen::MatrixXd x = design_matrix(rows);
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    const int kk = n_classes - 1; // free classes
    const Eigen::Index nparam = kk * d;

    Eigen::VectorXd w = Eigen::VectorXd::Zero(nparam);
    if (warm_start && warm_start->n_classes == n_classes &&
        static_cast<Eigen::Index>(warm_start->weights[0].size()) == d) {
        for (int c = 0; c < kk; ++c)
            for (Eigen::Index k = 0; k < d; ++k) w(c * d + k) = warm_start->weights[c][k];
    }

    Eigen::VectorXd pen_mask = Eigen::VectorXd::Ones(nparam);
    for (int c = 0; c < kk; ++c) pen_mask(c * d) = 0.0;

    Eigen::MatrixXd probs(n, n_classes);
    auto loss_at = [&](const Eigen::VectorXd& wv) -> double {
        double total = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
            double mx = 0.0; // reference logit
            Eigen::VectorXd logit(n_classes);
            logit(n_classes - 1) = 0.0;
            for (int c = 0; c < kk; ++c) {
                logit(c) = x.row(r).dot(wv.segment(c * d, d));
                mx = std::max(mx, logit(c));
            }
            double z = 0.0;
            for (int c = 0; c < n_classes; ++c) z += std::exp(logit(c) - mx);
            for (int c = 0; c < n_classes; ++c) probs(r, c) = std::exp(logit(c) - mx) / z;
            total += -(logit(labels[r]) - mx - std::log(z));
        }
        double penalty = 0.5 * ridge * (pen_mask.array() * wv.array() * wv.array()).sum();
        return total / static_cast<double>(n) + penalty;
    };

    double loss = loss_at(w);
    int iter = 0;
    double grad_norm = 0.0;
    for (; iter < kMaxIter; ++iter) {
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(nparam);
        for (int c = 0; c < kk; ++c) {
            Eigen::VectorXd resid = probs.col(c);
            for (Eigen::Index r = 0; r < n; ++r)
                if (labels[r] == c) resid(r) -= 1.0;
            grad.segment(c * d, d) = x.transpose() * resid / static_cast<double>(n);
        }
        grad += ridge * (pen_mask.array() * w.array()).matrix();
        grad_norm = grad.lpNorm<Eigen::Infinity>();
        if (grad_norm <= kGradTol) break;

        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(nparam, nparam);
        for (int c1 = 0; c1 < kk; ++c1) {
            for (int c2 = c1; c2 < kk; ++c2) {
                Eigen::VectorXd wdiag(n);
                for (Eigen::Index r = 0; r < n; ++r) {
                    double p1 = probs(r, c1);
                    wdiag(r) = (c1 == c2) ? p1 * (1.0 - p1) : -p1 * probs(r, c2);
                }
                Eigen::MatrixXd block =
                    x.transpose() * wdiag.asDiagonal() * x / static_cast<double>(n);
                hess.block(c1 * d, c2 * d, d, d) = block;
                if (c1 != c2) hess.block(c2 * d, c1 * d, d, d) = block.transpose();
            }
        }
        hess.diagonal() += ridge * pen_mask;
        hess.diagonal().array() += 1e-12;
        Eigen::VectorXd step = hess.ldlt().solve(grad);

        double scale = 1.0;
        Eigen::VectorXd w_new;
        double loss_new = 0.0;
        for (int half = 0; half < 40; ++half) {
            w_new = w - scale * step;
            loss_new = loss_at(w_new);
            if (loss_new <= loss + 1e-14) break;
            scale *= 0.5;
        }
        if (loss - loss_new < 1e-15 && grad_norm < 1e-6) {
            w = w_new;
            break;
        }
        w = w_new;
        loss = loss_new;
    }

    MultinomialModel model;
    model.n_classes = n_classes;
    model.weights.assign(kk, std::vector<double>(d, 0.0));
    for (int c = 0; c < kk; ++c)
        for (Eigen::Index k = 0; k < d; ++k) model.weights[c][k] = w(c * d + k);
    loss_at(w);
    double ll = 0.0;
    for (Eigen::Index r = 0; r < n; ++r)
        ll -= std::log(std::max(1e-15, probs(r, labels[r])));
    model.diag.log_loss = ll / static_cast<double>(n);
    model.diag.iterations = iter;
    model.diag.grad_norm = grad_norm;
    if (w.lpNorm<Eigen::Infinity>() > kWeightWarnThreshold)
        model.diag.warning = "weights very large; data may be separable";
    return model;
}

} // namespace ilab
