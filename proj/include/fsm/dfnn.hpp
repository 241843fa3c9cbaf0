#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fsm/error_db.hpp"
#include "fsm/features.hpp"
#include "fsm/rng.hpp"
#include "fsm/util.hpp"

#include "json.hpp"

namespace fsm {

/// Training configuration for the error surrogate.
struct TrainConfig {
    std::vector<int> hidden = {32, 32};
    std::string activation = "tanh";  // hidden layers; output is always linear
    int max_epochs = 300;
    double tolerance = 1e-9;           // relative objective change, 3 epochs in a row
    double gradient_tolerance = 1e-10;  // inf-norm of the objective gradient
    std::uint64_t seed = 1;
    double validation_fraction = 0.0;  // held out, scored in the manifest only
    int evidence_cadence = 1;          // alpha/beta re-estimation every N accepted epochs
    int evidence_warmup = 10;          // epochs on bootstrap alpha/beta before re-estimation
    double fallback_decay = 1e-4;      // fixed alpha when the evidence update is unusable
    long max_rows = 0;                 // 0 = all rows, else seeded uniform subsample
    double mu0 = 0.005, mu_dec = 0.3, mu_inc = 5.0, mu_max = 1e10;

    void validate() const {
        if (hidden.empty()) throw std::runtime_error("dfnn: need at least one hidden layer");
        for (int h : hidden)
            if (h < 1) throw std::runtime_error("dfnn: hidden layer sizes must be positive");
        if (activation != "tanh" && activation != "linear")
            throw std::runtime_error("dfnn: unknown activation '" + activation + "'");
        if (max_epochs < 1) throw std::runtime_error("dfnn: max_epochs must be >= 1");
        if (validation_fraction < 0.0 || validation_fraction > 0.5)
            throw std::runtime_error("dfnn: validation fraction must lie in [0, 0.5]");
        if (evidence_cadence < 1) throw std::runtime_error("dfnn: evidence cadence must be >= 1");
        if (evidence_warmup < 0) throw std::runtime_error("dfnn: evidence warmup must be >= 0");
        if (!(mu0 > 0.0) || !(mu_dec > 0.0) || !(mu_dec < 1.0) || !(mu_inc > 1.0) || !(mu_max > mu0))
            throw std::runtime_error("dfnn: bad damping schedule");
    }
};

struct TrainManifest {
    std::uint64_t seed = 0;
    int epochs = 0;
    long rows_used = 0, rows_total = 0;
    double objective = 0.0, data_error = 0.0, weight_error = 0.0;
    double alpha = 0.0, beta = 1.0;
    double effective_parameters = 0.0;
    long parameter_count = 0;
    bool fallback_fixed_decay = false;
    double validation_mse = -1.0;  // normalized scale; -1 when no validation split
    std::string stop_reason;
};

/// Feedforward error surrogate: standardized features in, scaled (du, dv, dT) out.
struct DfnnModel {
    std::vector<std::string> feature_names;
    FeatureVariant variant = FeatureVariant::dimensional;  // variant the training rows used
    std::vector<int> layers;  // [inputs, hidden..., 3]
    std::string activation = "tanh";
    std::vector<Eigen::MatrixXd> weight;  // weight[l]: layers[l+1] x layers[l]
    std::vector<Eigen::VectorXd> bias;
    Eigen::VectorXd in_mean, in_std;
    Eigen::Vector3d out_mean, out_std;
    double alpha = 0.0, beta = 1.0;
    TrainManifest manifest;

    long parameter_count() const {
        long n = 0;
        for (std::size_t l = 0; l + 1 < layers.size(); ++l)
            n += static_cast<long>(layers[l + 1]) * layers[l] + layers[l + 1];
        return n;
    }

    void validate() const {
        if (layers.size() < 3) throw std::runtime_error("dfnn: model needs input, hidden and output layers");
        if (layers.back() != 3) throw std::runtime_error("dfnn: output dimension must be 3");
        if (layers.front() != static_cast<int>(feature_names.size()))
            throw std::runtime_error("dfnn: input width disagrees with feature-name list");
        if (weight.size() != layers.size() - 1 || bias.size() != layers.size() - 1)
            throw std::runtime_error("dfnn: layer tensor count disagrees with layer sizes");
        for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
            if (weight[l].rows() != layers[l + 1] || weight[l].cols() != layers[l] ||
                bias[l].size() != layers[l + 1])
                throw std::runtime_error("dfnn: tensor shape mismatch in layer " + std::to_string(l));
            if (!weight[l].allFinite() || !bias[l].allFinite())
                throw std::runtime_error("dfnn: non-finite parameters in layer " + std::to_string(l));
        }
        if (in_mean.size() != layers.front() || in_std.size() != layers.front())
            throw std::runtime_error("dfnn: input scaler width mismatch");
        for (int j = 0; j < in_std.size(); ++j)
            if (!(in_std[j] > 0.0)) throw std::runtime_error("dfnn: input scaler not invertible");
        for (int q = 0; q < 3; ++q)
            if (!(out_std[q] > 0.0)) throw std::runtime_error("dfnn: output scaler not invertible");
    }
};

namespace detail {

inline void flatten(const DfnnModel& m, Eigen::VectorXd& theta) {
    theta.resize(m.parameter_count());
    long at = 0;
    for (std::size_t l = 0; l < m.weight.size(); ++l) {
        for (int r = 0; r < m.weight[l].rows(); ++r)
            for (int c = 0; c < m.weight[l].cols(); ++c) theta[at++] = m.weight[l](r, c);
        for (int r = 0; r < m.bias[l].size(); ++r) theta[at++] = m.bias[l](r);
    }
}

inline void unflatten(const Eigen::VectorXd& theta, DfnnModel& m) {
    long at = 0;
    for (std::size_t l = 0; l < m.weight.size(); ++l) {
        for (int r = 0; r < m.weight[l].rows(); ++r)
            for (int c = 0; c < m.weight[l].cols(); ++c) m.weight[l](r, c) = theta[at++];
        for (int r = 0; r < m.bias[l].size(); ++r) m.bias[l](r) = theta[at++];
    }
}

/// Forward pass on normalized inputs; keeps every layer's activations.
/// Rows are evaluated independently so identical inputs give bitwise
/// identical outputs regardless of batch size or position.
inline void forward(const DfnnModel& m, const Eigen::MatrixXd& x, std::vector<Eigen::MatrixXd>& act) {
    const std::size_t nl = m.weight.size();
    act.resize(nl + 1);
    act[0] = x;
    const bool tanh_hidden = m.activation == "tanh";
    for (std::size_t l = 0; l < nl; ++l) act[l + 1].resize(x.rows(), m.layers[l + 1]);
    Eigen::VectorXd a, z;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        a = x.row(i).transpose();
        for (std::size_t l = 0; l < nl; ++l) {
            z.noalias() = m.weight[l] * a + m.bias[l];
            if (l + 1 < nl && tanh_hidden) z = z.array().tanh();
            act[l + 1].row(i) = z.transpose();
            a = z;
        }
    }
}

/// One Jacobian row d(output o of sample i)/d(theta), written into jrow.
inline void jacobian_row(const DfnnModel& m, const std::vector<Eigen::MatrixXd>& act, int i, int o,
                         Eigen::VectorXd& jrow, std::vector<Eigen::VectorXd>& delta) {
    const std::size_t nl = m.weight.size();
    delta.resize(nl + 1);
    delta[nl] = Eigen::VectorXd::Zero(m.layers.back());
    delta[nl][o] = 1.0;
    const bool tanh_hidden = m.activation == "tanh";
    for (std::size_t l = nl; l-- > 0;) {
        delta[l] = m.weight[l].transpose() * delta[l + 1];
        if (l > 0 && tanh_hidden)
            delta[l].array() *= 1.0 - act[l].row(i).array().square().transpose();
    }
    long at = 0;
    for (std::size_t l = 0; l < nl; ++l) {
        const auto a = act[l].row(i);
        for (int r = 0; r < m.weight[l].rows(); ++r) {
            const double d = delta[l + 1][r];
            for (int c = 0; c < m.weight[l].cols(); ++c) jrow[at++] = d * a[c];
        }
        for (int r = 0; r < m.bias[l].size(); ++r) jrow[at++] = delta[l + 1][r];
    }
}

struct ObjectiveParts {
    double data = 0.0;    // sum of squared normalized errors
    double weight = 0.0;  // sum of squared parameters
    double of(double alpha, double beta) const { return beta * data + alpha * weight; }
};

inline ObjectiveParts objective_parts(const DfnnModel& m, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                      const Eigen::VectorXd& theta) {
    std::vector<Eigen::MatrixXd> act;
    forward(m, x, act);
    ObjectiveParts p;
    p.data = (act.back() - y).squaredNorm();
    p.weight = theta.squaredNorm();
    return p;
}

}  // namespace detail

/// Normalized design matrices for a database: standardized features, per-QoI
/// scaled targets. Scalers come from the model.
inline Eigen::MatrixXd normalize_inputs(const DfnnModel& m, const FeatureMatrix& f) {
    if (f.names != m.feature_names)
        throw std::runtime_error("dfnn: feature names/order do not match the trained model");
    const int n = f.rows(), d = f.cols();
    Eigen::MatrixXd x(n, d);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) x(r, j) = (f.at(r, j) - m.in_mean[j]) / m.in_std[j];
    return x;
}

inline DfnnModel train_surrogate(const ErrorDatabase& db, const TrainConfig& cfg) {
    cfg.validate();
    db.validate();
    if (db.rows() == 0) throw std::runtime_error("dfnn: empty training database");
    const int d = static_cast<int>(db.names.size());

    // deterministic row selection: optional subsample, then validation split
    std::vector<int> rows(db.rows());
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng(cfg.seed);
    long total = db.rows();
    if (cfg.max_rows > 0 && total > cfg.max_rows) {
        const auto pick = rng.sample_indices(total, static_cast<std::size_t>(cfg.max_rows));
        rows.assign(pick.begin(), pick.end());
    }
    std::vector<int> val_rows;
    if (cfg.validation_fraction > 0.0) {
        const std::size_t nv = static_cast<std::size_t>(cfg.validation_fraction * rows.size());
        if (nv > 0) {
            const auto pick = rng.sample_indices(rows.size(), nv);
            std::vector<std::uint8_t> is_val(rows.size(), 0);
            for (std::size_t p : pick) is_val[p] = 1;
            std::vector<int> keep;
            for (std::size_t i = 0; i < rows.size(); ++i) (is_val[i] ? val_rows : keep).push_back(rows[i]);
            rows.swap(keep);
        }
    }
    const int n = static_cast<int>(rows.size());
    if (n < 2) throw std::runtime_error("dfnn: fewer than 2 training rows after splitting");

    DfnnModel m;
    m.feature_names = db.names;
    m.variant = db.variant;
    m.activation = cfg.activation;
    m.layers.push_back(d);
    for (int h : cfg.hidden) m.layers.push_back(h);
    m.layers.push_back(3);

    // scalers from the training rows
    m.in_mean = Eigen::VectorXd::Zero(d);
    m.in_std = Eigen::VectorXd::Ones(d);
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int r : rows) mean += db.feature_at(r, j);
        mean /= n;
        double ss = 0.0;
        for (int r : rows) {
            const double e = db.feature_at(r, j) - mean;
            ss += e * e;
        }
        const double sd = std::sqrt(ss / n);
        m.in_mean[j] = mean;
        m.in_std[j] = sd > 1e-12 ? sd : 1.0;
    }
    const std::vector<const std::vector<double>*> targets = {&db.du, &db.dv, &db.dt};
    for (int q = 0; q < 3; ++q) {
        double mean = 0.0;
        for (int r : rows) mean += (*targets[q])[r];
        mean /= n;
        double ss = 0.0;
        for (int r : rows) {
            const double e = (*targets[q])[r] - mean;
            ss += e * e;
        }
        const double sd = std::sqrt(ss / n);
        m.out_mean[q] = mean;
        m.out_std[q] = sd > 1e-12 ? sd : 1.0;
    }

    // seeded initialization: Nguyen-Widrow on hidden layers (unit rows scaled
    // to cover the input range, biases spread evenly), small random output
    for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
        const int n_in = m.layers[l], n_out = m.layers[l + 1];
        Eigen::MatrixXd w(n_out, n_in);
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n_out);
        if (l + 2 < m.layers.size()) {
            const double scale = 0.7 * std::pow(static_cast<double>(n_out), 1.0 / n_in);
            for (int r = 0; r < n_out; ++r) {
                for (int c = 0; c < n_in; ++c) w(r, c) = rng.uniform(-1.0, 1.0);
                w.row(r) *= scale / std::max(w.row(r).norm(), 1e-12);
                b[r] = n_out > 1 ? scale * (2.0 * r / (n_out - 1.0) - 1.0) : 0.0;
            }
        } else {
            const double s = 1.0 / std::sqrt(static_cast<double>(n_in));
            for (int r = 0; r < n_out; ++r)
                for (int c = 0; c < n_in; ++c) w(r, c) = s * rng.normal();
        }
        m.weight.push_back(std::move(w));
        m.bias.push_back(std::move(b));
    }

    // normalized design matrices
    Eigen::MatrixXd x(n, d), y(n, 3);
    for (int i = 0; i < n; ++i) {
        const int r = rows[i];
        for (int j = 0; j < d; ++j) x(i, j) = (db.feature_at(r, j) - m.in_mean[j]) / m.in_std[j];
        for (int q = 0; q < 3; ++q) y(i, q) = ((*targets[q])[r] - m.out_mean[q]) / m.out_std[q];
    }

    const long nw = m.parameter_count();
    const long n_terms = static_cast<long>(n) * 3;
    Eigen::VectorXd theta;
    detail::flatten(m, theta);

    // evidence bootstrap: alpha must be positive so the first regularized
    // Hessian stays definite on directions the data does not constrain
    double alpha = 0.01, beta = 1.0;
    bool fallback = false;
    double mu = cfg.mu0;
    detail::ObjectiveParts parts = detail::objective_parts(m, x, y, theta);
    double objective = parts.of(alpha, beta);
    if (!std::isfinite(objective)) throw std::runtime_error("dfnn: objective non-finite at initialization");

    Eigen::MatrixXd jtj(nw, nw);
    Eigen::VectorXd jte(nw), jrow(nw);
    std::vector<Eigen::MatrixXd> act;
    std::vector<Eigen::VectorXd> delta;
    const int block = std::max<int>(1, 2048 / 3);
    Eigen::MatrixXd jblock(static_cast<long>(block) * 3, nw);
    Eigen::VectorXd eblock(static_cast<long>(block) * 3);

    std::string stop_reason = "max epochs";
    int epoch = 0;
    int small_change = 0;
    double gamma = static_cast<double>(nw);

    for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        // Gauss-Newton pieces at the current point
        detail::forward(m, x, act);
        const Eigen::MatrixXd err = act.back() - y;
        jtj.setZero();
        jte.setZero();
        for (int i0 = 0; i0 < n; i0 += block) {
            const int nb = std::min(block, n - i0);
            for (int i = 0; i < nb; ++i)
                for (int o = 0; o < 3; ++o) {
                    detail::jacobian_row(m, act, i0 + i, o, jrow, delta);
                    jblock.row(static_cast<long>(i) * 3 + o) = jrow;
                    eblock[static_cast<long>(i) * 3 + o] = err(i0 + i, o);
                }
            const auto jb = jblock.topRows(static_cast<long>(nb) * 3);
            const auto eb = eblock.head(static_cast<long>(nb) * 3);
            jtj.selfadjointView<Eigen::Lower>().rankUpdate(jb.transpose(), 1.0);
            jte.noalias() += jb.transpose() * eb;
        }
        const Eigen::VectorXd grad = 2.0 * beta * jte + 2.0 * alpha * theta;
        if (grad.lpNorm<Eigen::Infinity>() < cfg.gradient_tolerance) {
            stop_reason = "gradient tolerance";
            break;
        }

        // damped step with acceptance
        bool accepted = false;
        double step_change = 0.0;
        while (!accepted) {
            Eigen::MatrixXd h = (2.0 * beta) * jtj;
            h.diagonal().array() += 2.0 * alpha + mu;
            const Eigen::LLT<Eigen::MatrixXd> llt(h);
            if (llt.info() == Eigen::Success) {
                const Eigen::VectorXd step = llt.solve(-grad);
                const Eigen::VectorXd cand = theta + step;
                DfnnModel trial = m;
                detail::unflatten(cand, trial);
                const detail::ObjectiveParts cp = detail::objective_parts(trial, x, y, cand);
                const double co = cp.of(alpha, beta);
                if (!std::isfinite(co))
                    throw std::runtime_error("dfnn: objective non-finite at epoch " + std::to_string(epoch));
                if (co < objective) {
                    step_change = (objective - co) / std::max(1.0, std::fabs(objective));
                    theta = cand;
                    detail::unflatten(theta, m);
                    parts = cp;
                    objective = co;
                    mu = std::max(mu * cfg.mu_dec, 1e-20);
                    accepted = true;
                    break;
                }
            }
            mu *= cfg.mu_inc;
            if (mu > cfg.mu_max) break;
        }
        if (!accepted) {
            stop_reason = "damping limit";
            break;
        }

        // MacKay evidence re-estimation on the accepted iterate
        if (!fallback && epoch > cfg.evidence_warmup && epoch % cfg.evidence_cadence == 0) {
            Eigen::MatrixXd h = (2.0 * beta) * jtj;
            h.diagonal().array() += 2.0 * alpha;
            const Eigen::LLT<Eigen::MatrixXd> llt(h);
            if (llt.info() != Eigen::Success) {
                fallback = true;
                alpha = cfg.fallback_decay;
                beta = 1.0;
            } else {
                const double tr_hinv =
                    llt.solve(Eigen::MatrixXd::Identity(nw, nw)).trace();
                gamma = static_cast<double>(nw) - 2.0 * alpha * tr_hinv;
                gamma = std::clamp(gamma, 0.0, std::min(static_cast<double>(nw), 0.999 * n_terms));
                alpha = std::clamp(gamma / std::max(2.0 * parts.weight, 1e-30), 1e-8, 1e12);
                beta = std::min((n_terms - gamma) / std::max(2.0 * parts.data, 1e-30), 1e12);
            }
            objective = parts.of(alpha, beta);
        }
        // convergence keys on optimizer progress under the epoch's fixed
        // alpha/beta, and only counts once the trust region has reopened —
        // a large mu makes steps small regardless of stationarity
        if (mu <= cfg.mu0 && step_change < cfg.tolerance)
            ++small_change;
        else
            small_change = 0;
        if (small_change >= 3) {
            stop_reason = "objective tolerance";
            break;
        }
    }

    m.alpha = alpha;
    m.beta = beta;
    m.manifest.seed = cfg.seed;
    m.manifest.epochs = std::min(epoch, cfg.max_epochs);
    m.manifest.rows_used = n;
    m.manifest.rows_total = total;
    m.manifest.objective = objective;
    m.manifest.data_error = parts.data;
    m.manifest.weight_error = parts.weight;
    m.manifest.alpha = alpha;
    m.manifest.beta = beta;
    m.manifest.effective_parameters = gamma;
    m.manifest.parameter_count = nw;
    m.manifest.fallback_fixed_decay = fallback;
    m.manifest.stop_reason = stop_reason;

    if (!val_rows.empty()) {
        Eigen::MatrixXd xv(val_rows.size(), d), yv(val_rows.size(), 3);
        for (std::size_t i = 0; i < val_rows.size(); ++i) {
            const int r = val_rows[i];
            for (int j = 0; j < d; ++j) xv(i, j) = (db.feature_at(r, j) - m.in_mean[j]) / m.in_std[j];
            for (int q = 0; q < 3; ++q) yv(i, q) = ((*targets[q])[r] - m.out_mean[q]) / m.out_std[q];
        }
        std::vector<Eigen::MatrixXd> av;
        detail::forward(m, xv, av);
        m.manifest.validation_mse = (av.back() - yv).squaredNorm() / (3.0 * val_rows.size());
    }

    m.validate();
    return m;
}

/// Per-cell predicted errors in physical units, row-aligned with the input.
struct DeltaPrediction {
    std::vector<double> du, dv, dt;
    int rows() const { return static_cast<int>(du.size()); }
};

inline DeltaPrediction predict_errors(const DfnnModel& m, const FeatureMatrix& f) {
    m.validate();
    DeltaPrediction out;
    if (f.rows() == 0) {
        if (f.names != m.feature_names)
            throw std::runtime_error("dfnn: feature names/order do not match the trained model");
        return out;
    }
    const Eigen::MatrixXd x = normalize_inputs(m, f);
    std::vector<Eigen::MatrixXd> act;
    detail::forward(m, x, act);
    const Eigen::MatrixXd& yn = act.back();
    out.du.resize(f.rows());
    out.dv.resize(f.rows());
    out.dt.resize(f.rows());
    for (int r = 0; r < f.rows(); ++r) {
        out.du[r] = yn(r, 0) * m.out_std[0] + m.out_mean[0];
        out.dv[r] = yn(r, 1) * m.out_std[1] + m.out_mean[1];
        out.dt[r] = yn(r, 2) * m.out_std[2] + m.out_mean[2];
    }
    return out;
}

inline void write_delta_prediction(std::ostream& os, const DeltaPrediction& p) {
    TextHeader h;
    h.set_long("rows", p.rows());
    h.set("columns", "du dv dT");
    h.write(os);
    os << "cell du dv dT\n";
    for (int r = 0; r < p.rows(); ++r)
        os << r << ' ' << format_double(p.du[r]) << ' ' << format_double(p.dv[r]) << ' ' << format_double(p.dt[r])
           << '\n';
}

inline DeltaPrediction read_delta_prediction(std::istream& is, const std::string& what = "delta prediction") {
    std::string first;
    const TextHeader h = read_text_header(is, first);
    if (first != "cell du dv dT") throw std::runtime_error(what + ": expected the 'cell du dv dT' table");
    const long rows = h.get_long("rows");
    DeltaPrediction p;
    std::string line;
    while (std::getline(is, line)) {
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto tok = split_ws(t);
        if (tok.size() != 4) throw std::runtime_error(what + ": malformed row '" + t + "'");
        p.du.push_back(parse_double(tok[1], what));
        p.dv.push_back(parse_double(tok[2], what));
        p.dt.push_back(parse_double(tok[3], what));
    }
    if (p.rows() != rows)
        throw std::runtime_error(what + ": truncated at row " + std::to_string(p.rows()) + " of " +
                                 std::to_string(rows));
    return p;
}

inline void save_delta_prediction(const std::string& path, const DeltaPrediction& p) {
    std::ostringstream os;
    write_delta_prediction(os, p);
    write_file_atomic(path, os.str());
}

inline DeltaPrediction load_delta_prediction(const std::string& path) {
    try {
        std::istringstream is(read_file(path));
        return read_delta_prediction(is);
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

/// Analytic objective gradient vs central finite differences on probe rows.
/// Returns the max relative deviation over a deterministic weight sample.
inline double gradient_check(const DfnnModel& m, const FeatureMatrix& probes,
                             const std::vector<double>& targets_row_major) {
    if (probes.rows() == 0) throw std::runtime_error("dfnn: gradient check needs probe rows");
    if (targets_row_major.size() != static_cast<std::size_t>(probes.rows()) * 3)
        throw std::runtime_error("dfnn: gradient check targets must be rows x 3");
    const Eigen::MatrixXd x = normalize_inputs(m, probes);
    Eigen::MatrixXd y(probes.rows(), 3);
    for (int r = 0; r < probes.rows(); ++r)
        for (int q = 0; q < 3; ++q)
            y(r, q) = (targets_row_major[static_cast<std::size_t>(r) * 3 + q] - m.out_mean[q]) / m.out_std[q];

    DfnnModel work = m;
    Eigen::VectorXd theta;
    detail::flatten(work, theta);
    const long nw = theta.size();

    // analytic gradient: 2 beta J^T e + 2 alpha theta
    std::vector<Eigen::MatrixXd> act;
    detail::forward(work, x, act);
    const Eigen::MatrixXd err = act.back() - y;
    Eigen::VectorXd jte = Eigen::VectorXd::Zero(nw), jrow(nw);
    std::vector<Eigen::VectorXd> delta;
    for (int i = 0; i < probes.rows(); ++i)
        for (int o = 0; o < 3; ++o) {
            detail::jacobian_row(work, act, i, o, jrow, delta);
            jte.noalias() += err(i, o) * jrow;
        }
    const Eigen::VectorXd grad = 2.0 * m.beta * jte + 2.0 * m.alpha * theta;

    // deviations are scaled by the gradient's overall magnitude so that
    // near-zero components do not amplify finite-difference roundoff
    const double h = 1e-6;
    const double scale = std::max(grad.lpNorm<Eigen::Infinity>(), 1e-12);
    const long stride = std::max<long>(1, nw / 200);
    double worst = 0.0;
    for (long w = 0; w < nw; w += stride) {
        Eigen::VectorXd tp = theta, tm = theta;
        tp[w] += h;
        tm[w] -= h;
        detail::unflatten(tp, work);
        const double fp = detail::objective_parts(work, x, y, tp).of(m.alpha, m.beta);
        detail::unflatten(tm, work);
        const double fm = detail::objective_parts(work, x, y, tm).of(m.alpha, m.beta);
        const double fd = (fp - fm) / (2.0 * h);
        worst = std::max(worst, std::fabs(fd - grad[w]) / scale);
    }
    return worst;
}

// ---- persistence ------------------------------------------------------------

inline nlohmann::json model_to_json(const DfnnModel& m) {
    m.validate();
    nlohmann::json j;
    j["kind"] = "fsm-dfnn";
    j["feature_names"] = m.feature_names;
    j["variant"] = to_string(m.variant);
    j["layers"] = m.layers;
    j["activation"] = m.activation;
    for (std::size_t l = 0; l < m.weight.size(); ++l) {
        nlohmann::json lw = nlohmann::json::array();
        for (int r = 0; r < m.weight[l].rows(); ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (int c = 0; c < m.weight[l].cols(); ++c) row.push_back(m.weight[l](r, c));
            lw.push_back(row);
        }
        j["weights"].push_back(lw);
        nlohmann::json lb = nlohmann::json::array();
        for (int r = 0; r < m.bias[l].size(); ++r) lb.push_back(m.bias[l](r));
        j["biases"].push_back(lb);
    }
    j["in_mean"] = std::vector<double>(m.in_mean.data(), m.in_mean.data() + m.in_mean.size());
    j["in_std"] = std::vector<double>(m.in_std.data(), m.in_std.data() + m.in_std.size());
    j["out_mean"] = std::vector<double>(m.out_mean.data(), m.out_mean.data() + 3);
    j["out_std"] = std::vector<double>(m.out_std.data(), m.out_std.data() + 3);
    j["alpha"] = m.alpha;
    j["beta"] = m.beta;
    j["manifest"] = {{"seed", m.manifest.seed},
                     {"epochs", m.manifest.epochs},
                     {"rows_used", m.manifest.rows_used},
                     {"rows_total", m.manifest.rows_total},
                     {"objective", m.manifest.objective},
                     {"data_error", m.manifest.data_error},
                     {"weight_error", m.manifest.weight_error},
                     {"alpha", m.manifest.alpha},
                     {"beta", m.manifest.beta},
                     {"effective_parameters", m.manifest.effective_parameters},
                     {"parameter_count", m.manifest.parameter_count},
                     {"fallback_fixed_decay", m.manifest.fallback_fixed_decay},
                     {"validation_mse", m.manifest.validation_mse},
                     {"stop_reason", m.manifest.stop_reason}};
    return j;
}

inline DfnnModel model_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != std::string("fsm-dfnn"))
        throw std::runtime_error("dfnn: not a surrogate model file");
    DfnnModel m;
    m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    m.variant = variant_from_string(j.value("variant", "dimensional"));
    m.layers = j.at("layers").get<std::vector<int>>();
    m.activation = j.at("activation").get<std::string>();
    const auto& ws = j.at("weights");
    const auto& bs = j.at("biases");
    for (std::size_t l = 0; l + 1 < m.layers.size(); ++l) {
        Eigen::MatrixXd w(m.layers[l + 1], m.layers[l]);
        for (int r = 0; r < w.rows(); ++r)
            for (int c = 0; c < w.cols(); ++c) w(r, c) = ws.at(l).at(r).at(c).get<double>();
        m.weight.push_back(std::move(w));
        Eigen::VectorXd b(m.layers[l + 1]);
        for (int r = 0; r < b.size(); ++r) b[r] = bs.at(l).at(r).get<double>();
        m.bias.push_back(std::move(b));
    }
    const auto im = j.at("in_mean").get<std::vector<double>>();
    const auto is = j.at("in_std").get<std::vector<double>>();
    m.in_mean = Eigen::Map<const Eigen::VectorXd>(im.data(), im.size());
    m.in_std = Eigen::Map<const Eigen::VectorXd>(is.data(), is.size());
    const auto om = j.at("out_mean").get<std::vector<double>>();
    const auto os = j.at("out_std").get<std::vector<double>>();
    for (int q = 0; q < 3; ++q) {
        m.out_mean[q] = om.at(q);
        m.out_std[q] = os.at(q);
    }
    m.alpha = j.at("alpha").get<double>();
    m.beta = j.at("beta").get<double>();
    const auto& mf = j.at("manifest");
    m.manifest.seed = mf.at("seed").get<std::uint64_t>();
    m.manifest.epochs = mf.at("epochs").get<int>();
    m.manifest.rows_used = mf.at("rows_used").get<long>();
    m.manifest.rows_total = mf.at("rows_total").get<long>();
    m.manifest.objective = mf.at("objective").get<double>();
    m.manifest.data_error = mf.at("data_error").get<double>();
    m.manifest.weight_error = mf.at("weight_error").get<double>();
    m.manifest.alpha = mf.at("alpha").get<double>();
    m.manifest.beta = mf.at("beta").get<double>();
    m.manifest.effective_parameters = mf.at("effective_parameters").get<double>();
    m.manifest.parameter_count = mf.at("parameter_count").get<long>();
    m.manifest.fallback_fixed_decay = mf.at("fallback_fixed_decay").get<bool>();
    m.manifest.validation_mse = mf.at("validation_mse").get<double>();
    m.manifest.stop_reason = mf.at("stop_reason").get<std::string>();
    m.validate();
    return m;
}

inline void save_surrogate(const std::string& path, const DfnnModel& m) {
    write_file_atomic(path, model_to_json(m).dump(1) + "\n");
}

inline DfnnModel load_surrogate(const std::string& path) {
    try {
        return model_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const std::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

}  // namespace fsm
