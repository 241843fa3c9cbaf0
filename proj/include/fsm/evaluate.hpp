#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/dfnn.hpp"
#include "fsm/snapshot.hpp"
#include "fsm/util.hpp"

namespace fsm {

/// Add predicted per-cell errors to a coarse solution. Only u, v, T carry
/// learned corrections; P, k, eps pass through unchanged.
inline FieldSnapshot correct_snapshot(const FieldSnapshot& lf, const DeltaPrediction& pred) {
    if (pred.rows() != lf.grid.cell_count())
        throw std::runtime_error("correct: " + std::to_string(pred.rows()) + " predictions for " +
                                 std::to_string(lf.grid.cell_count()) + " cells");
    FieldSnapshot out = lf;
    out.fidelity = "corrected";
    for (int c = 0; c < lf.grid.cell_count(); ++c) {
        out.u[c] += pred.du[c];
        out.v[c] += pred.dv[c];
        out.t[c] += pred.dt[c];
    }
    return out;
}

enum class NrmseDenominator { mean, mean_abs };

/// Root-mean-squared error divided by the reference mean. Velocity fields in
/// a recirculating cavity have near-zero signed means, so they use the mean
/// of |reference| (mean_abs); temperature uses the plain mean in kelvin.
inline double nrmse(const std::vector<double>& reference, const std::vector<double>& candidate,
                    NrmseDenominator denom = NrmseDenominator::mean) {
    if (reference.size() != candidate.size() || reference.empty())
        throw std::runtime_error("nrmse: reference and candidate sizes disagree or are empty");
    const std::size_t n = reference.size();
    double se = 0.0, mean = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = candidate[i] - reference[i];
        se += e * e;
        mean += denom == NrmseDenominator::mean_abs ? std::fabs(reference[i]) : reference[i];
        scale = std::max(scale, std::fabs(reference[i]));
    }
    mean /= static_cast<double>(n);
    if (scale == 0.0) throw std::runtime_error("nrmse: all-zero reference field");
    if (std::fabs(mean) < 1e-9 * scale)
        throw std::runtime_error(
            "nrmse: reference mean is near zero; use the velocity-magnitude convention (mean_abs)");
    return std::sqrt(se / static_cast<double>(n)) / mean;
}

struct FieldNrmse {
    double u = 0.0, v = 0.0, t = 0.0;
};

/// Per-QoI NRMSE of a candidate solution against a same-grid reference.
inline FieldNrmse nrmse_fields(const FieldSnapshot& reference, const FieldSnapshot& candidate) {
    if (!reference.grid.same_shape(candidate.grid))
        throw std::runtime_error("nrmse: reference and candidate grids differ");
    FieldNrmse r;
    r.u = nrmse(reference.u, candidate.u, NrmseDenominator::mean_abs);
    r.v = nrmse(reference.v, candidate.v, NrmseDenominator::mean_abs);
    r.t = nrmse(reference.t, candidate.t, NrmseDenominator::mean);
    return r;
}

// ---- rank correlation -------------------------------------------------------

/// Ranks with ties averaged, 1-based.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    return rank;
}

struct SpearmanResult {
    double rho = 0.0;
    bool defined = false;  // false when either column has constant ranks
};

inline SpearmanResult spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::runtime_error("spearman: need two equal-length samples of size >= 2");
    const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    SpearmanResult r;
    if (sxx <= 0.0 || syy <= 0.0) return r;  // constant column: undefined
    r.rho = sxy / std::sqrt(sxx * syy);
    r.defined = true;
    return r;
}

// ---- trend report -----------------------------------------------------------

struct EvaluationResult {
    std::string test_id;
    std::string train_labels, test_labels;
    std::string pcc_label;
    std::string variant;  // feature variant the surrogate/KDE ran on
    double d_kde = 0.0;
    FieldNrmse raw;        // uncorrected coarse solution vs reference
    FieldNrmse corrected;  // FSM-corrected solution vs the same reference
    double runtime_seconds = 0.0;

    void validate() const {
        const double vals[] = {raw.u, raw.v, raw.t, corrected.u, corrected.v, corrected.t};
        for (double v : vals)
            if (!(v >= 0.0) || !std::isfinite(v))
                throw std::runtime_error("evaluation result " + test_id + ": NRMSE must be finite and >= 0");
        if (!(d_kde > 0.0 && d_kde <= 1.0))
            throw std::runtime_error("evaluation result " + test_id + ": D_KDE outside (0,1]");
    }
};

struct TrendColumn {
    std::string name;
    SpearmanResult rank_correlation;
    int inversions = 0;  // adjacent D-ordered pairs where the error decreases
};

struct TrendReport {
    std::vector<EvaluationResult> rows;  // sorted by D_KDE ascending
    std::vector<TrendColumn> columns;
};

inline TrendReport trend_report(std::vector<EvaluationResult> results) {
    if (results.size() < 3)
        throw std::runtime_error("trend report: need at least 3 results, got " + std::to_string(results.size()));
    for (const auto& r : results) r.validate();
    std::sort(results.begin(), results.end(), [](const EvaluationResult& a, const EvaluationResult& b) {
        if (a.d_kde != b.d_kde) return a.d_kde < b.d_kde;
        return a.test_id < b.test_id;
    });

    TrendReport rep;
    std::vector<double> d;
    for (const auto& r : results) d.push_back(r.d_kde);
    struct Col {
        const char* name;
        double (*get)(const EvaluationResult&);
    };
    const Col cols[] = {
        {"nrmse_u", [](const EvaluationResult& r) { return r.corrected.u; }},
        {"nrmse_v", [](const EvaluationResult& r) { return r.corrected.v; }},
        {"nrmse_t", [](const EvaluationResult& r) { return r.corrected.t; }},
        {"raw_nrmse_u", [](const EvaluationResult& r) { return r.raw.u; }},
        {"raw_nrmse_v", [](const EvaluationResult& r) { return r.raw.v; }},
        {"raw_nrmse_t", [](const EvaluationResult& r) { return r.raw.t; }},
    };
    for (const Col& c : cols) {
        TrendColumn tc;
        tc.name = c.name;
        std::vector<double> y;
        for (const auto& r : results) y.push_back(c.get(r));
        tc.rank_correlation = spearman(d, y);
        for (std::size_t i = 0; i + 1 < y.size(); ++i)
            if (y[i + 1] < y[i]) ++tc.inversions;
        rep.columns.push_back(tc);
    }
    rep.rows = std::move(results);
    return rep;
}

inline void write_trend_report(std::ostream& os, const TrendReport& rep) {
    TextHeader h;
    h.set("velocity_denominator", "mean absolute reference");
    h.set("temperature_denominator", "mean reference (kelvin)");
    h.set_long("tests", static_cast<long>(rep.rows.size()));
    h.write(os);
    os << "test train test_labels variant pcc d_kde nrmse_u nrmse_v nrmse_t raw_nrmse_u raw_nrmse_v raw_nrmse_t\n";
    for (const auto& r : rep.rows) {
        os << r.test_id << ' ' << r.train_labels << ' ' << r.test_labels << ' ' << r.variant << ' ';
        // PCC labels contain a space; keep rows machine-splittable
        std::string pcc = r.pcc_label;
        std::replace(pcc.begin(), pcc.end(), ' ', '-');
        os << pcc << ' ' << format_double(r.d_kde) << ' ' << format_double(r.corrected.u) << ' '
           << format_double(r.corrected.v) << ' ' << format_double(r.corrected.t) << ' '
           << format_double(r.raw.u) << ' ' << format_double(r.raw.v) << ' ' << format_double(r.raw.t) << '\n';
    }
    os << "column spearman_rho inversions\n";
    for (const auto& c : rep.columns) {
        os << c.name << ' ';
        if (c.rank_correlation.defined)
            os << format_double(c.rank_correlation.rho);
        else
            os << "undefined";
        os << ' ' << c.inversions << '\n';
    }
}

inline void save_trend_report(const std::string& path, const TrendReport& rep) {
    std::ostringstream os;
    write_trend_report(os, rep);
    write_file_atomic(path, os.str());
}

}  // namespace fsm
