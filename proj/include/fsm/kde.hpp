#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/error_db.hpp"
#include "fsm/features.hpp"
#include "fsm/rng.hpp"
#include "fsm/util.hpp"

namespace fsm {

/// Product-kernel density model over min-max normalized feature rows.
/// Queries must be normalized with the model's own training bounds; values
/// outside [0, 1] are the extrapolation signal, not an error.
struct KdeModel {
    int dim = 0;
    std::vector<double> train;      // rows() x dim, normalized to [0,1]
    std::vector<double> bandwidth;  // per-dimension, > 0
    std::vector<double> lo, hi;     // training bounds (width-guarded)
    std::string kernel = "gaussian";
    long subsampled_from = 0;  // original row count when subsampling applied, else 0

    int rows() const { return dim == 0 ? 0 : static_cast<int>(train.size()) / dim; }

    void validate() const {
        if (dim < 1) throw std::runtime_error("kde: model needs at least one dimension");
        if (train.empty() || train.size() % dim != 0) throw std::runtime_error("kde: ragged training matrix");
        if (static_cast<int>(bandwidth.size()) != dim || static_cast<int>(lo.size()) != dim ||
            static_cast<int>(hi.size()) != dim)
            throw std::runtime_error("kde: per-dimension arrays disagree with dim");
        for (int j = 0; j < dim; ++j) {
            if (!(bandwidth[j] > 0.0)) throw std::runtime_error("kde: non-positive bandwidth");
            if (!(lo[j] < hi[j])) throw std::runtime_error("kde: degenerate normalization bounds");
        }
        for (double x : train)
            if (!(x >= 0.0 && x <= 1.0)) throw std::runtime_error("kde: training entry outside [0,1]");
    }
};

struct KdeOptions {
    long max_train_rows = 50000;  // uniform seeded subsample above this
    std::uint64_t seed = 0x9e3779b97f4a7c15ull;
};

/// Min-max normalize a raw query row with the model's training bounds.
inline std::vector<double> normalize_query(const KdeModel& m, const std::vector<double>& raw) {
    if (static_cast<int>(raw.size()) != m.dim)
        throw std::runtime_error("kde: query has " + std::to_string(raw.size()) + " dimensions, model has " +
                                 std::to_string(m.dim));
    std::vector<double> q(m.dim);
    for (int j = 0; j < m.dim; ++j) q[j] = (raw[j] - m.lo[j]) / (m.hi[j] - m.lo[j]);
    return q;
}

inline KdeModel fit_kde(const FeatureMatrix& train, const KdeOptions& opt = KdeOptions{}) {
    const int n0 = train.rows();
    const int d = static_cast<int>(train.names.size());
    if (n0 < 2) throw std::runtime_error("kde: need at least 2 training rows, got " + std::to_string(n0));
    if (d < 1) throw std::runtime_error("kde: need at least 1 feature column");

    std::vector<int> keep(n0);
    std::iota(keep.begin(), keep.end(), 0);
    KdeModel m;
    if (n0 > opt.max_train_rows) {
        Rng rng(opt.seed);
        const std::vector<std::size_t> pick = rng.sample_indices(n0, static_cast<std::size_t>(opt.max_train_rows));
        keep.assign(pick.begin(), pick.end());
        m.subsampled_from = n0;
    }
    const int n = static_cast<int>(keep.size());

    m.dim = d;
    m.lo.resize(d);
    m.hi.resize(d);
    for (int j = 0; j < d; ++j) {
        double lo = train.at(keep[0], j), hi = lo;
        for (int r : keep) {
            lo = std::min(lo, train.at(r, j));
            hi = std::max(hi, train.at(r, j));
        }
        // width-epsilon guard: (near-)constant columns become exactly 0.5
        if (hi - lo < 1e-9) {
            const double mid = 0.5 * (hi + lo);
            lo = mid - 1e-9;
            hi = mid + 1e-9;
        }
        m.lo[j] = lo;
        m.hi[j] = hi;
    }

    m.train.resize(static_cast<std::size_t>(n) * d);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j)
            m.train[static_cast<std::size_t>(r) * d + j] =
                (train.at(keep[r], j) - m.lo[j]) / (m.hi[j] - m.lo[j]);

    // Scott's rule per dimension on the normalized columns, floored
    m.bandwidth.resize(d);
    const double scale = std::pow(static_cast<double>(n), -1.0 / (d + 4.0));
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int r = 0; r < n; ++r) mean += m.train[static_cast<std::size_t>(r) * d + j];
        mean /= n;
        double ss = 0.0;
        for (int r = 0; r < n; ++r) {
            const double e = m.train[static_cast<std::size_t>(r) * d + j] - mean;
            ss += e * e;
        }
        const double sigma = std::sqrt(ss / (n - 1));
        m.bandwidth[j] = std::max(sigma * scale, 1e-3);
    }
    m.validate();
    return m;
}

/// Product-Gaussian density at a normalized query:
/// p = (1/(n h_1...h_d)) sum_i prod_j k((q_j - x_ij)/h_j), k standard normal.
inline double kde_density(const KdeModel& m, const std::vector<double>& q) {
    if (static_cast<int>(q.size()) != m.dim)
        throw std::runtime_error("kde: query has " + std::to_string(q.size()) + " dimensions, model has " +
                                 std::to_string(m.dim));
    const int n = m.rows();
    const int d = m.dim;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = m.train.data() + static_cast<std::size_t>(i) * d;
        double e = 0.0;
        for (int j = 0; j < d; ++j) {
            const double u = (q[j] - row[j]) / m.bandwidth[j];
            e += u * u;
        }
        sum += std::exp(-0.5 * e);
    }
    double log_norm = -std::log(static_cast<double>(n));
    for (int j = 0; j < d; ++j) log_norm -= std::log(m.bandwidth[j] * std::sqrt(2.0 * M_PI));
    return sum * std::exp(log_norm);
}

/// Standardized dissimilarity d = 1 - p/(p + 0.1), in (0, 1].
inline double kde_distance_of_density(double p) { return 1.0 - p / (p + 0.1); }

inline double kde_distance(const KdeModel& m, const std::vector<double>& q) {
    return kde_distance_of_density(kde_density(m, q));
}

/// Per-row KDE distances of a raw (unnormalized) feature matrix.
inline std::vector<double> kde_distances(const KdeModel& m, const FeatureMatrix& targets) {
    if (static_cast<int>(targets.names.size()) != m.dim)
        throw std::runtime_error("kde: target matrix has " + std::to_string(targets.names.size()) +
                                 " columns, model has " + std::to_string(m.dim));
    std::vector<double> out(targets.rows());
    std::vector<double> raw(m.dim);
    for (int r = 0; r < targets.rows(); ++r) {
        for (int j = 0; j < m.dim; ++j) raw[j] = targets.at(r, j);
        out[r] = kde_distance(m, normalize_query(m, raw));
    }
    return out;
}

inline double mean_kde_distance(const KdeModel& m, const FeatureMatrix& targets) {
    if (targets.rows() == 0) throw std::runtime_error("kde: mean distance of an empty target set");
    const std::vector<double> d = kde_distances(m, targets);
    return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

// ---- physics-coverage report ------------------------------------------------

struct PccThresholds {
    double self_quantile = 0.99;         // train self-distance percentile for the baseline
    double extrapolation_fraction = 0.10;  // label flips above this exceed fraction
};

struct SimilarityReport {
    double d_mean = 0.0;  // D_KDE
    std::vector<double> distances;
    std::vector<long> histogram;  // 20 uniform bins over [0,1]
    double self_baseline = 0.0;
    double exceed_fraction = 0.0;
    std::string pcc_label;
    long train_rows = 0, target_rows = 0;
    long subsampled_from = 0;

    // optional embedding attached by the caller (train rows then target rows)
    std::vector<double> embedding_xy;
    std::vector<std::uint8_t> embedding_is_target;

    void validate() const {
        if (distances.empty()) throw std::runtime_error("similarity report: no target distances");
        double sum = 0.0;
        for (double d : distances) {
            if (!(d > 0.0 && d <= 1.0)) throw std::runtime_error("similarity report: distance outside (0,1]");
            sum += d;
        }
        if (std::fabs(sum / static_cast<double>(distances.size()) - d_mean) > 1e-12)
            throw std::runtime_error("similarity report: mean disagrees with per-point distances");
    }
};

inline std::vector<long> distance_histogram(const std::vector<double>& d, int bins = 20) {
    std::vector<long> h(bins, 0);
    for (double x : d) {
        int b = static_cast<int>(x * bins);
        b = std::clamp(b, 0, bins - 1);
        ++h[b];
    }
    return h;
}

/// Nearest-rank quantile of an unsorted sample.
inline double quantile_nearest_rank(std::vector<double> v, double q) {
    if (v.empty()) throw std::runtime_error("quantile of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

/// Distance of every training row to the model itself (self included).
inline std::vector<double> train_self_distances(const KdeModel& m) {
    std::vector<double> out(m.rows());
    std::vector<double> q(m.dim);
    for (int r = 0; r < m.rows(); ++r) {
        for (int j = 0; j < m.dim; ++j) q[j] = m.train[static_cast<std::size_t>(r) * m.dim + j];
        out[r] = kde_distance(m, q);
    }
    return out;
}

inline SimilarityReport pcc_report(const ErrorDatabase& train, const ErrorDatabase& target,
                                   const PccThresholds& thr = PccThresholds{},
                                   const KdeOptions& opt = KdeOptions{}) {
    if (train.names != target.names) throw std::runtime_error("similarity: feature-name lists differ");
    const KdeModel m = fit_kde(train.feature_matrix(), opt);

    SimilarityReport rep;
    rep.train_rows = m.rows();
    rep.target_rows = target.rows();
    rep.subsampled_from = m.subsampled_from;
    rep.distances = kde_distances(m, target.feature_matrix());
    rep.d_mean = std::accumulate(rep.distances.begin(), rep.distances.end(), 0.0) /
                 static_cast<double>(rep.distances.size());
    rep.histogram = distance_histogram(rep.distances);
    rep.self_baseline = quantile_nearest_rank(train_self_distances(m), thr.self_quantile);
    long exceed = 0;
    for (double d : rep.distances)
        if (d > rep.self_baseline) ++exceed;
    rep.exceed_fraction = static_cast<double>(exceed) / static_cast<double>(rep.distances.size());
    rep.pcc_label = rep.exceed_fraction > thr.extrapolation_fraction ? "local extrapolation" : "local interpolation";
    rep.validate();
    return rep;
}

inline void write_similarity_report(std::ostream& os, const SimilarityReport& r) {
    TextHeader h;
    h.set_double("d_kde_mean", r.d_mean);
    h.set_double("self_baseline", r.self_baseline);
    h.set_double("exceed_fraction", r.exceed_fraction);
    h.set("pcc_label", r.pcc_label);
    h.set_long("train_rows", r.train_rows);
    h.set_long("target_rows", r.target_rows);
    h.set_long("subsampled_from", r.subsampled_from);
    h.write(os);
    os << "bin_lo bin_hi count\n";
    const int bins = static_cast<int>(r.histogram.size());
    for (int b = 0; b < bins; ++b)
        os << format_double(static_cast<double>(b) / bins) << ' ' << format_double(static_cast<double>(b + 1) / bins)
           << ' ' << r.histogram[b] << '\n';
    os << "row d_kde\n";
    for (std::size_t i = 0; i < r.distances.size(); ++i) os << i << ' ' << format_double(r.distances[i]) << '\n';
}

inline void save_similarity_report(const std::string& path, const SimilarityReport& r) {
    std::ostringstream os;
    write_similarity_report(os, r);
    write_file_atomic(path, os.str());
}

}  // namespace fsm
