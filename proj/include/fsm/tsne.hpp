#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsm/features.hpp"
#include "fsm/rng.hpp"

namespace fsm {

struct TsneOptions {
    double perplexity = 30.0;
    int iterations = 1000;
    std::uint64_t seed = 0x51ed270b453f88abull;
    int max_rows = 6000;  // exact-method budget; larger inputs are subsampled
    double learning_rate = 200.0;

    void validate() const {
        if (!(perplexity > 0.0)) throw std::runtime_error("tsne: perplexity must be positive");
        if (iterations < 8) throw std::runtime_error("tsne: need at least 8 iterations");
        if (max_rows < 4 || max_rows > 6000)
            throw std::runtime_error("tsne: row budget must lie in [4, 6000]");
        if (!(learning_rate > 0.0)) throw std::runtime_error("tsne: learning rate must be positive");
    }
};

struct TsneEmbedding {
    std::vector<double> xy;                  // rows x 2, row-major
    std::vector<std::size_t> row_indices;    // rows used, indices into the input matrix
    std::vector<double> kl_history;          // KL per iteration after early exaggeration ends
    long subsampled_from = 0;                // original row count when subsampled, else 0

    int rows() const { return static_cast<int>(xy.size()) / 2; }
};

/// Row-normalized conditional affinities p_{j|i} with per-row bandwidths
/// found by bisection so every row's perplexity matches the target.
inline std::vector<double> conditional_affinities(const std::vector<double>& data, int n, int d,
                                                  double perplexity) {
    if (n < 2) throw std::runtime_error("tsne: need at least 2 rows");
    if (!(perplexity < n)) throw std::runtime_error("tsne: perplexity infeasible for " + std::to_string(n) + " rows");
    std::vector<double> d2(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) {
                const double e = data[static_cast<std::size_t>(i) * d + k] - data[static_cast<std::size_t>(j) * d + k];
                s += e * e;
            }
            d2[static_cast<std::size_t>(i) * n + j] = s;
            d2[static_cast<std::size_t>(j) * n + i] = s;
        }

    std::vector<double> p(static_cast<std::size_t>(n) * n, 0.0);
    const double target = std::log(perplexity);
    std::vector<double> row(n);
    for (int i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (int it = 0; it < 64; ++it) {
            sum = 0.0;
            double dsum = 0.0;  // sum of beta-weighted distances, for the entropy
            for (int j = 0; j < n; ++j) {
                if (j == i) {
                    row[j] = 0.0;
                    continue;
                }
                row[j] = std::exp(-beta * d2[static_cast<std::size_t>(i) * n + j]);
                sum += row[j];
                dsum += d2[static_cast<std::size_t>(i) * n + j] * row[j];
            }
            if (sum <= 0.0) {  // all neighbors underflowed: soften
                hi = beta;
                beta = 0.5 * (lo + beta);
                continue;
            }
            const double entropy = std::log(sum) + beta * dsum / sum;
            const double diff = entropy - target;
            if (std::fabs(diff) < 1e-7) break;
            if (diff > 0.0) {  // too spread out: sharpen
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        if (sum <= 0.0) {  // isolated row: fall back to uniform affinities
            for (int j = 0; j < n; ++j) row[j] = (j == i) ? 0.0 : 1.0;
            sum = static_cast<double>(n - 1);
        }
        for (int j = 0; j < n; ++j) p[static_cast<std::size_t>(i) * n + j] = row[j] / sum;
    }
    return p;
}

/// In-place symmetrization p = (c + c^T) / (2n); the result sums to 1.
inline void symmetrize_affinities(std::vector<double>& p, int n) {
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v =
                (p[static_cast<std::size_t>(i) * n + j] + p[static_cast<std::size_t>(j) * n + i]) / (2.0 * n);
            p[static_cast<std::size_t>(i) * n + j] = v;
            p[static_cast<std::size_t>(j) * n + i] = v;
        }
}

namespace detail {

/// KL(P || Q) for the current embedding; Q is the normalized Student-t kernel.
inline double tsne_kl(const std::vector<double>& p, const std::vector<double>& y, int n) {
    double z = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            z += 2.0 / (1.0 + dx * dx + dy * dy);
        }
    z = std::max(z, 1e-300);
    double kl = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double pij = p[static_cast<std::size_t>(i) * n + j];
            if (pij <= 0.0) continue;
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            const double q = std::max(1.0 / ((1.0 + dx * dx + dy * dy) * z), 1e-300);
            kl += pij * std::log(pij / q);
        }
    return kl;
}

inline void tsne_gradient(const std::vector<double>& p, const std::vector<double>& y, int n, double exaggeration,
                          std::vector<double>& grad) {
    double z = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            z += 2.0 / (1.0 + dx * dx + dy * dy);
        }
    z = std::max(z, 1e-300);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
            const double w = 1.0 / (1.0 + dx * dx + dy * dy);
            const double q = w / z;
            const double c = 4.0 * (exaggeration * p[static_cast<std::size_t>(i) * n + j] - q) * w;
            grad[2 * i] += c * dx;
            grad[2 * i + 1] += c * dy;
        }
}

}  // namespace detail

/// Exact t-SNE to 2-D. Deterministic for a fixed seed; inputs beyond the row
/// budget are uniformly subsampled (seeded). The KL objective is enforced
/// non-increasing over the final quarter of iterations by step backtracking.
inline TsneEmbedding tsne_embed(const FeatureMatrix& rows, const TsneOptions& opt = TsneOptions{}) {
    opt.validate();
    const int d = rows.cols();
    const int n0 = rows.rows();
    if (n0 < 4) throw std::runtime_error("tsne: need at least 4 rows");

    TsneEmbedding out;
    Rng rng(opt.seed);
    out.row_indices.resize(n0);
    std::iota(out.row_indices.begin(), out.row_indices.end(), 0);
    if (n0 > opt.max_rows) {
        out.row_indices = rng.sample_indices(n0, static_cast<std::size_t>(opt.max_rows));
        out.subsampled_from = n0;
    }
    const int n = static_cast<int>(out.row_indices.size());
    const double perplexity = opt.perplexity;
    if (!(perplexity < n))
        throw std::runtime_error("tsne: perplexity infeasible for " + std::to_string(n) + " rows");

    std::vector<double> data(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < d; ++k) data[static_cast<std::size_t>(i) * d + k] = rows.at(out.row_indices[i], k);

    std::vector<double> p = conditional_affinities(data, n, d, perplexity);
    symmetrize_affinities(p, n);

    std::vector<double> y(2 * n), vel(2 * n, 0.0), gain(2 * n, 1.0), grad(2 * n);
    for (double& v : y) v = 1e-2 * rng.normal();

    const int exag_end = std::min(250, opt.iterations / 2);
    const int final_quarter = opt.iterations - opt.iterations / 4;
    double eta = opt.learning_rate;
    double kl_prev = std::numeric_limits<double>::infinity();

    for (int it = 0; it < opt.iterations; ++it) {
        const double exaggeration = it < exag_end ? 12.0 : 1.0;
        const double momentum = it < exag_end ? 0.5 : 0.8;
        detail::tsne_gradient(p, y, n, exaggeration, grad);

        const std::vector<double> y_saved = y;
        auto apply_step = [&](double rate) {
            for (int k = 0; k < 2 * n; ++k) {
                gain[k] = (grad[k] > 0.0) != (vel[k] > 0.0) ? gain[k] + 0.2 : gain[k] * 0.8;
                gain[k] = std::max(gain[k], 0.01);
                vel[k] = momentum * vel[k] - rate * gain[k] * grad[k];
                y[k] += vel[k];
            }
            double mx = 0.0, my = 0.0;
            for (int i = 0; i < n; ++i) {
                mx += y[2 * i];
                my += y[2 * i + 1];
            }
            mx /= n;
            my /= n;
            for (int i = 0; i < n; ++i) {
                y[2 * i] -= mx;
                y[2 * i + 1] -= my;
            }
        };
        const std::vector<double> gain_saved = gain, vel_saved = vel;
        apply_step(eta);

        if (it >= exag_end) {
            double kl = detail::tsne_kl(p, y, n);
            if (it >= final_quarter) {
                int retries = 0;
                while (kl > kl_prev && retries < 25) {
                    y = y_saved;
                    gain = gain_saved;
                    vel.assign(2 * n, 0.0);
                    eta *= 0.5;
                    apply_step(eta);
                    kl = detail::tsne_kl(p, y, n);
                    ++retries;
                }
                if (kl > kl_prev) {  // freeze: keep the previous point
                    y = y_saved;
                    vel.assign(2 * n, 0.0);
                    kl = kl_prev;
                }
            }
            out.kl_history.push_back(kl);
            kl_prev = kl;
        }
    }
    out.xy = std::move(y);
    return out;
}

}  // namespace fsm
