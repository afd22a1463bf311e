#pragma once

// EM for an equal-prior mixture of spherical Laplace components,
//   p(x) = (1/K) sum_k b_k^{-e} exp(-d(x, c_k) / b_k) / Z,
// with the parameter-independent normaliser Z dropped throughout. Used to check
// the condensation loss against the variational (Jensen) lower bound.

#include "pixood/core.hpp"
#include "pixood/io.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

namespace pixood::laplace_em {

struct LaplaceMixture {
    Matrix centers;  // K x D
    Vector scales;   // b_k > 0
    int density_exponent = 1;

    std::size_t size() const { return static_cast<std::size_t>(centers.rows()); }

    void validate() const {
        if (centers.rows() < 1) throw InvalidArgument("mixture needs at least one component");
        if (scales.size() != centers.rows()) throw DimensionMismatch("mixture scales/centers count mismatch");
        if (!(scales.array() > 0.0).all() || !scales.allFinite()) throw InvalidArgument("mixture scales must be positive");
        if (density_exponent < 1) throw InvalidArgument("density exponent must be >= 1");
    }
};

/// log of b_k^{-e} exp(-d_ik / b_k) for every point/component pair (n x K).
inline Matrix component_log_densities(const Eigen::Ref<const Matrix>& points, const LaplaceMixture& mix) {
    mix.validate();
    Matrix logd = pairwise_distances(points, mix.centers);
    for (Eigen::Index k = 0; k < logd.cols(); ++k)
        logd.col(k) = -logd.col(k) / mix.scales(k) -
                      Vector::Constant(logd.rows(), mix.density_exponent * std::log(mix.scales(k)));
    return logd;
}

/// Posterior responsibilities; equal priors cancel.
inline WeightMatrix e_step(const Eigen::Ref<const Matrix>& points, const LaplaceMixture& mix) {
    const Matrix logd = component_log_densities(points, mix);
    WeightMatrix w(logd.rows(), logd.cols());
    for (Eigen::Index i = 0; i < logd.rows(); ++i) {
        auto row = w.row(i);
        stable_softmax_row(logd.row(i), row);
    }
    return w;
}

/// sum_i log sum_k (1/K) b_k^{-e} exp(-d_ik / b_k), up to the dropped normaliser.
inline double log_likelihood(const Eigen::Ref<const Matrix>& points, const LaplaceMixture& mix) {
    const Matrix logd = component_log_densities(points, mix);
    const double log_prior = -std::log(static_cast<double>(logd.cols()));
    double total = 0.0;
    for (Eigen::Index i = 0; i < logd.rows(); ++i) total += log_prior + log_sum_exp(logd.row(i));
    return total;
}

/// The three parts of the Jensen bound: prior, expected component log-density
/// and the entropy of w. Their sum is the bound.
struct BoundTerms {
    double prior = 0.0;
    double likelihood = 0.0;
    double entropy = 0.0;

    double total() const { return prior + likelihood + entropy; }
};

inline BoundTerms jensen_bound_terms(const Eigen::Ref<const Matrix>& points, const WeightMatrix& weights,
                                     const LaplaceMixture& mix) {
    const Matrix logd = component_log_densities(points, mix);
    if (weights.rows() != logd.rows() || weights.cols() != logd.cols())
        throw DimensionMismatch("jensen_bound: weight matrix shape mismatch");
    const double log_prior = -std::log(static_cast<double>(logd.cols()));
    BoundTerms t;
    for (Eigen::Index i = 0; i < logd.rows(); ++i)
        for (Eigen::Index k = 0; k < logd.cols(); ++k) {
            const double w = weights(i, k);
            if (w <= 0.0) continue;  // 0 log 0 = 0
            t.prior += w * log_prior;
            t.likelihood += w * logd(i, k);
            t.entropy -= w * std::log(w);
        }
    return t;
}

inline double jensen_bound(const Eigen::Ref<const Matrix>& points, const WeightMatrix& weights,
                           const LaplaceMixture& mix) {
    return jensen_bound_terms(points, weights, mix).total();
}

struct MedianOptions {
    double tolerance = 1e-8;
    int max_iterations = 20000;
    double damping = 0.5;         // new = damping * old + (1 - damping) * weiszfeld(old)
    double min_distance = 1e-12;  // stands in for zero distances
};

/// sum_i w_i d(x_i, c)
inline double weighted_distance_sum(const Eigen::Ref<const Matrix>& points, const Eigen::Ref<const Vector>& weights,
                                    const Eigen::Ref<const Eigen::RowVectorXd>& c) {
    return weights.dot((points.rowwise() - c).rowwise().norm());
}

/// Weighted geometric median by damped Weiszfeld iterations from `start`.
/// Never returns a point with a larger objective than `start`.
inline Eigen::RowVectorXd weighted_geometric_median(const Eigen::Ref<const Matrix>& points,
                                                    const Eigen::Ref<const Vector>& weights,
                                                    const Eigen::Ref<const Eigen::RowVectorXd>& start,
                                                    const MedianOptions& opt = {}) {
    Eigen::RowVectorXd c = start;
    for (int it = 0; it < opt.max_iterations; ++it) {
        Eigen::RowVectorXd num = Eigen::RowVectorXd::Zero(points.cols());
        double den = 0.0;
        for (Eigen::Index i = 0; i < points.rows(); ++i) {
            if (weights(i) <= 0.0) continue;
            const double d = std::max((points.row(i) - c).norm(), opt.min_distance);
            num += weights(i) / d * points.row(i);
            den += weights(i) / d;
        }
        if (den <= 0.0) break;
        const Eigen::RowVectorXd next = opt.damping * c + (1.0 - opt.damping) * (num / den);
        const double step = (next - c).norm();
        c = next;
        if (step < opt.tolerance) break;
    }
    if (weighted_distance_sum(points, weights, c) > weighted_distance_sum(points, weights, start)) return start;
    return c;
}

struct MStepResult {
    LaplaceMixture mixture;
    IndexVector flagged;  // components left unchanged for lack of weight
};

/// Maximises the Jensen bound over centers and scales for fixed weights: each
/// center becomes the weighted geometric median (started from the current
/// center), then b_k = sum_i w_ik d_ik / (e sum_i w_ik).
inline MStepResult m_step(const Eigen::Ref<const Matrix>& points, const WeightMatrix& weights,
                          const LaplaceMixture& mix, const MedianOptions& opt = {}) {
    mix.validate();
    if (weights.rows() != points.rows() || weights.cols() != mix.centers.rows())
        throw DimensionMismatch("m_step: weight matrix shape mismatch");
    MStepResult out{mix, {}};
    for (Eigen::Index k = 0; k < mix.centers.rows(); ++k) {
        const Vector wk = weights.col(k);
        const double mass = wk.sum();
        if (mass < 1e-12) {
            out.flagged.push_back(static_cast<std::size_t>(k));
            continue;
        }
        const Eigen::RowVectorXd c = weighted_geometric_median(points, wk, mix.centers.row(k), opt);
        out.mixture.centers.row(k) = c;
        const double beta = weighted_distance_sum(points, wk, c) / (mix.density_exponent * mass);
        out.mixture.scales(k) = std::max(beta, 1e-12);
    }
    return out;
}

struct EmFit {
    LaplaceMixture mixture;
    std::vector<double> log_likelihoods;  // before the first iteration and after each one
};

/// Random initial mixture: K distinct data points, common scale equal to the
/// mean nearest-center distance.
template <typename Rng>
LaplaceMixture random_mixture(const Eigen::Ref<const Matrix>& points, int k_count, int density_exponent, Rng& rng) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(points.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    LaplaceMixture mix;
    mix.density_exponent = density_exponent;
    mix.centers.resize(k_count, points.cols());
    for (Eigen::Index k = 0; k < k_count; ++k) mix.centers.row(k) = points.row(idx[static_cast<std::size_t>(k % points.rows())]);
    double mean_nearest = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        mean_nearest += (mix.centers.rowwise() - points.row(i)).rowwise().norm().minCoeff();
    mean_nearest /= static_cast<double>(points.rows());
    mix.scales = Vector::Constant(k_count, std::max(mean_nearest, 1e-6));
    return mix;
}

inline EmFit em_fit(const Eigen::Ref<const Matrix>& points, int k_count, int iterations, std::uint64_t seed,
                    int density_exponent = 1) {
    if (k_count < 1) throw InvalidArgument("em_fit: K must be >= 1");
    if (iterations < 0) throw InvalidArgument("em_fit: iterations must be >= 0");
    if (points.rows() < 1) throw InvalidArgument("em_fit: empty dataset");
    std::mt19937_64 rng(seed);
    EmFit fit{random_mixture(points, k_count, density_exponent, rng), {}};
    fit.log_likelihoods.push_back(log_likelihood(points, fit.mixture));
    for (int it = 0; it < iterations; ++it) {
        fit.mixture = m_step(points, e_step(points, fit.mixture), fit.mixture).mixture;
        fit.log_likelihoods.push_back(log_likelihood(points, fit.mixture));
    }
    return fit;
}

/// CSV with columns k, c_0..c_{D-1}, beta.
inline std::string mixture_to_csv(const LaplaceMixture& mix) {
    std::ostringstream out;
    out << 'k';
    for (Eigen::Index j = 0; j < mix.centers.cols(); ++j) out << ",c_" << j;
    out << ",beta\n";
    for (Eigen::Index k = 0; k < mix.centers.rows(); ++k) {
        out << k;
        for (Eigen::Index j = 0; j < mix.centers.cols(); ++j) out << ',' << io::format_double(mix.centers(k, j));
        out << ',' << io::format_double(mix.scales(k)) << '\n';
    }
    return out.str();
}

inline LaplaceMixture mixture_from_csv(const std::string& text, int density_exponent = 1) {
    const io::Table t = io::parse_csv(text);
    const std::size_t beta_col = t.column("beta");
    const std::size_t dim = beta_col - 1;
    for (std::size_t j = 0; j < dim; ++j) t.column("c_" + std::to_string(j));
    if (dim == 0 || t.rows.empty()) throw FormatError(FormatError::Kind::parse, "mixture CSV has no components");
    LaplaceMixture mix;
    mix.density_exponent = density_exponent;
    mix.centers.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(dim));
    mix.scales.resize(static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t j = 0; j < dim; ++j)
            mix.centers(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = t.rows[r][1 + j];
        mix.scales(static_cast<Eigen::Index>(r)) = t.rows[r][beta_col];
    }
    mix.validate();
    return mix;
}

}  // namespace pixood::laplace_em
