#pragma once

// Neyman-Pearson ID/OOD decisions in a 2D projection space: Gaussian ID and OOD
// densities, their likelihood ratio, and the calibrated score that maps a ratio
// to the ID false-negative rate of thresholding at it.

#include "pixood/core.hpp"
#include "pixood/io.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <vector>

namespace pixood::decision {

using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

struct Gaussian2 {
    Vec2 mean = Vec2::Zero();
    Mat2 cov = Mat2::Identity();

    void validate() const {
        if (!mean.allFinite() || !cov.allFinite()) throw InvalidArgument("Gaussian2: non-finite parameters");
        if (std::abs(cov(0, 1) - cov(1, 0)) > 1e-12 * std::max(1.0, cov.cwiseAbs().maxCoeff()))
            throw InvalidArgument("Gaussian2: covariance not symmetric");
        const Eigen::SelfAdjointEigenSolver<Mat2> es(cov);
        if (!(es.eigenvalues().minCoeff() > 0.0)) throw InvalidArgument("Gaussian2: covariance not positive definite");
    }

    double log_density(const Vec2& z) const {
        const Eigen::LLT<Mat2> llt(cov);
        const Vec2 u = llt.matrixL().solve(z - mean);
        const double log_det = 2.0 * std::log(llt.matrixL()(0, 0) * llt.matrixL()(1, 1));
        return -0.5 * u.squaredNorm() - std::log(2.0 * M_PI) - 0.5 * log_det;
    }

    double density(const Vec2& z) const { return std::exp(log_density(z)); }
};

/// Maximum-likelihood fit plus a ridge of 1e-9 * trace on the diagonal (1e-9
/// when the points coincide).
inline Gaussian2 fit_id_gaussian(const Eigen::Ref<const Matrix>& points) {
    if (points.cols() != 2) throw DimensionMismatch("fit_id_gaussian: points must be 2D");
    if (points.rows() < 3) throw InvalidArgument("fit_id_gaussian: need at least 3 points");
    Gaussian2 g;
    g.mean = points.colwise().mean().transpose();
    const Matrix centered = points.rowwise() - g.mean.transpose();
    g.cov = (centered.transpose() * centered) / static_cast<double>(points.rows());
    g.cov(1, 0) = g.cov(0, 1);
    const double trace = g.cov.trace();
    g.cov += 1e-9 * (trace > 0.0 ? trace : 1.0) * Mat2::Identity();
    return g;
}

/// Zero-mean diagonal Gaussian with variance inflation^2 * (var_j + mean_j^2) per axis.
inline Gaussian2 make_ood_gaussian(const Gaussian2& id, double inflation) {
    if (!(inflation > 0.0)) throw InvalidArgument("make_ood_gaussian: inflation must be positive");
    Gaussian2 g;
    g.mean = Vec2::Zero();
    g.cov = Mat2::Zero();
    for (int j = 0; j < 2; ++j) g.cov(j, j) = inflation * inflation * (id.cov(j, j) + id.mean(j) * id.mean(j));
    return g;
}

inline double log_likelihood_ratio(const Vec2& z, const Gaussian2& id, const Gaussian2& ood) {
    return id.log_density(z) - ood.log_density(z);
}

/// r(z) = p(z | ID) / p(z | OOD)
inline double likelihood_ratio(const Vec2& z, const Gaussian2& id, const Gaussian2& ood) {
    return std::exp(log_likelihood_ratio(z, id, ood));
}

struct GridSpec {
    Vec2 lower = Vec2::Constant(-6.0);
    Vec2 upper = Vec2::Constant(6.0);
    int resolution = 200;  // samples per axis

    std::size_t sample_count() const { return static_cast<std::size_t>(resolution) * static_cast<std::size_t>(resolution); }
};

/// Mean +- `half_width` standard deviations on each axis.
inline GridSpec default_grid(const Gaussian2& id, int resolution = 200, double half_width = 6.0) {
    GridSpec g;
    g.resolution = resolution;
    for (int j = 0; j < 2; ++j) {
        const double sd = std::sqrt(id.cov(j, j));
        g.lower(j) = id.mean(j) - half_width * sd;
        g.upper(j) = id.mean(j) + half_width * sd;
    }
    return g;
}

/// Pairs (r_i, eps_i) sorted by r with eps_i the ID mass where r <= r_i.
struct CalibrationTable {
    std::vector<double> ratios;
    std::vector<double> epsilons;
    GridSpec grid;

    std::size_t size() const { return ratios.size(); }
};

/// Tabulates eps(r) on a uniform grid: the ID density weights each grid cell and
/// eps_i is the normalised weight of all cells with ratio <= r_i. Equal ratios
/// share one entry and eps is forced non-decreasing.
inline CalibrationTable calibrate(const Gaussian2& id, const Gaussian2& ood, const GridSpec& grid) {
    id.validate();
    ood.validate();
    if (grid.sample_count() < 100) throw InvalidArgument("calibrate: need at least 100 grid samples");
    if (!(grid.upper.array() > grid.lower.array()).all() || !grid.lower.allFinite() || !grid.upper.allFinite())
        throw InvalidArgument("calibrate: degenerate grid bounds");

    const int res = grid.resolution;
    const Vec2 step = (grid.upper - grid.lower) / static_cast<double>(res - 1);
    std::vector<double> ratio(grid.sample_count()), mass(grid.sample_count());
    std::size_t idx = 0;
    for (int a = 0; a < res; ++a)
        for (int b = 0; b < res; ++b, ++idx) {
            const Vec2 z(grid.lower(0) + a * step(0), grid.lower(1) + b * step(1));
            ratio[idx] = likelihood_ratio(z, id, ood);
            mass[idx] = id.density(z);
        }
    std::vector<std::size_t> order(ratio.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return ratio[l] < ratio[r]; });
    const double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    if (!(total > 0.0)) throw InvalidArgument("calibrate: grid carries no ID mass");

    CalibrationTable table;
    table.grid = grid;
    double cumulative = 0.0;
    for (std::size_t j = 0; j < order.size(); ++j) {
        cumulative += mass[order[j]];
        const double r = ratio[order[j]];
        if (j + 1 < order.size() && ratio[order[j + 1]] == r) continue;
        table.ratios.push_back(r);
        table.epsilons.push_back(std::min(1.0, cumulative / total));
    }
    for (std::size_t j = 1; j < table.epsilons.size(); ++j)
        table.epsilons[j] = std::max(table.epsilons[j], table.epsilons[j - 1]);
    return table;
}

inline CalibrationTable calibrate(const Gaussian2& id, const Gaussian2& ood) {
    return calibrate(id, ood, default_grid(id));
}

/// Piecewise-linear eps(r), clamped to the end values outside the table.
inline double id_score(const CalibrationTable& table, double r) {
    if (table.ratios.empty()) throw InvalidArgument("id_score: empty calibration table");
    const auto& rs = table.ratios;
    if (!(r > rs.front())) return table.epsilons.front();
    if (r >= rs.back()) return table.epsilons.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(rs.begin(), rs.end(), r) - rs.begin());
    const std::size_t lo = hi - 1;
    if (rs[lo] == r) return table.epsilons[lo];
    const double t = (r - rs[lo]) / (rs[hi] - rs[lo]);
    return table.epsilons[lo] + t * (table.epsilons[hi] - table.epsilons[lo]);
}

inline double ood_score(const CalibrationTable& table, double r) { return 1.0 - id_score(table, r); }

/// Largest tabulated ratio whose false-negative rate is at most `epsilon`.
inline double np_threshold(const CalibrationTable& table, double epsilon) {
    if (!(epsilon > 0.0 && epsilon <= 1.0)) throw InvalidArgument("np_threshold: epsilon must be in (0, 1]");
    const auto it = std::upper_bound(table.epsilons.begin(), table.epsilons.end(), epsilon);
    if (it == table.epsilons.begin()) throw InvalidArgument("np_threshold: no threshold meets the epsilon bound");
    return table.ratios[static_cast<std::size_t>(it - table.epsilons.begin()) - 1];
}

struct Strategy {
    Gaussian2 id;
    Gaussian2 ood;
    double threshold = 1.0;  // mu
    double epsilon = 0.05;

    double ratio(const Vec2& z) const { return likelihood_ratio(z, id, ood); }
    /// true for ID: r(z) > mu
    bool accepts(const Vec2& z) const { return ratio(z) > threshold; }
};

inline Strategy make_strategy(const Gaussian2& id, const Gaussian2& ood, const CalibrationTable& table, double epsilon) {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("strategy epsilon must be in (0, 1)");
    return Strategy{id, ood, np_threshold(table, epsilon), epsilon};
}

// ---- dumps ------------------------------------------------------------------------

inline std::string calibration_to_csv(const CalibrationTable& t) {
    std::ostringstream out;
    out << "r,epsilon\n";
    for (std::size_t i = 0; i < t.size(); ++i) out << io::format_double(t.ratios[i]) << ',' << io::format_double(t.epsilons[i]) << '\n';
    return out.str();
}

inline CalibrationTable calibration_from_csv(const std::string& text) {
    const io::Table csv = io::parse_csv(text);
    const std::size_t rc = csv.column("r"), ec = csv.column("epsilon");
    CalibrationTable t;
    for (const auto& row : csv.rows) {
        t.ratios.push_back(row[rc]);
        t.epsilons.push_back(row[ec]);
    }
    if (t.ratios.empty()) throw FormatError(FormatError::Kind::count_mismatch, "empty calibration table");
    return t;
}

inline io::KeyValues strategy_to_key_values(const Strategy& s) {
    io::KeyValues kv;
    auto put_gaussian = [&](const std::string& prefix, const Gaussian2& g) {
        kv[prefix + "_mean_0"] = io::format_double(g.mean(0));
        kv[prefix + "_mean_1"] = io::format_double(g.mean(1));
        kv[prefix + "_cov_00"] = io::format_double(g.cov(0, 0));
        kv[prefix + "_cov_01"] = io::format_double(g.cov(0, 1));
        kv[prefix + "_cov_11"] = io::format_double(g.cov(1, 1));
    };
    put_gaussian("id", s.id);
    put_gaussian("ood", s.ood);
    kv["mu"] = io::format_double(s.threshold);
    kv["epsilon"] = io::format_double(s.epsilon);
    return kv;
}

inline Strategy strategy_from_key_values(const io::KeyValues& kv) {
    auto num = [&](const std::string& key) { return io::parse_double(io::require(kv, key)); };
    auto get_gaussian = [&](const std::string& prefix) {
        Gaussian2 g;
        g.mean << num(prefix + "_mean_0"), num(prefix + "_mean_1");
        g.cov << num(prefix + "_cov_00"), num(prefix + "_cov_01"), num(prefix + "_cov_01"), num(prefix + "_cov_11");
        g.validate();
        return g;
    };
    return Strategy{get_gaussian("id"), get_gaussian("ood"), num("mu"), num("epsilon")};
}

}  // namespace pixood::decision
