#pragma once

// Shared types and kernels: datasets, L2 distances and the temperature softmin.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pixood {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IndexVector = std::vector<std::size_t>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

/// Raised by file readers. `kind` identifies which check failed.
class FormatError : public Error {
public:
    enum class Kind { bad_magic, truncated, count_mismatch, parse };

    FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// N points in R^D, optionally labelled with class ids in [0, class_count).
struct Dataset {
    Matrix points;                            // N x D, row per point
    std::optional<std::vector<int>> labels;   // length N when present
    int class_count = 0;

    std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }
    bool labelled() const { return labels.has_value(); }

    /// Rows whose label equals `class_id`.
    Matrix class_points(int class_id) const {
        if (!labels) throw InvalidArgument("dataset has no labels");
        std::vector<Eigen::Index> rows;
        for (std::size_t i = 0; i < labels->size(); ++i)
            if ((*labels)[i] == class_id) rows.push_back(static_cast<Eigen::Index>(i));
        Matrix out(static_cast<Eigen::Index>(rows.size()), points.cols());
        for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = points.row(rows[r]);
        return out;
    }
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

/// Throws unless the dataset satisfies its structural invariants.
inline void validate(const Dataset& ds) {
    if (ds.points.rows() < 1 || ds.points.cols() < 1) throw InvalidArgument("dataset must have N >= 1 and D >= 1");
    if (!ds.points.allFinite()) throw InvalidArgument("dataset contains non-finite coordinates");
    if (ds.labels) {
        if (ds.labels->size() != ds.size()) throw DimensionMismatch("label count does not match point count");
        for (int l : *ds.labels)
            if (l < 0 || l >= ds.class_count)
                throw InvalidArgument("label " + std::to_string(l) + " outside [0, " + std::to_string(ds.class_count) + ")");
    }
}

inline Dataset make_dataset(Matrix points, std::optional<std::vector<int>> labels = std::nullopt) {
    Dataset ds;
    ds.points = std::move(points);
    if (labels) {
        int max_label = -1;
        for (int l : *labels) max_label = std::max(max_label, l);
        ds.class_count = max_label + 1;
    }
    ds.labels = std::move(labels);
    validate(ds);
    return ds;
}

template <typename A, typename B>
double l2_distance(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& c) {
    if (x.size() != c.size())
        throw DimensionMismatch("l2_distance: sizes " + std::to_string(x.size()) + " and " + std::to_string(c.size()));
    return (x.derived().reshaped() - c.derived().reshaped()).norm();
}

/// n x K matrix of distances between rows of `points` and rows of `centers`.
inline Matrix pairwise_distances(const Eigen::Ref<const Matrix>& points, const Eigen::Ref<const Matrix>& centers) {
    if (points.cols() != centers.cols()) throw DimensionMismatch("pairwise_distances: dimension mismatch");
    Matrix d(points.rows(), centers.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        for (Eigen::Index k = 0; k < centers.rows(); ++k) d(i, k) = (points.row(i) - centers.row(k)).norm();
    return d;
}

/// Row-stochastic n x K assignment matrix.
using WeightMatrix = Matrix;

/// True when every entry is in [0,1] and each row sums to one within `tol`.
inline bool is_row_stochastic(const WeightMatrix& w, double tol = 1e-9) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
        double sum = 0.0;
        for (Eigen::Index k = 0; k < w.cols(); ++k) {
            const double v = w(i, k);
            if (!(v >= 0.0 && v <= 1.0)) return false;
            sum += v;
        }
        if (std::abs(sum - 1.0) > tol) return false;
    }
    return true;
}

/// Writes softmax(logits) of one row into `out`; max-shifted so it never overflows.
/// Exact ties at the maximum keep their share, so the sum is still one.
template <typename In, typename Out>
void stable_softmax_row(const Eigen::MatrixBase<In>& logits, Eigen::MatrixBase<Out>& out) {
    const double top = logits.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index k = 0; k < logits.size(); ++k) {
        const double e = std::exp(logits(k) - top);
        out(k) = e;
        sum += e;
    }
    out /= sum;
}

/// w(i,k) = exp(-d_ik^e / tau) / sum_j exp(-d_ij^e / tau), with e the exponent (1 or 2).
inline WeightMatrix softmin_weights(const Eigen::Ref<const Matrix>& distances, double tau, int exponent) {
    if (!(tau > 0.0)) throw InvalidArgument("softmin_weights: tau must be positive");
    if (exponent != 1 && exponent != 2) throw InvalidArgument("softmin_weights: exponent must be 1 or 2");
    if (!distances.allFinite() || (distances.array() < 0.0).any())
        throw InvalidArgument("softmin_weights: distances must be finite and nonnegative");
    WeightMatrix w(distances.rows(), distances.cols());
    Vector logits(distances.cols());
    for (Eigen::Index i = 0; i < distances.rows(); ++i) {
        for (Eigen::Index k = 0; k < distances.cols(); ++k) {
            const double d = distances(i, k);
            logits(k) = -(exponent == 2 ? d * d : d) / tau;
        }
        auto row = w.row(i);
        stable_softmax_row(logits, row);
    }
    return w;
}

/// log(sum(exp(v))) without overflow.
template <typename V>
double log_sum_exp(const Eigen::MatrixBase<V>& v) {
    const double top = v.maxCoeff();
    if (!std::isfinite(top)) return top;
    return top + std::log((v.array() - top).exp().sum());
}

/// Index of the smallest entry; ties go to the lowest index.
template <typename V>
std::size_t argmin_lowest(const Eigen::MatrixBase<V>& v) {
    std::size_t best = 0;
    for (Eigen::Index k = 1; k < v.size(); ++k)
        if (v(k) < v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
    return best;
}

template <typename V>
std::size_t argmax_lowest(const Eigen::MatrixBase<V>& v) {
    std::size_t best = 0;
    for (Eigen::Index k = 1; k < v.size(); ++k)
        if (v(k) > v(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(k);
    return best;
}

}  // namespace pixood
