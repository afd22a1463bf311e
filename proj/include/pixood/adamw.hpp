#pragma once

#include "pixood/core.hpp"

#include <cmath>

namespace pixood {

struct AdamWConfig {
    double learning_rate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// AdamW state for one parameter block. Weight decay is applied directly to
/// the parameters rather than folded into the gradient.
class AdamW {
public:
    AdamW() = default;
    AdamW(Eigen::Index rows, Eigen::Index cols, AdamWConfig config)
        : config_(config), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

    /// One step with learning rate `lr` (callers apply their own schedule).
    template <typename P, typename G>
    void step(Eigen::MatrixBase<P>& params, const Eigen::MatrixBase<G>& grad, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
        for (Eigen::Index i = 0; i < params.rows(); ++i) {
            for (Eigen::Index j = 0; j < params.cols(); ++j) {
                const double g = grad(i, j);
                double& m = m_(i, j);
                double& v = v_(i, j);
                m = config_.beta1 * m + (1.0 - config_.beta1) * g;
                v = config_.beta2 * v + (1.0 - config_.beta2) * g * g;
                const double mhat = m / c1;
                const double vhat = v / c2;
                params(i, j) -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * params(i, j));
            }
        }
    }

    /// Clears the moment estimates of one row (used when a parameter row is re-initialised).
    void reset_row(Eigen::Index row) {
        m_.row(row).setZero();
        v_.row(row).setZero();
    }

    long long steps() const { return t_; }

private:
    AdamWConfig config_;
    Matrix m_;
    Matrix v_;
    long long t_ = 0;
};

/// Cosine decay from `base` at progress 0 to 0 at progress 1.
inline double cosine_decay(double base, double progress) {
    return 0.5 * base * (1.0 + std::cos(M_PI * progress));
}

}  // namespace pixood
