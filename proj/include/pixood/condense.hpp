#pragma once

// Incremental soft-to-hard condensation of a point set into at most K etalons.
//
// Three objectives share one training loop:
//   soft_kmeans    sum_k w(k,i) d_ik^2        with w = softmin(d^2 / tau)
//   soft_kmedians  sum_k w(k,i) d_ik          with w = softmin(d / tau)
//   condensation   sum_k w(k,i) (log b_k + d_ik / b_k), w = softmin(d / tau)
// Gradients are taken through w as well as through the per-pair term.

#include "pixood/adamw.hpp"
#include "pixood/core.hpp"
#include "pixood/io.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>
#include <span>
#include <string>
#include <vector>

namespace pixood::condense {

enum class Variant { soft_kmeans, soft_kmedians, condensation };

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::soft_kmeans: return "soft_kmeans";
        case Variant::soft_kmedians: return "soft_kmedians";
        case Variant::condensation: return "condensation";
    }
    return "?";
}

inline Variant parse_variant(const std::string& name) {
    if (name == "soft_kmeans" || name == "kmeans") return Variant::soft_kmeans;
    if (name == "soft_kmedians" || name == "kmedians") return Variant::soft_kmedians;
    if (name == "condensation") return Variant::condensation;
    throw InvalidArgument("unknown variant \"" + name + "\"");
}

/// Distance exponent used inside the softmin for a variant.
inline int softmin_exponent(Variant v) { return v == Variant::soft_kmeans ? 2 : 1; }

struct EtalonSet {
    Matrix centers;     // K x D
    Vector log_scales;  // scale b_k = exp(log_scales[k]) > 0
    Variant variant = Variant::condensation;

    std::size_t size() const { return static_cast<std::size_t>(centers.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(centers.cols()); }
    Vector scales() const { return log_scales.array().exp(); }
};

struct CondenseConfig {
    int budget = 50;             // K
    int epochs = 100;
    int warmup_epochs = 5;
    double learning_rate = 0.1;  // cosine-decayed per epoch
    double weight_decay = 0.0;
    int batch_size = 256;
    double tau_start = 1.0;      // multiples of the median pairwise distance (squared for soft_kmeans)
    double tau_end = 1e-3;
    double ewa_decay = 0.1;      // q
    double reinit_threshold = 1.0;
    double reinit_noise_scale = 1e-3;
    bool reinit = true;
    std::uint64_t seed = 0;
    Variant variant = Variant::condensation;

    void validate() const {
        if (budget < 1) throw InvalidArgument("budget K must be >= 1");
        if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
        if (warmup_epochs < 0) throw InvalidArgument("warmup_epochs must be >= 0");
        if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
        if (!(ewa_decay > 0.0 && ewa_decay <= 1.0)) throw InvalidArgument("ewa_decay must be in (0, 1]");
        if (!(reinit_threshold >= 0.0)) throw InvalidArgument("reinit_threshold must be >= 0");
        if (!(tau_end > 0.0 && tau_start >= tau_end)) throw InvalidArgument("need tau_start >= tau_end > 0");
        if (!(reinit_noise_scale >= 0.0)) throw InvalidArgument("reinit_noise_scale must be >= 0");
    }
};

/// Bias-corrected running average of per-etalon batch support.
struct SupportTracker {
    Vector support;
    long long iterations = 0;

    static SupportTracker zeros(std::size_t k) { return {Vector::Zero(static_cast<Eigen::Index>(k)), 0}; }
};

// ---- objectives -------------------------------------------------------------

/// (1/N) sum_i min_k d(x_i, c_k)^2 with exact hard assignment.
inline double kmeans_objective(const Eigen::Ref<const Matrix>& points, const EtalonSet& etalons) {
    if (points.rows() == 0) throw InvalidArgument("kmeans_objective: empty dataset");
    if (points.cols() != etalons.centers.cols()) throw DimensionMismatch("kmeans_objective: dimension mismatch");
    double total = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        total += (etalons.centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff();
    return total / static_cast<double>(points.rows());
}

struct BatchEvaluation {
    double loss = 0.0;
    Matrix grad_centers;     // K x D
    Vector grad_log_scales;  // K
    WeightMatrix weights;    // n x K softmin assignment
};

/// Batch-mean loss of the etalon set's variant and its analytic gradients.
inline BatchEvaluation batch_loss_and_gradients(const Eigen::Ref<const Matrix>& batch, const EtalonSet& etalons,
                                                double tau) {
    if (!(tau > 0.0)) throw InvalidArgument("batch_loss_and_gradients: tau must be positive");
    if (batch.rows() == 0) throw InvalidArgument("batch_loss_and_gradients: empty batch");
    if (batch.cols() != etalons.centers.cols()) throw DimensionMismatch("batch_loss_and_gradients: dimension mismatch");
    if (!batch.allFinite() || !etalons.centers.allFinite() || !etalons.log_scales.allFinite())
        throw InvalidArgument("batch_loss_and_gradients: non-finite input");

    const Eigen::Index n = batch.rows();
    const Eigen::Index k_count = etalons.centers.rows();
    const Eigen::Index dim = batch.cols();
    const Variant variant = etalons.variant;
    const Vector scales = etalons.scales();

    BatchEvaluation out;
    out.grad_centers = Matrix::Zero(k_count, dim);
    out.grad_log_scales = Vector::Zero(k_count);
    out.weights.resize(n, k_count);

    Vector dist(k_count), arg(k_count), term(k_count), logits(k_count), w(k_count);
    Matrix diff(k_count, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        diff = etalons.centers.rowwise() - batch.row(i);
        for (Eigen::Index k = 0; k < k_count; ++k) {
            const double sq = diff.row(k).squaredNorm();
            dist(k) = std::sqrt(sq);
            arg(k) = variant == Variant::soft_kmeans ? sq : dist(k);
            switch (variant) {
                case Variant::soft_kmeans: term(k) = sq; break;
                case Variant::soft_kmedians: term(k) = dist(k); break;
                case Variant::condensation: term(k) = etalons.log_scales(k) + dist(k) / scales(k); break;
            }
            logits(k) = -arg(k) / tau;
        }
        stable_softmax_row(logits, w);
        out.weights.row(i) = w.transpose();
        const double f = w.dot(term);
        out.loss += f;

        for (Eigen::Index k = 0; k < k_count; ++k) {
            // d f / d arg_k through the softmin
            const double through_w = -(w(k) / tau) * (term(k) - f);
            if (variant == Variant::soft_kmeans) {
                // arg = d^2 = term, d arg / d c = 2 (c - x)
                out.grad_centers.row(k) += (w(k) + through_w) * 2.0 * diff.row(k);
                continue;
            }
            const double direct = variant == Variant::condensation ? w(k) / scales(k) : w(k);
            if (dist(k) > 0.0) out.grad_centers.row(k) += (direct + through_w) / dist(k) * diff.row(k);
            if (variant == Variant::condensation) out.grad_log_scales(k) += w(k) * (1.0 - dist(k) / scales(k));
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    out.loss *= inv_n;
    out.grad_centers *= inv_n;
    out.grad_log_scales *= inv_n;
    return out;
}

// ---- schedule, support, re-inits ---------------------------------------------

/// Cosine interpolation from tau_start at epoch 0 to tau_end at the last epoch.
inline double tau_schedule(int epoch, const CondenseConfig& config) {
    if (epoch < 0 || epoch >= config.epochs) throw InvalidArgument("tau_schedule: epoch out of range");
    if (config.epochs == 1) return config.tau_start;
    const double phase = M_PI * static_cast<double>(epoch) / static_cast<double>(config.epochs - 1);
    return config.tau_end + 0.5 * (config.tau_start - config.tau_end) * (1.0 + std::cos(phase));
}

/// Folds the column sums of `weights` into the running average with decay q.
inline void update_support(SupportTracker& tracker, const WeightMatrix& weights, double q) {
    if (!(q > 0.0 && q <= 1.0)) throw InvalidArgument("update_support: q must be in (0, 1]");
    if (tracker.support.size() != weights.cols()) throw DimensionMismatch("update_support: etalon count mismatch");
    ++tracker.iterations;
    const double qt = q / (1.0 - std::pow(1.0 - q, static_cast<double>(tracker.iterations)));
    const Vector raw = weights.colwise().sum().transpose();
    tracker.support = (1.0 - qt) * tracker.support + qt * raw;
}

/// Indices whose smoothed support fell below the threshold, once past warm-up.
inline IndexVector select_reinits(const SupportTracker& tracker, const CondenseConfig& config, int epoch) {
    IndexVector out;
    if (epoch <= config.warmup_epochs) return out;
    for (Eigen::Index k = 0; k < tracker.support.size(); ++k)
        if (tracker.support(k) < config.reinit_threshold) out.push_back(static_cast<std::size_t>(k));
    return out;
}

/// Moves each listed etalon onto a random batch point plus Gaussian noise with
/// standard deviation noise_scale * RMS norm of the batch. Scales reset to 1 and
/// supports to `support_reset`.
template <typename Rng>
void reinit_etalons(EtalonSet& etalons, SupportTracker& tracker, std::span<const std::size_t> indices,
                    const Eigen::Ref<const Matrix>& batch, double noise_scale, double support_reset, Rng& rng) {
    if (indices.empty()) return;
    if (batch.rows() == 0) throw InvalidArgument("reinit_etalons: empty batch");
    const double rms = std::sqrt(batch.rowwise().squaredNorm().mean());
    const double sigma = noise_scale * rms;
    std::uniform_int_distribution<Eigen::Index> pick(0, batch.rows() - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t idx : indices) {
        const auto k = static_cast<Eigen::Index>(idx);
        if (k >= etalons.centers.rows()) throw InvalidArgument("reinit_etalons: index out of range");
        etalons.centers.row(k) = batch.row(pick(rng));
        if (sigma > 0.0)
            for (Eigen::Index j = 0; j < etalons.centers.cols(); ++j) etalons.centers(k, j) += sigma * noise(rng);
        etalons.log_scales(k) = 0.0;
        if (tracker.support.size() > k) tracker.support(k) = support_reset;
    }
}

struct Nearest {
    std::size_t index = 0;
    double distance = 0.0;
};

/// Closest etalon to x; ties go to the lowest index.
template <typename V>
Nearest nearest_etalon(const Eigen::MatrixBase<V>& x, const EtalonSet& etalons) {
    if (etalons.centers.rows() == 0) throw InvalidArgument("nearest_etalon: empty etalon set");
    if (x.size() != etalons.centers.cols()) throw DimensionMismatch("nearest_etalon: dimension mismatch");
    Nearest best{0, std::numeric_limits<double>::infinity()};
    for (Eigen::Index k = 0; k < etalons.centers.rows(); ++k) {
        const double d = (etalons.centers.row(k) - x.derived().reshaped().transpose()).norm();
        if (d < best.distance) best = {static_cast<std::size_t>(k), d};
    }
    return best;
}

inline std::size_t count_useful(const SupportTracker& tracker, double threshold) {
    return static_cast<std::size_t>((tracker.support.array() >= threshold).count());
}

/// Median of all pairwise distances between rows (raised to `exponent`).
inline double median_pairwise_distance(const Eigen::Ref<const Matrix>& points, int exponent = 1) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(points.rows() * (points.rows() - 1) / 2));
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        for (Eigen::Index j = i + 1; j < points.rows(); ++j) {
            const double v = (points.row(i) - points.row(j)).norm();
            d.push_back(exponent == 2 ? v * v : v);
        }
    if (d.empty()) return 1.0;
    auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid > 0.0 ? *mid : 1.0;
}

// ---- training loop -------------------------------------------------------------

struct CondenseResult {
    EtalonSet etalons;
    SupportTracker tracker;
    double tau_unit = 1.0;               // absolute tau = tau_schedule(...) * tau_unit
    std::vector<double> epoch_losses;    // mean batch loss per epoch
    std::size_t reinit_count = 0;
};

/// Runs the full condensation loop. Deterministic for a fixed config.
inline CondenseResult condense(const Eigen::Ref<const Matrix>& points, const CondenseConfig& config) {
    config.validate();
    if (points.rows() < 1 || points.cols() < 1) throw InvalidArgument("condense: need N >= 1 and D >= 1");
    if (!points.allFinite()) throw InvalidArgument("condense: non-finite coordinates");

    const Eigen::Index n_points = points.rows();
    const Eigen::Index dim = points.cols();
    const Eigen::Index k_count = config.budget;
    const Eigen::Index batch_size = std::min<Eigen::Index>(config.batch_size, n_points);
    const Eigen::Index batches_per_epoch = n_points / batch_size;  // remainder dropped

    std::mt19937_64 rng(config.seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_points));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    Matrix batch(batch_size, dim);
    auto fill_batch = [&](Eigen::Index b) {
        for (Eigen::Index r = 0; r < batch_size; ++r)
            batch.row(r) = points.row(order[static_cast<std::size_t>(b * batch_size + r)]);
    };

    CondenseResult result;
    EtalonSet& et = result.etalons;
    et.variant = config.variant;
    et.centers.resize(k_count, dim);
    et.log_scales = Vector::Zero(k_count);

    // K distinct points from the start of the first shuffle (the first batch when K <= n).
    fill_batch(0);
    for (Eigen::Index k = 0; k < k_count; ++k) et.centers.row(k) = points.row(order[static_cast<std::size_t>(k % n_points)]);
    result.tau_unit = median_pairwise_distance(batch, softmin_exponent(config.variant));
    result.tracker = SupportTracker::zeros(static_cast<std::size_t>(k_count));

    AdamWConfig opt_config{.learning_rate = config.learning_rate, .weight_decay = config.weight_decay};
    AdamW center_opt(k_count, dim, opt_config);
    AdamW scale_opt(k_count, 1, opt_config);
    const bool learn_scales = config.variant == Variant::condensation;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (epoch > 0) std::shuffle(order.begin(), order.end(), rng);
        const double tau = tau_schedule(epoch, config) * result.tau_unit;
        const double lr = cosine_decay(config.learning_rate, static_cast<double>(epoch) / config.epochs);
        double epoch_loss = 0.0;
        for (Eigen::Index b = 0; b < batches_per_epoch; ++b) {
            fill_batch(b);
            BatchEvaluation eval = batch_loss_and_gradients(batch, et, tau);
            epoch_loss += eval.loss;
            center_opt.step(et.centers, eval.grad_centers, lr);
            if (learn_scales) scale_opt.step(et.log_scales, eval.grad_log_scales, lr);
            if (!(et.scales().array() > 0.0).all() || !et.log_scales.allFinite())
                throw Error("condense: scale left the positive range");
            update_support(result.tracker, eval.weights, config.ewa_decay);
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(batches_per_epoch));

        // No re-init after the last epoch: a reset etalon would never be trained.
        if (config.reinit && epoch + 1 < config.epochs) {
            const IndexVector reset = select_reinits(result.tracker, config, epoch);
            reinit_etalons(et, result.tracker, reset, batch, config.reinit_noise_scale, config.reinit_threshold, rng);
            for (std::size_t k : reset) {
                center_opt.reset_row(static_cast<Eigen::Index>(k));
                scale_opt.reset_row(static_cast<Eigen::Index>(k));
            }
            result.reinit_count += reset.size();
        }
    }
    return result;
}

// ---- config and dumps -----------------------------------------------------------

/// Applies "key = value" overrides (keys optionally prefixed) to `config`.
/// Unknown keys with the prefix are rejected.
inline void apply_key_values(const io::KeyValues& kv, CondenseConfig& config, const std::string& prefix = "") {
    for (const auto& [full_key, value] : kv) {
        if (full_key.rfind(prefix, 0) != 0) continue;
        const std::string key = full_key.substr(prefix.size());
        if (!prefix.empty() && key.find('.') != std::string::npos) continue;
        if (key == "budget" || key == "k") config.budget = static_cast<int>(io::parse_int(value));
        else if (key == "epochs") config.epochs = static_cast<int>(io::parse_int(value));
        else if (key == "warmup_epochs") config.warmup_epochs = static_cast<int>(io::parse_int(value));
        else if (key == "learning_rate") config.learning_rate = io::parse_double(value);
        else if (key == "weight_decay") config.weight_decay = io::parse_double(value);
        else if (key == "batch_size") config.batch_size = static_cast<int>(io::parse_int(value));
        else if (key == "tau_start") config.tau_start = io::parse_double(value);
        else if (key == "tau_end") config.tau_end = io::parse_double(value);
        else if (key == "ewa_decay") config.ewa_decay = io::parse_double(value);
        else if (key == "reinit_threshold") config.reinit_threshold = io::parse_double(value);
        else if (key == "reinit_noise_scale") config.reinit_noise_scale = io::parse_double(value);
        else if (key == "reinit") config.reinit = io::parse_bool(value);
        else if (key == "seed") config.seed = static_cast<std::uint64_t>(io::parse_int(value));
        else if (key == "variant") config.variant = parse_variant(value);
        else if (!prefix.empty()) throw InvalidArgument("unknown condense config key \"" + full_key + "\"");
    }
}

inline io::KeyValues to_key_values(const CondenseConfig& c, const std::string& prefix = "") {
    return {
        {prefix + "budget", std::to_string(c.budget)},
        {prefix + "epochs", std::to_string(c.epochs)},
        {prefix + "warmup_epochs", std::to_string(c.warmup_epochs)},
        {prefix + "learning_rate", io::format_double(c.learning_rate)},
        {prefix + "weight_decay", io::format_double(c.weight_decay)},
        {prefix + "batch_size", std::to_string(c.batch_size)},
        {prefix + "tau_start", io::format_double(c.tau_start)},
        {prefix + "tau_end", io::format_double(c.tau_end)},
        {prefix + "ewa_decay", io::format_double(c.ewa_decay)},
        {prefix + "reinit_threshold", io::format_double(c.reinit_threshold)},
        {prefix + "reinit_noise_scale", io::format_double(c.reinit_noise_scale)},
        {prefix + "reinit", c.reinit ? "true" : "false"},
        {prefix + "seed", std::to_string(c.seed)},
        {prefix + "variant", to_string(c.variant)},
    };
}

/// CSV with columns k, c_0..c_{D-1}, beta, support.
inline std::string etalons_to_csv(const EtalonSet& et, const SupportTracker& tracker) {
    std::ostringstream out;
    out << 'k';
    for (std::size_t j = 0; j < et.dim(); ++j) out << ",c_" << j;
    out << ",beta,support\n";
    const Vector beta = et.scales();
    for (Eigen::Index k = 0; k < et.centers.rows(); ++k) {
        out << k;
        for (Eigen::Index j = 0; j < et.centers.cols(); ++j) out << ',' << io::format_double(et.centers(k, j));
        out << ',' << io::format_double(beta(k)) << ','
            << io::format_double(k < tracker.support.size() ? tracker.support(k) : 0.0) << '\n';
    }
    return out.str();
}

struct EtalonDump {
    EtalonSet etalons;
    SupportTracker tracker;
};

inline EtalonDump etalons_from_csv(const std::string& text, Variant variant) {
    const io::Table t = io::parse_csv(text);
    const std::size_t beta_col = t.column("beta"), support_col = t.column("support");
    const std::size_t dim = beta_col - 1;
    for (std::size_t j = 0; j < dim; ++j) t.column("c_" + std::to_string(j));
    if (dim == 0 || t.rows.empty()) throw FormatError(FormatError::Kind::parse, "etalon CSV has no coordinates");
    EtalonDump d;
    d.etalons.variant = variant;
    d.etalons.centers.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(dim));
    d.etalons.log_scales.resize(static_cast<Eigen::Index>(t.rows.size()));
    d.tracker = SupportTracker::zeros(t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto ri = static_cast<Eigen::Index>(r);
        for (std::size_t j = 0; j < dim; ++j) d.etalons.centers(ri, static_cast<Eigen::Index>(j)) = t.rows[r][1 + j];
        const double beta = t.rows[r][beta_col];
        if (!(beta > 0.0)) throw FormatError(FormatError::Kind::parse, "etalon CSV has non-positive beta");
        d.etalons.log_scales(ri) = std::log(beta);
        d.tracker.support(ri) = t.rows[r][support_col];
    }
    return d;
}

}  // namespace pixood::condense
