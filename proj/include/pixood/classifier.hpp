#pragma once

// Per-point classifier: a two-layer GELU MLP (or a single affine layer, the
// linear probe) trained with softmax cross-entropy and AdamW.

#include "pixood/adamw.hpp"
#include "pixood/core.hpp"
#include "pixood/io.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <span>

namespace pixood::classifier {

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return cdf + x * pdf;
}

/// Network parameters. Hidden width 0 means the linear form logits = W2 x + b2,
/// where W2 is C x D and W1/b1 are empty.
struct MLPParams {
    Matrix w1;  // H x D
    Vector b1;  // H
    Matrix w2;  // C x H (C x D when linear)
    Vector b2;  // C

    Eigen::Index input_dim() const { return linear() ? w2.cols() : w1.cols(); }
    Eigen::Index hidden_width() const { return w1.rows(); }
    Eigen::Index class_count() const { return w2.rows(); }
    bool linear() const { return w1.size() == 0; }

    static MLPParams zeros(Eigen::Index dim, Eigen::Index hidden, Eigen::Index classes) {
        MLPParams p;
        p.w1 = Matrix::Zero(hidden, hidden ? dim : 0);
        p.b1 = Vector::Zero(hidden);
        p.w2 = Matrix::Zero(classes, hidden ? hidden : dim);
        p.b2 = Vector::Zero(classes);
        return p;
    }

    void validate() const {
        if (class_count() < 1) throw InvalidArgument("classifier needs at least one class");
        if (b2.size() != w2.rows()) throw DimensionMismatch("b2 size mismatch");
        if (!linear() && (b1.size() != w1.rows() || w2.cols() != w1.rows()))
            throw DimensionMismatch("hidden layer shape mismatch");
    }

    bool operator==(const MLPParams&) const = default;
};

struct TrainConfig {
    int epochs = 30;
    double learning_rate = 1e-4;
    double weight_decay = 0.0;
    int batch_size = 64;
    int hidden_width = 256;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
        if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
        if (hidden_width < 0) throw InvalidArgument("hidden_width must be >= 0");
    }
};

template <typename V>
Vector forward(const MLPParams& p, const Eigen::MatrixBase<V>& x) {
    if (x.size() != p.input_dim()) throw DimensionMismatch("forward: input has wrong dimension");
    const Vector input = x.derived().reshaped();
    if (p.linear()) return p.w2 * input + p.b2;
    const Vector pre = p.w1 * input + p.b1;
    return p.w2 * pre.unaryExpr([](double v) { return gelu(v); }) + p.b2;
}

/// Logits for every row of `points` (n x C).
inline Matrix forward_batch(const MLPParams& p, const Eigen::Ref<const Matrix>& points) {
    Matrix out(points.rows(), p.class_count());
    for (Eigen::Index i = 0; i < points.rows(); ++i) out.row(i) = forward(p, points.row(i)).transpose();
    return out;
}

template <typename V>
double logit_score(const MLPParams& p, const Eigen::MatrixBase<V>& x, int class_id) {
    if (class_id < 0 || class_id >= p.class_count()) throw InvalidArgument("logit_score: bad class id");
    return forward(p, x)(class_id);
}

/// -log softmax(logits)[label] through log-sum-exp.
template <typename V>
double cross_entropy(const Eigen::MatrixBase<V>& logits, int label) {
    return log_sum_exp(logits) - logits(label);
}

struct LossAndGradients {
    double loss = 0.0;
    MLPParams grad;
};

/// Mean cross-entropy over the rows of `points` and its gradient.
inline LossAndGradients loss_and_gradients(const MLPParams& p, const Eigen::Ref<const Matrix>& points,
                                           std::span<const int> labels) {
    p.validate();
    if (static_cast<std::size_t>(points.rows()) != labels.size()) throw DimensionMismatch("labels/points mismatch");
    if (points.rows() == 0) throw InvalidArgument("empty batch");
    LossAndGradients out{0.0, MLPParams::zeros(p.input_dim(), p.hidden_width(), p.class_count())};
    Vector probs(p.class_count());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const Vector x = points.row(i).transpose();
        const int y = labels[static_cast<std::size_t>(i)];
        Vector pre, act;
        Vector logits;
        if (p.linear()) {
            logits = p.w2 * x + p.b2;
        } else {
            pre = p.w1 * x + p.b1;
            act = pre.unaryExpr([](double v) { return gelu(v); });
            logits = p.w2 * act + p.b2;
        }
        out.loss += cross_entropy(logits, y);
        stable_softmax_row(logits, probs);
        Vector dlogits = probs;
        dlogits(y) -= 1.0;
        out.grad.b2 += dlogits;
        if (p.linear()) {
            out.grad.w2 += dlogits * x.transpose();
            continue;
        }
        out.grad.w2 += dlogits * act.transpose();
        const Vector dpre = (p.w2.transpose() * dlogits).cwiseProduct(pre.unaryExpr([](double v) { return gelu_derivative(v); }));
        out.grad.b1 += dpre;
        out.grad.w1 += dpre * x.transpose();
    }
    const double inv_n = 1.0 / static_cast<double>(points.rows());
    out.loss *= inv_n;
    out.grad.w1 *= inv_n;
    out.grad.b1 *= inv_n;
    out.grad.w2 *= inv_n;
    out.grad.b2 *= inv_n;
    return out;
}

inline double mean_loss(const MLPParams& p, const Dataset& ds) {
    return loss_and_gradients(p, ds.points, *ds.labels).loss;
}

inline double accuracy(const MLPParams& p, const Dataset& ds) {
    if (!ds.labels) throw InvalidArgument("accuracy: dataset has no labels");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        hits += argmax_lowest(forward(p, ds.points.row(static_cast<Eigen::Index>(i)))) ==
                static_cast<std::size_t>((*ds.labels)[i]);
    return static_cast<double>(hits) / static_cast<double>(ds.size());
}

/// Uniform init in +-1/sqrt(fan_in).
template <typename Rng>
MLPParams init_params(Eigen::Index dim, Eigen::Index hidden, Eigen::Index classes, Rng& rng) {
    MLPParams p = MLPParams::zeros(dim, hidden, classes);
    auto fill = [&](auto& m, double fan_in) {
        std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    };
    if (hidden > 0) {
        fill(p.w1, static_cast<double>(dim));
        fill(p.b1, static_cast<double>(dim));
        fill(p.w2, static_cast<double>(hidden));
        fill(p.b2, static_cast<double>(hidden));
    } else {
        fill(p.w2, static_cast<double>(dim));
        fill(p.b2, static_cast<double>(dim));
    }
    return p;
}

/// Rounds every parameter to float32 so saved models reload bit-exactly.
inline void round_to_float(MLPParams& p) {
    for (auto* m : {&p.w1, &p.w2})
        for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = static_cast<float>(m->data()[i]);
    for (auto* v : {&p.b1, &p.b2})
        for (Eigen::Index i = 0; i < v->size(); ++i) v->data()[i] = static_cast<float>(v->data()[i]);
}

/// One epoch's visiting order: every class contributes as many draws as the
/// largest class (cycling through its own shuffled points), then all are shuffled.
template <typename Rng>
std::vector<std::size_t> balanced_order(const std::vector<int>& labels, int class_count, Rng& rng) {
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(class_count));
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    std::size_t largest = 0;
    for (const auto& c : by_class) largest = std::max(largest, c.size());
    std::vector<std::size_t> order;
    order.reserve(largest * by_class.size());
    for (auto& c : by_class) {
        if (c.empty()) continue;
        std::shuffle(c.begin(), c.end(), rng);
        for (std::size_t j = 0; j < largest; ++j) order.push_back(c[j % c.size()]);
    }
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

struct TrainResult {
    MLPParams params;
    std::vector<double> epoch_losses;  // full training-set loss before training and after each epoch
};

namespace detail {

inline TrainResult train(const Dataset& ds, const TrainConfig& config, int hidden) {
    config.validate();
    validate(ds);
    if (!ds.labels) throw InvalidArgument("classifier training needs labels");
    std::vector<int> present(static_cast<std::size_t>(ds.class_count), 0);
    for (int l : *ds.labels) present[static_cast<std::size_t>(l)] = 1;
    if (ds.class_count < 2 || std::accumulate(present.begin(), present.end(), 0) < 2)
        throw InvalidArgument("classifier training needs at least two classes present");

    std::mt19937_64 rng(config.seed);
    TrainResult result{init_params(static_cast<Eigen::Index>(ds.dim()), hidden, ds.class_count, rng), {}};
    MLPParams& p = result.params;
    const AdamWConfig opt{.learning_rate = config.learning_rate, .weight_decay = config.weight_decay};
    AdamW o_w1(p.w1.rows(), p.w1.cols(), opt), o_b1(p.b1.rows(), 1, opt), o_w2(p.w2.rows(), p.w2.cols(), opt),
        o_b2(p.b2.rows(), 1, opt);

    result.epoch_losses.push_back(mean_loss(p, ds));
    Matrix batch;
    std::vector<int> batch_labels;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto order = balanced_order(*ds.labels, ds.class_count, rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            batch.resize(static_cast<Eigen::Index>(end - start), ds.points.cols());
            batch_labels.clear();
            for (std::size_t j = start; j < end; ++j) {
                batch.row(static_cast<Eigen::Index>(j - start)) = ds.points.row(static_cast<Eigen::Index>(order[j]));
                batch_labels.push_back((*ds.labels)[order[j]]);
            }
            const auto lg = loss_and_gradients(p, batch, batch_labels);
            if (!p.linear()) {
                o_w1.step(p.w1, lg.grad.w1, config.learning_rate);
                o_b1.step(p.b1, lg.grad.b1, config.learning_rate);
            }
            o_w2.step(p.w2, lg.grad.w2, config.learning_rate);
            o_b2.step(p.b2, lg.grad.b2, config.learning_rate);
        }
        result.epoch_losses.push_back(mean_loss(p, ds));
    }
    round_to_float(p);
    return result;
}

}  // namespace detail

/// Trains the two-layer GELU network. Deterministic for a fixed seed.
inline TrainResult train_mlp(const Dataset& ds, const TrainConfig& config) {
    if (config.hidden_width < 1) throw InvalidArgument("train_mlp: hidden_width must be >= 1");
    return detail::train(ds, config, config.hidden_width);
}

/// Same loop with a single affine layer.
inline TrainResult linear_probe(const Dataset& ds, const TrainConfig& config) { return detail::train(ds, config, 0); }

// ---- MLP1 files -----------------------------------------------------------------

inline std::string encode(const MLPParams& p) {
    p.validate();
    std::string buf = "MLP1";
    io::detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.input_dim()));
    io::detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.hidden_width()));
    io::detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(p.class_count()));
    auto put_matrix = [&](const Matrix& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) io::detail::put<float>(buf, static_cast<float>(m(i, j)));
    };
    put_matrix(p.w1);
    put_matrix(p.b1);
    put_matrix(p.w2);
    put_matrix(p.b2);
    return buf;
}

inline MLPParams decode(std::string data) {
    io::detail::Reader r(std::move(data));
    r.expect_magic("MLP1");
    const auto dim = r.get<std::uint32_t>("input dimension");
    const auto hidden = r.get<std::uint32_t>("hidden width");
    const auto classes = r.get<std::uint32_t>("class count");
    if (dim == 0 || classes == 0) throw FormatError(FormatError::Kind::count_mismatch, "MLP1 with zero D or C");
    MLPParams p = MLPParams::zeros(dim, hidden, classes);
    const std::size_t expected = (p.w1.size() + p.b1.size() + p.w2.size() + p.b2.size()) * sizeof(float);
    if (r.remaining() < expected) throw FormatError(FormatError::Kind::truncated, "MLP1 payload truncated");
    if (r.remaining() > expected) throw FormatError(FormatError::Kind::count_mismatch, "MLP1 payload too long");
    auto get_matrix = [&](auto& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get<float>("parameter");
    };
    get_matrix(p.w1);
    get_matrix(p.b1);
    get_matrix(p.w2);
    get_matrix(p.b2);
    return p;
}

inline void save(const MLPParams& p, const io::fs::path& path) { io::write_file_atomic(path, encode(p)); }
inline MLPParams load(const io::fs::path& path) { return decode(io::read_file(path)); }

}  // namespace pixood::classifier
