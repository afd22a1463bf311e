#include "pixood/condense.hpp"
#include "pixood/synth.hpp"
#include "pixood/toy.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace pixood;
using namespace pixood::condense;

namespace {

EtalonSet make_etalons(Matrix centers, Variant v, Vector log_scales = {}) {
    EtalonSet e;
    e.variant = v;
    if (log_scales.size() == 0) log_scales = Vector::Zero(centers.rows());
    e.centers = std::move(centers);
    e.log_scales = std::move(log_scales);
    return e;
}

constexpr Variant kVariants[] = {Variant::soft_kmeans, Variant::soft_kmedians, Variant::condensation};

}  // namespace

TEST(Objective, KmeansExamples) {
    Matrix x(2, 1);
    x << -1, 1;
    EXPECT_DOUBLE_EQ(kmeans_objective(x, make_etalons(Matrix::Zero(1, 1), Variant::soft_kmeans)), 1.0);
    EXPECT_DOUBLE_EQ(kmeans_objective(Matrix::Ones(1, 2), make_etalons(Matrix::Ones(1, 2), Variant::soft_kmeans)), 0.0);
    EXPECT_THROW(kmeans_objective(Matrix(0, 2), make_etalons(Matrix::Ones(1, 2), Variant::soft_kmeans)), InvalidArgument);
}

TEST(Objective, KmeansMatchesExhaustiveScan) {
    std::mt19937_64 rng(2);
    const Matrix x = oracle::uniform(50, 2, rng), c = oracle::uniform(3, 2, rng);
    EXPECT_NEAR(kmeans_objective(x, make_etalons(c, Variant::soft_kmeans)), oracle::kmeans_objective(x, c), 1e-14);
}

TEST(Loss, CondensationTrivialCases) {
    Matrix c = Matrix::Zero(1, 1);
    auto single = batch_loss_and_gradients(Matrix::Zero(1, 1), make_etalons(c, Variant::condensation), 1.0);
    EXPECT_DOUBLE_EQ(single.loss, 0.0);
    EXPECT_DOUBLE_EQ(single.grad_centers(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(single.grad_log_scales(0), 1.0);

    Matrix x(2, 1);
    x << -1, 1;
    auto sym = batch_loss_and_gradients(x, make_etalons(c, Variant::condensation), 1.0);
    EXPECT_DOUBLE_EQ(sym.loss, 1.0);
    EXPECT_NEAR(sym.grad_centers(0, 0), 0.0, 1e-15);
}

TEST(Loss, MatchesDirectEvaluation) {
    std::mt19937_64 rng(4);
    for (Variant v : kVariants) {
        const Matrix x = oracle::uniform(16, 3, rng), c = oracle::uniform(4, 3, rng);
        const Vector ls = oracle::uniform(4, 1, rng, -0.5, 0.5);
        const auto eval = batch_loss_and_gradients(x, make_etalons(c, v, ls), 0.3);
        EXPECT_NEAR(eval.loss, oracle::soft_loss(x, c, ls, v, 0.3), 1e-12) << to_string(v);
        EXPECT_TRUE(is_row_stochastic(eval.weights));
    }
}

TEST(Loss, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 30; ++trial)
        for (Variant v : kVariants) {
            const Matrix x = oracle::uniform(16, 3, rng), c = oracle::uniform(4, 3, rng);
            const Vector ls = oracle::uniform(4, 1, rng, -0.5, 0.5);
            const double tau = 0.5;
            const auto eval = batch_loss_and_gradients(x, make_etalons(c, v, ls), tau);
            const Matrix gc = oracle::central_differences(
                c, [&](const Matrix& cc) { return oracle::soft_loss(x, cc, ls, v, tau); });
            EXPECT_LT(oracle::relative_error(eval.grad_centers, gc), 1e-4) << to_string(v);
            if (v == Variant::condensation) {
                const Matrix gl = oracle::central_differences(
                    ls, [&](const Matrix& l) { return oracle::soft_loss(x, c, l, v, tau); });
                EXPECT_LT(oracle::relative_error(eval.grad_log_scales, gl), 1e-4);
            }
        }
}

TEST(Loss, HardLimitEqualsKmeansObjective) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = oracle::uniform(40, 2, rng), c = oracle::uniform(5, 2, rng);
        const double soft = batch_loss_and_gradients(x, make_etalons(c, Variant::soft_kmeans), 1e-8).loss;
        const double hard = oracle::kmeans_objective(x, c);
        EXPECT_LT(std::abs(soft - hard) / hard, 1e-6);
    }
}

TEST(Loss, RejectsBadInputs) {
    const auto e = make_etalons(Matrix::Zero(2, 2), Variant::condensation);
    EXPECT_THROW(batch_loss_and_gradients(Matrix::Ones(3, 2), e, 0.0), InvalidArgument);
    EXPECT_THROW(batch_loss_and_gradients(Matrix(0, 2), e, 1.0), InvalidArgument);
    Matrix bad = Matrix::Ones(3, 2);
    bad(1, 1) = std::nan("");
    EXPECT_THROW(batch_loss_and_gradients(bad, e, 1.0), InvalidArgument);
    EXPECT_THROW(batch_loss_and_gradients(Matrix::Ones(3, 3), e, 1.0), DimensionMismatch);
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
    CondenseConfig c;
    c.epochs = 11;
    EXPECT_DOUBLE_EQ(tau_schedule(0, c), c.tau_start);
    EXPECT_NEAR(tau_schedule(10, c), c.tau_end, 1e-15);
    double prev = INFINITY;
    for (int e = 0; e < 11; ++e) {
        EXPECT_LE(tau_schedule(e, c), prev);
        prev = tau_schedule(e, c);
    }
    c.tau_start = 1.0;
    c.tau_end = 1e-300;
    EXPECT_NEAR(tau_schedule(5, c), 0.5, 1e-15);
    EXPECT_THROW(tau_schedule(11, c), InvalidArgument);
    EXPECT_THROW(tau_schedule(-1, c), InvalidArgument);
}

TEST(Support, ConstantInputIsFixedPoint) {
    SupportTracker t = SupportTracker::zeros(2);
    WeightMatrix w(4, 2);
    w << 1, 0, 0.5, 0.5, 0.25, 0.75, 1, 0;
    for (int i = 0; i < 25; ++i) {
        update_support(t, w, 0.1);
        EXPECT_NEAR(t.support(0), 2.75, 1e-12);
        EXPECT_NEAR(t.support(1), 1.25, 1e-12);
    }
}

TEST(Support, HandIteration) {
    SupportTracker t = SupportTracker::zeros(1);
    update_support(t, WeightMatrix::Zero(1, 1), 0.5);
    EXPECT_DOUBLE_EQ(t.support(0), 0.0);
    update_support(t, WeightMatrix::Ones(1, 1), 0.5);
    EXPECT_NEAR(t.support(0), 2.0 / 3.0, 1e-15);
    EXPECT_EQ(t.iterations, 2);
}

TEST(Reinit, SelectionRules) {
    CondenseConfig c;
    SupportTracker t = SupportTracker::zeros(3);
    t.support << 0.2, 5.0, 0.9;
    EXPECT_TRUE(select_reinits(t, c, 0).empty());
    EXPECT_EQ(select_reinits(t, c, c.warmup_epochs + 1), (IndexVector{0, 2}));
    c.reinit_threshold = 0.0;
    EXPECT_TRUE(select_reinits(t, c, 50).empty());
}

TEST(Reinit, ResetsOntoBatchPointsDeterministically) {
    std::mt19937_64 data_rng(3);
    const Matrix batch = oracle::uniform(10, 2, data_rng);
    auto run = [&] {
        EtalonSet e = make_etalons(Matrix::Constant(3, 2, 100.0), Variant::condensation, Vector::Constant(3, 2.0));
        SupportTracker t = SupportTracker::zeros(3);
        std::mt19937_64 rng(11);
        const std::size_t idx[] = {0, 2};
        reinit_etalons(e, t, idx, batch, 0.0, 1.0, rng);
        return std::make_pair(e, t);
    };
    const auto [e, t] = run();
    for (Eigen::Index k : {0, 2}) {
        double best = INFINITY;
        for (Eigen::Index i = 0; i < batch.rows(); ++i) best = std::min(best, (batch.row(i) - e.centers.row(k)).norm());
        EXPECT_EQ(best, 0.0);
        EXPECT_EQ(e.log_scales(k), 0.0);
        EXPECT_EQ(t.support(k), 1.0);
    }
    EXPECT_EQ(e.centers(1, 0), 100.0);
    EXPECT_EQ(e.log_scales(1), 2.0);
    EXPECT_TRUE(run().first.centers == e.centers);
}

TEST(Reinit, EmptyIndicesIsNoop) {
    EtalonSet e = make_etalons(Matrix::Ones(2, 2), Variant::condensation);
    SupportTracker t = SupportTracker::zeros(2);
    std::mt19937_64 rng(1);
    reinit_etalons(e, t, std::span<const std::size_t>{}, Matrix::Zero(4, 2), 1e-3, 1.0, rng);
    EXPECT_TRUE(e.centers == Matrix::Ones(2, 2));
}

TEST(Nearest, IndexDistanceAndTies) {
    Matrix c(3, 2);
    c << -1, 0, 1, 0, 5, 5;
    const auto e = make_etalons(c, Variant::condensation);
    const auto at = nearest_etalon(Eigen::Vector2d(5, 5), e);
    EXPECT_EQ(at.index, 2u);
    EXPECT_EQ(at.distance, 0.0);
    EXPECT_EQ(nearest_etalon(Eigen::Vector2d(0, 0), e).index, 0u);

    std::mt19937_64 rng(5);
    const Matrix cs = oracle::uniform(10, 3, rng), xs = oracle::uniform(20, 3, rng);
    const auto e10 = make_etalons(cs, Variant::condensation);
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
        std::size_t best = 0;
        for (Eigen::Index k = 1; k < 10; ++k)
            if (oracle::distance(xs, i, cs, k) < oracle::distance(xs, i, cs, static_cast<Eigen::Index>(best)))
                best = static_cast<std::size_t>(k);
        EXPECT_EQ(nearest_etalon(xs.row(i), e10).index, best);
    }
}

TEST(Useful, BoundaryInclusive) {
    SupportTracker t = SupportTracker::zeros(3);
    EXPECT_EQ(count_useful(t, 1.0), 0u);
    t.support << 1.0, 0.99, 2.0;
    EXPECT_EQ(count_useful(t, 1.0), 2u);
}

TEST(Condense, RepeatedPointConverges) {
    CondenseConfig c;
    c.budget = 1;
    c.epochs = 100;
    c.batch_size = 8;
    const Matrix x = Matrix::Constant(16, 2, 0.7);
    const auto r = condense::condense(x, c);
    EXPECT_LT((r.etalons.centers.row(0) - x.row(0)).norm(), 1e-3);
}

TEST(Condense, TriangleCenterIsCentroid) {
    CondenseConfig c;
    c.budget = 1;
    c.epochs = 100;
    c.batch_size = 3;
    c.learning_rate = 0.05;
    Matrix x(3, 2);
    x << 0, 0, 1, 0, 0.5, std::sqrt(3.0) / 2;
    const auto r = condense::condense(x, c);
    const Eigen::RowVector2d centroid = x.colwise().mean();
    EXPECT_LT((r.etalons.centers.row(0) - centroid).norm(), 1e-2);
}

TEST(Condense, DeterministicAndPositiveScales) {
    const Dataset toy = synth::toy_dataset();
    CondenseConfig c;
    c.budget = 20;
    c.epochs = 15;
    c.batch_size = 128;
    const auto a = condense::condense(toy.points, c), b = condense::condense(toy.points, c);
    EXPECT_TRUE(a.etalons.centers == b.etalons.centers);
    EXPECT_TRUE(a.etalons.log_scales == b.etalons.log_scales);
    EXPECT_TRUE(a.tracker.support == b.tracker.support);
    EXPECT_TRUE((a.etalons.scales().array() > 0.0).all());
}

TEST(Condense, HeldOutLossDecreases) {
    const Dataset toy = synth::toy_dataset();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(toy.points.rows()));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    std::mt19937_64 rng(99);
    std::shuffle(idx.begin(), idx.end(), rng);
    const Eigen::Index n_held = 200;
    Matrix held_out(n_held, 2), train(toy.points.rows() - n_held, 2);
    for (Eigen::Index i = 0; i < toy.points.rows(); ++i)
        (i < n_held ? held_out.row(i) : train.row(i - n_held)) = toy.points.row(idx[static_cast<std::size_t>(i)]);
    CondenseConfig c;
    c.budget = 20;
    c.batch_size = 128;
    c.tau_start = c.tau_end = 0.01;
    c.epochs = 1;
    const auto first = condense::condense(train, c);
    c.epochs = 30;
    const auto last = condense::condense(train, c);
    const double tau = 0.01 * last.tau_unit;
    EXPECT_LT(batch_loss_and_gradients(held_out, last.etalons, tau).loss,
              batch_loss_and_gradients(held_out, first.etalons, tau).loss);
}

TEST(Condense, SurplusEtalonsAllowed) {
    CondenseConfig c;
    c.budget = 8;
    c.epochs = 10;
    Matrix x(3, 2);
    x << 0, 0, 1, 1, 2, 0;
    const auto r = condense::condense(x, c);
    EXPECT_EQ(r.etalons.size(), 8u);
    EXPECT_LE(count_useful(r.tracker, 1.0), 3u);
}

TEST(Condense, ConfigRoundTripAndOverrides) {
    CondenseConfig c;
    c.budget = 7;
    c.variant = Variant::soft_kmedians;
    c.tau_end = 0.125;
    c.reinit = false;
    CondenseConfig back;
    apply_key_values(to_key_values(c), back);
    EXPECT_EQ(to_key_values(back), to_key_values(c));
    EXPECT_THROW(apply_key_values({{"condense.nope", "1"}}, back, "condense."), InvalidArgument);
    CondenseConfig bad;
    bad.tau_start = 0.1;
    bad.tau_end = 1.0;
    EXPECT_THROW(condense::condense(Matrix::Ones(4, 2), bad), InvalidArgument);
}

TEST(Dump, CsvRoundTripAndRecount) {
    const Dataset toy = synth::toy_dataset();
    CondenseConfig c;
    c.budget = 12;
    c.epochs = 10;
    c.batch_size = 64;
    const auto r = condense::condense(toy.points, c);
    const std::string csv = etalons_to_csv(r.etalons, r.tracker);
    const auto back = etalons_from_csv(csv, Variant::condensation);
    EXPECT_TRUE(back.etalons.centers == r.etalons.centers);
    EXPECT_TRUE(back.tracker.support == r.tracker.support);

    const io::Table t = io::parse_csv(csv);
    std::size_t manual = 0;
    for (const auto& row : t.rows) manual += row[t.column("support")] >= 1.0;
    EXPECT_EQ(count_useful(r.tracker, 1.0), manual);
}

TEST(Toy, ZeroThresholdCountsEverything) {
    const Dataset toy = synth::toy_dataset();
    toy::ToyConfig cfg;
    cfg.base.reinit_threshold = 0.0;
    cfg.base.epochs = 3;
    cfg.seeds = {1};
    for (const auto& row : toy::eval_toy(toy.points, cfg)) EXPECT_EQ(row.useful, 50u);
}

TEST(Toy, ReinitsRaiseTheUsefulCount) {
    const Dataset toy = synth::toy_dataset();
    const toy::ToyConfig cfg;
    int raised = 0;
    for (std::uint64_t seed : cfg.seeds) {
        auto count = [&](toy::Method m) {
            return count_useful(condense::condense(toy.points, toy::method_config(cfg.base, m, seed)).tracker, 1.0);
        };
        raised += count(toy::Method::condensation_reinit) > count(toy::Method::condensation);
    }
    EXPECT_GE(raised, 4);
}
