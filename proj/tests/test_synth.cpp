#include "pixood/synth.hpp"
#include "pixood/toy.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace pixood;
using namespace pixood::synth;

namespace {

// Mean of each block of `per` consecutive rows; clusters are emitted block by block.
std::vector<Eigen::RowVector2d> block_means(const Matrix& pts, int blocks, int per) {
    std::vector<Eigen::RowVector2d> out;
    for (int b = 0; b < blocks; ++b) {
        Eigen::RowVector2d m = Eigen::RowVector2d::Zero();
        for (int i = 0; i < per; ++i) m += pts.row(b * per + i);
        out.push_back(m / per);
    }
    return out;
}

double nearest(const Eigen::RowVector2d& x, const std::vector<Eigen::RowVector2d>& centers) {
    double best = INFINITY;
    for (const auto& c : centers) best = std::min(best, (x - c).norm());
    return best;
}

}  // namespace

TEST(Synth, DeterministicForSeed) {
    for (Generator g : {Generator::toy_outliers, Generator::xor_gaussians, Generator::segmentation3, Generator::ood_probe}) {
        const auto a = generate(default_spec(g)), b = generate(default_spec(g));
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            EXPECT_EQ(a[i].name, b[i].name);
            EXPECT_TRUE(a[i].data.points == b[i].data.points);
            EXPECT_EQ(a[i].data.labels, b[i].data.labels);
        }
    }
    SyntheticSpec other = default_spec(Generator::toy_outliers);
    other.seed = 8;
    EXPECT_FALSE(generate(other)[0].data.points == toy_dataset().points);
}

TEST(Synth, ToyCountsAndBox) {
    const Dataset ds = toy_dataset();
    EXPECT_EQ(ds.size(), 5u * 200u + 20u);
    EXPECT_FALSE(ds.labelled());
    EXPECT_GE(ds.points.minCoeff(), 0.0);
    EXPECT_LE(ds.points.maxCoeff(), 1.0);
}

TEST(Synth, NoOutliersMeansNothingBeyondFourSigma) {
    SyntheticSpec spec = default_spec(Generator::toy_outliers);
    spec.outliers = 0;
    const Dataset ds = generate_one(spec, "toy");
    const auto centers = block_means(ds.points, spec.clusters, spec.per_cluster);
    for (Eigen::Index i = 0; i < ds.points.rows(); ++i)
        EXPECT_LE(nearest(ds.points.row(i), centers), 4.0 * spec.spread);

    const Dataset with = toy_dataset();
    int far = 0;
    for (Eigen::Index i = 0; i < with.points.rows(); ++i) far += nearest(with.points.row(i), centers) > 4.0 * spec.spread;
    EXPECT_GT(far, 0);
    EXPECT_LE(far, default_spec(Generator::toy_outliers).outliers);
}

TEST(Synth, Segmentation3FileSet) {
    const auto files = generate(default_spec(Generator::segmentation3));
    std::vector<std::string> names;
    for (const auto& f : files) names.push_back(f.name);
    EXPECT_EQ(names, (std::vector<std::string>{"train", "test", "ood", "probe"}));
    EXPECT_EQ(files[0].data.size(), 900u);
    EXPECT_EQ(files[0].data.class_count, 3);
    EXPECT_EQ(files[1].data.size(), 300u);
    EXPECT_EQ(files[2].data.size(), 300u);
    EXPECT_FALSE(files[2].data.labelled());
    const auto& probe = files[3].data;
    EXPECT_EQ(probe.size(), 600u);
    EXPECT_EQ(std::count(probe.labels->begin(), probe.labels->end(), 1), 300);
    EXPECT_TRUE(probe.points.topRows(300) == files[1].data.points);
    EXPECT_TRUE(probe.points.bottomRows(300) == files[2].data.points);
}

TEST(Synth, XorLabelsFollowDiagonal) {
    const Dataset ds = generate_one(default_spec(Generator::xor_gaussians), "xor");
    EXPECT_EQ(ds.size(), 800u);
    int agree = 0;
    for (Eigen::Index i = 0; i < ds.points.rows(); ++i) {
        const int diagonal = (ds.points(i, 0) > 0) == (ds.points(i, 1) > 0) ? 0 : 1;
        agree += diagonal == (*ds.labels)[static_cast<std::size_t>(i)];
    }
    EXPECT_GE(agree, 780);
}

TEST(Synth, CoordinatesAreFloat32) {
    const Dataset ds = generate_one(default_spec(Generator::segmentation3), "train");
    for (Eigen::Index i = 0; i < ds.points.size(); ++i) EXPECT_EQ(ds.points(i), to_float32(ds.points(i)));
    EXPECT_EQ(to_float32(0.1), static_cast<double>(0.1f));
}

TEST(Synth, RejectsBadSpecs) {
    SyntheticSpec s = default_spec(Generator::toy_outliers);
    s.clusters = 0;
    s.outliers = 0;
    EXPECT_THROW(generate(s), InvalidArgument);
    s = default_spec(Generator::xor_gaussians);
    s.spread = 0.0;
    EXPECT_THROW(generate(s), InvalidArgument);
    s.spread = 1.0;
    s.per_cluster = -1;
    EXPECT_THROW(generate(s), InvalidArgument);
    EXPECT_THROW(parse_generator("moons"), InvalidArgument);
}

TEST(Toy, ReportRowsAndThresholdZero) {
    const Dataset ds = toy_dataset();
    toy::ToyConfig cfg;
    cfg.base.epochs = 3;
    cfg.base.warmup_epochs = 1;
    cfg.seeds = {1, 2};
    cfg.base.reinit_threshold = 0.0;
    const auto rows = toy::eval_toy(ds.points, cfg);
    ASSERT_EQ(rows.size(), 8u);
    for (const auto& r : rows) EXPECT_EQ(r.useful, 50u);
    const std::string csv = toy::report_csv(rows);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "seed,method,useful,final_loss,reinits");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
    EXPECT_EQ(toy::counts_for_seed(rows, 2).size(), 4u);
}
