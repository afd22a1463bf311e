#include "pixood/metrics.hpp"
#include "pixood/pipeline.hpp"
#include "pixood/synth.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace pixood;
using namespace pixood::pipeline;
namespace fs = std::filesystem;

namespace {

struct Trained {
    std::vector<synth::NamedDataset> files;
    PixOODModel model;

    const Dataset& get(const std::string& name) const {
        for (const auto& f : files)
            if (f.name == name) return f.data;
        throw std::runtime_error(name);
    }
};

const Trained& trained() {
    static const Trained t = [] {
        Trained out;
        out.files = synth::generate(synth::default_spec(synth::Generator::segmentation3));
        PipelineConfig cfg = PipelineConfig::desk_scale();
        cfg.seed = 5;
        out.model = train(out.get("train"), cfg);
        return out;
    }();
    return t;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("pixood_pipeline_" + name);
    fs::remove_all(dir);
    return dir;
}

std::map<std::string, std::string> read_tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = io::read_file(e.path());
    return out;
}

}  // namespace

TEST(Purity, Rules) {
    Matrix h(4, 2);
    h << 95, 5, 5, 5, 90, 10, 1, 99;
    const auto f = filter_by_purity(h);
    EXPECT_EQ(f.keep, (std::vector<bool>{true, false, false, true}));
    EXPECT_EQ(f.dominant, (std::vector<int>{0, 0, 0, 1}));
    EXPECT_THROW(filter_by_purity(Matrix::Zero(1, 2)), InvalidArgument);
}

TEST(Relabel, PointwiseRule) {
    const std::vector<int> p{0, 1, 2};
    const std::vector<double> zeros{0, 0, 0}, ones{1, 1, 1}, mixed{0.99, 0.5, 0.96};
    EXPECT_EQ(relabel_ood(p, zeros, 0.95, 9), p);
    EXPECT_EQ(relabel_ood(p, ones, 0.95, 9), (std::vector<int>{9, 9, 9}));
    EXPECT_EQ(relabel_ood(p, mixed, 0.95, 9), (std::vector<int>{9, 1, 9}));
    EXPECT_THROW(relabel_ood(p, std::vector<double>{1.0}, 0.5, 0), DimensionMismatch);
}

TEST(Project, CompositionOfModuleCalls) {
    const auto& m = trained().model;
    const auto& e0 = m.class_models[0].etalons;
    EXPECT_EQ(project(m, e0.centers.row(3), 0)(1), 0.0);
    std::mt19937_64 rng(1);
    const Matrix xs = oracle::uniform(10, 2, rng, -2, 5);
    for (Eigen::Index i = 0; i < xs.rows(); ++i)
        for (int c = 0; c < 3; ++c) {
            const auto z = project(m, xs.row(i), c);
            EXPECT_EQ(z(0), classifier::forward(m.classifier, xs.row(i))(c));
            EXPECT_EQ(z(1), condense::nearest_etalon(xs.row(i), m.class_models[static_cast<std::size_t>(c)].etalons).distance);
        }
    const auto zero = classifier::MLPParams::zeros(2, 4, 3);
    EXPECT_EQ(project(zero, e0, xs.row(0), 1)(0), 0.0);
    EXPECT_THROW(project(m, xs.row(0), 3), InvalidArgument);
}

TEST(Train, StructuralPostconditions) {
    for (const auto& cm : trained().model.class_models) {
        EXPECT_TRUE(std::is_sorted(cm.calibration.epsilons.begin(), cm.calibration.epsilons.end()));
        EXPECT_NO_THROW(cm.strategy.id.validate());
        Eigen::SelfAdjointEigenSolver<decision::Mat2> es(cm.strategy.id.cov);
        EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
    }
}

TEST(Train, CalibrationSelfConsistency) {
    const auto& t = trained();
    const Dataset& train_ds = t.get("train");
    for (int c = 0; c < 3; ++c) {
        const Matrix pts = train_ds.class_points(c);
        std::vector<double> s;
        for (Eigen::Index i = 0; i < pts.rows(); ++i) s.push_back(class_ood_score(t.model, pts.row(i), c));
        for (double thr : {0.5, 0.9, 0.95}) {
            const double frac = static_cast<double>(std::count_if(s.begin(), s.end(), [&](double v) { return v > thr; })) /
                                static_cast<double>(s.size());
            EXPECT_LE(frac, 1.0 - thr + 0.02) << "class " << c << " t " << thr;
        }
        const double below = static_cast<double>(std::count_if(s.begin(), s.end(), [](double v) { return v < 0.95; })) /
                             static_cast<double>(s.size());
        EXPECT_GE(below, 0.93);
    }
}

TEST(Train, Deterministic) {
    const auto& t = trained();
    const auto again = train(t.get("train"), t.model.config);
    const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
    save_bundle(t.model, a);
    save_bundle(again, b);
    EXPECT_EQ(read_tree(a), read_tree(b));
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Train, SmallClassIsNamed) {
    Matrix x(8, 2);
    x.setRandom();
    const Dataset ds = make_dataset(x, std::vector<int>{0, 0, 0, 0, 0, 0, 1, 1});
    try {
        train(ds, PipelineConfig::desk_scale());
        FAIL() << "expected an error";
    } catch (const InvalidArgument& e) {
        EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos);
    }
}

TEST(Infer, EtalonScoreMatchesMonteCarloCalibration) {
    const auto& m = trained().model;
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int c = 0; c < 3; ++c) {
        const auto& cm = m.class_models[static_cast<std::size_t>(c)];
        Eigen::Index best;
        cm.supports.support.maxCoeff(&best);
        const Inference at = infer(m, cm.etalons.centers.row(best));
        ASSERT_EQ(at.predicted_class, c);

        const auto z = project(m, cm.etalons.centers.row(best), c);
        const double r = decision::likelihood_ratio(z, cm.strategy.id, cm.strategy.ood);
        const Eigen::LLT<decision::Mat2> llt(cm.strategy.id.cov);
        const int draws = 100000;
        int below = 0;
        for (int i = 0; i < draws; ++i) {
            const decision::Vec2 sample = cm.strategy.id.mean + llt.matrixL() * decision::Vec2(g(rng), g(rng));
            below += decision::likelihood_ratio(sample, cm.strategy.id, cm.strategy.ood) <= r;
        }
        EXPECT_NEAR(at.ood_score, 1.0 - static_cast<double>(below) / draws, 0.01) << "class " << c;
        EXPECT_LT(at.ood_score, 0.95);
    }
    const Inference far = infer(m, Eigen::RowVector2d(300.0, -300.0));
    EXPECT_GE(far.ood_score, 0.95);
}

TEST(Infer, BatchEqualsSingle) {
    const auto& t = trained();
    const Dataset& probe = t.get("probe");
    const auto batch = infer_batch(t.model, probe.points);
    for (Eigen::Index i = 0; i < probe.points.rows(); i += 7) {
        const auto one = infer(t.model, probe.points.row(i));
        EXPECT_EQ(one.predicted_class, batch[static_cast<std::size_t>(i)].predicted_class);
        EXPECT_EQ(one.ood_score, batch[static_cast<std::size_t>(i)].ood_score);
    }
}

TEST(Infer, ArgmaxInvariantUnderMonotoneLogitTransform) {
    const auto& t = trained();
    PixOODModel scaled = t.model;
    scaled.classifier.w2 *= 2.5;
    scaled.classifier.b2 = scaled.classifier.b2 * 2.5 + Vector::Constant(3, 4.0);
    const Dataset& probe = t.get("probe");
    for (Eigen::Index i = 0; i < probe.points.rows(); i += 5)
        EXPECT_EQ(infer(scaled, probe.points.row(i)).predicted_class, infer(t.model, probe.points.row(i)).predicted_class);
}

TEST(Infer, SeparatesFarOodCluster) {
    const auto& t = trained();
    const Dataset& probe = t.get("probe");
    const auto res = infer_batch(t.model, probe.points);
    std::vector<double> id, ood;
    for (std::size_t i = 0; i < res.size(); ++i) ((*probe.labels)[i] ? ood : id).push_back(res[i].ood_score);
    const double auc = metrics::auroc(id, ood);
    EXPECT_NEAR(auc, oracle::pairwise_auroc(id, ood), 1e-12);
    EXPECT_GT(auc, 0.99);
}

TEST(Bundle, RoundTripPreservesInference) {
    const auto& t = trained();
    const fs::path dir = fresh_dir("roundtrip");
    save_bundle(t.model, dir);
    const PixOODModel back = load_bundle(dir);
    const Dataset& probe = t.get("probe");
    const auto a = infer_batch(t.model, probe.points), b = infer_batch(back, probe.points);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].predicted_class, b[i].predicted_class);
        EXPECT_EQ(a[i].ood_score, b[i].ood_score);
    }
    io::write_file_atomic(dir / "manifest.txt", "format_version = 7\n");
    EXPECT_THROW(load_bundle(dir), FormatError);
    fs::remove_all(dir);
}

TEST(Config, KeyValueRoundTrip) {
    PipelineConfig c = PipelineConfig::desk_scale();
    c.epsilon = 0.1;
    c.score_mode = ScoreMode::min_over_classes;
    c.condense.budget = 9;
    c.mlp.hidden_width = 17;
    PipelineConfig back;
    apply_key_values(to_key_values(c), back);
    EXPECT_EQ(to_key_values(back), to_key_values(c));
}

TEST(Metrics, AurocMatchesPairCount) {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> u(0, 5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> neg, pos;
        for (int i = 0; i < 30; ++i) neg.push_back(u(rng));
        for (int i = 0; i < 20; ++i) pos.push_back(u(rng) + 1);
        EXPECT_NEAR(metrics::auroc(neg, pos), oracle::pairwise_auroc(neg, pos), 1e-12);
    }
    const std::vector<double> a{0.0, 1.0}, b{2.0, 3.0};
    EXPECT_EQ(metrics::auroc(a, b), 1.0);
    EXPECT_EQ(metrics::auroc(b, a), 0.0);
    EXPECT_THROW(metrics::auroc(std::vector<double>{}, b), InvalidArgument);
}
