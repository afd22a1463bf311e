#pragma once

// Deterministic synthetic point sets used by the CLI, the tests and the toy report.
// Coordinates are rounded to float32 so PTS1 files reproduce them exactly.

#include "pixood/core.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace pixood::synth {

enum class Generator { toy_outliers, xor_gaussians, segmentation3, ood_probe };

inline Generator parse_generator(const std::string& name) {
    if (name == "toy_outliers") return Generator::toy_outliers;
    if (name == "xor_gaussians") return Generator::xor_gaussians;
    if (name == "segmentation3") return Generator::segmentation3;
    if (name == "ood_probe") return Generator::ood_probe;
    throw InvalidArgument("unknown generator \"" + name + "\"");
}

struct SyntheticSpec {
    Generator generator = Generator::toy_outliers;
    int clusters = 5;
    int per_cluster = 200;
    int outliers = 20;
    double spread = 0.05;
    std::uint64_t seed = 7;

    void validate() const {
        if (clusters < 0 || per_cluster < 0 || outliers < 0) throw InvalidArgument("synthetic counts must be >= 0");
        if (!(spread > 0.0)) throw InvalidArgument("synthetic spread must be positive");
    }
};

/// Defaults for each generator; toy_outliers matches the bundled toy dataset.
inline SyntheticSpec default_spec(Generator g) {
    switch (g) {
        case Generator::toy_outliers: return {g, 5, 200, 20, 0.05, 7};
        case Generator::xor_gaussians: return {g, 4, 200, 0, 0.3, 11};
        case Generator::segmentation3: return {g, 3, 300, 0, 0.5, 13};
        case Generator::ood_probe: return {g, 3, 300, 0, 0.5, 13};
    }
    return {};
}

/// Samples from an isotropic Gaussian truncated at 3.5 standard deviations.
class ClusterSampler {
public:
    static constexpr double kTruncation = 3.5;

    template <typename Rng>
    static Eigen::Vector2d sample(const Eigen::Vector2d& center, double sigma, Rng& rng) {
        std::normal_distribution<double> normal(0.0, 1.0);
        while (true) {
            const Eigen::Vector2d offset(normal(rng), normal(rng));
            if (offset.norm() <= kTruncation) return center + sigma * offset;
        }
    }
};

inline double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

struct NamedDataset {
    std::string name;  // file stem
    Dataset data;
};

namespace detail {

struct Clusters {
    Matrix points;
    std::vector<int> labels;
};

template <typename Rng>
Clusters sample_clusters(const std::vector<Eigen::Vector2d>& centers, const std::vector<int>& labels, int per_cluster,
                         double sigma, Rng& rng) {
    Clusters out;
    out.points.resize(static_cast<Eigen::Index>(centers.size()) * per_cluster, 2);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < centers.size(); ++c)
        for (int p = 0; p < per_cluster; ++p) {
            const Eigen::Vector2d x = ClusterSampler::sample(centers[c], sigma, rng);
            out.points(row, 0) = to_float32(x(0));
            out.points(row, 1) = to_float32(x(1));
            out.labels.push_back(labels[c]);
            ++row;
        }
    return out;
}

inline Dataset labelled(Matrix points, std::vector<int> labels, int class_count) {
    Dataset ds = make_dataset(std::move(points), std::move(labels));
    ds.class_count = class_count;
    return ds;
}

inline std::vector<Eigen::Vector2d> segmentation_centers() { return {{0.0, 0.0}, {3.0, 0.0}, {1.5, 2.6}}; }
inline Eigen::Vector2d segmentation_ood_center() { return {9.0, 9.0}; }

}  // namespace detail

/// Generates the files for `spec`. Deterministic for a fixed seed.
///   toy_outliers   -> "toy"        unlabelled clusters in the unit box plus uniform outliers
///   xor_gaussians  -> "xor"        4 blobs at (+-1, +-1), class = diagonal
///   segmentation3  -> "train", "test", "ood", "probe"
///   ood_probe      -> "probe"      held-out ID and OOD points, label 1 marks OOD
inline std::vector<NamedDataset> generate(const SyntheticSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<NamedDataset> out;
    switch (spec.generator) {
        case Generator::toy_outliers: {
            if (spec.clusters * spec.per_cluster + spec.outliers == 0) throw InvalidArgument("synth: zero total points");
            std::uniform_real_distribution<double> unit(0.0, 1.0);
            const double margin = 0.15;
            std::vector<Eigen::Vector2d> centers;
            for (int c = 0; c < spec.clusters; ++c)
                centers.emplace_back(margin + (1.0 - 2 * margin) * unit(rng), margin + (1.0 - 2 * margin) * unit(rng));
            auto cl = detail::sample_clusters(centers, std::vector<int>(centers.size(), 0), spec.per_cluster,
                                              spec.spread, rng);
            Matrix pts(cl.points.rows() + spec.outliers, 2);
            pts.topRows(cl.points.rows()) = cl.points;
            for (int o = 0; o < spec.outliers; ++o) {
                pts(cl.points.rows() + o, 0) = to_float32(unit(rng));
                pts(cl.points.rows() + o, 1) = to_float32(unit(rng));
            }
            out.push_back({"toy", make_dataset(std::move(pts))});
            break;
        }
        case Generator::xor_gaussians: {
            if (spec.per_cluster == 0) throw InvalidArgument("synth: zero total points");
            const std::vector<Eigen::Vector2d> centers{{1, 1}, {-1, -1}, {1, -1}, {-1, 1}};
            auto cl = detail::sample_clusters(centers, {0, 0, 1, 1}, spec.per_cluster, spec.spread, rng);
            out.push_back({"xor", detail::labelled(std::move(cl.points), std::move(cl.labels), 2)});
            break;
        }
        case Generator::segmentation3:
        case Generator::ood_probe: {
            if (spec.per_cluster == 0) throw InvalidArgument("synth: zero total points");
            const auto centers = detail::segmentation_centers();
            auto train = detail::sample_clusters(centers, {0, 1, 2}, spec.per_cluster, spec.spread, rng);
            const int held_out = std::max(1, spec.per_cluster / 3);
            auto test = detail::sample_clusters(centers, {0, 1, 2}, held_out, spec.spread, rng);
            auto ood = detail::sample_clusters({detail::segmentation_ood_center()}, {0}, 3 * held_out, spec.spread, rng);

            Matrix probe(test.points.rows() + ood.points.rows(), 2);
            probe << test.points, ood.points;
            std::vector<int> is_ood(static_cast<std::size_t>(test.points.rows()), 0);
            is_ood.resize(static_cast<std::size_t>(probe.rows()), 1);

            if (spec.generator == Generator::segmentation3) {
                out.push_back({"train", detail::labelled(std::move(train.points), std::move(train.labels), 3)});
                out.push_back({"test", detail::labelled(std::move(test.points), std::move(test.labels), 3)});
                out.push_back({"ood", make_dataset(std::move(ood.points))});
            }
            out.push_back({"probe", detail::labelled(std::move(probe), std::move(is_ood), 2)});
            break;
        }
    }
    return out;
}

/// Convenience: the single dataset produced by a one-file generator.
inline Dataset generate_one(const SyntheticSpec& spec, const std::string& name) {
    for (auto& nd : generate(spec))
        if (nd.name == name) return std::move(nd.data);
    throw InvalidArgument("generator produced no \"" + name + "\" dataset");
}

/// The bundled toy dataset (5 clusters x 200 points, sigma 0.05, 20 outliers, seed 7).
inline Dataset toy_dataset() { return generate_one(default_spec(Generator::toy_outliers), "toy"); }

}  // namespace pixood::synth
