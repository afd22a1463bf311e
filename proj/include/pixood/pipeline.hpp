#pragma once

// End-to-end model: one classifier shared by all classes, and per class an
// etalon set plus a calibrated decision strategy in the 2D space
// (class logit, distance to the nearest class etalon).

#include "pixood/classifier.hpp"
#include "pixood/condense.hpp"
#include "pixood/decision.hpp"
#include "pixood/io.hpp"

#include <string>
#include <vector>

namespace pixood::pipeline {

enum class ScoreMode { predicted_class, min_over_classes };

inline std::string to_string(ScoreMode m) { return m == ScoreMode::predicted_class ? "predicted_class" : "min_over_classes"; }

inline ScoreMode parse_score_mode(const std::string& s) {
    if (s == "predicted_class") return ScoreMode::predicted_class;
    if (s == "min_over_classes") return ScoreMode::min_over_classes;
    throw InvalidArgument("unknown score mode \"" + s + "\"");
}

struct PipelineConfig {
    classifier::TrainConfig mlp;
    condense::CondenseConfig condense;
    double epsilon = 0.05;
    double ood_inflation = 100.0;
    int grid_resolution = 200;
    double grid_half_width = 6.0;
    ScoreMode score_mode = ScoreMode::predicted_class;
    std::uint64_t seed = 0;

    /// Settings for small 2D synthetic data rather than backbone embeddings.
    static PipelineConfig desk_scale() {
        PipelineConfig c;
        c.mlp.epochs = 40;
        c.mlp.learning_rate = 3e-3;
        c.mlp.hidden_width = 64;
        c.mlp.batch_size = 32;
        c.condense.budget = 16;
        c.condense.epochs = 60;
        c.condense.batch_size = 64;
        return c;
    }
};

struct ClassModel {
    int class_id = 0;
    condense::EtalonSet etalons;
    condense::SupportTracker supports;
    decision::Strategy strategy;
    decision::CalibrationTable calibration;
};

struct PixOODModel {
    classifier::MLPParams classifier;
    std::vector<ClassModel> class_models;
    PipelineConfig config;

    int class_count() const { return static_cast<int>(class_models.size()); }
};

// ---- patch filtering and relabelling ---------------------------------------------

struct PurityFilter {
    std::vector<bool> keep;
    std::vector<int> dominant;
};

/// Keeps rows whose most frequent label covers strictly more than `threshold`
/// of the row. Dominant label ties go to the lowest class id.
inline PurityFilter filter_by_purity(const Eigen::Ref<const Matrix>& histograms, double threshold = 0.9) {
    PurityFilter out;
    for (Eigen::Index i = 0; i < histograms.rows(); ++i) {
        const double total = histograms.row(i).sum();
        if (!(total > 0.0)) throw InvalidArgument("filter_by_purity: empty histogram row " + std::to_string(i));
        const std::size_t top = argmax_lowest(histograms.row(i));
        out.dominant.push_back(static_cast<int>(top));
        out.keep.push_back(histograms(i, static_cast<Eigen::Index>(top)) / total > threshold);
    }
    return out;
}

/// Replaces predictions whose score exceeds `score_threshold` by `fallback_class`.
inline std::vector<int> relabel_ood(std::vector<int> predictions, std::span<const double> scores,
                                    double score_threshold, int fallback_class) {
    if (predictions.size() != scores.size()) throw DimensionMismatch("relabel_ood: length mismatch");
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (scores[i] > score_threshold) predictions[i] = fallback_class;
    return predictions;
}

// ---- projection and inference ------------------------------------------------------

template <typename V>
decision::Vec2 project(const classifier::MLPParams& mlp, const condense::EtalonSet& etalons,
                       const Eigen::MatrixBase<V>& x, int class_id) {
    return {classifier::logit_score(mlp, x, class_id), condense::nearest_etalon(x, etalons).distance};
}

template <typename V>
decision::Vec2 project(const PixOODModel& model, const Eigen::MatrixBase<V>& x, int class_id) {
    if (class_id < 0 || class_id >= model.class_count()) throw InvalidArgument("project: unknown class");
    return project(model.classifier, model.class_models[static_cast<std::size_t>(class_id)].etalons, x, class_id);
}

struct Inference {
    int predicted_class = 0;
    double ood_score = 0.0;
};

template <typename V>
double class_ood_score(const PixOODModel& model, const Eigen::MatrixBase<V>& x, int class_id) {
    const ClassModel& cm = model.class_models[static_cast<std::size_t>(class_id)];
    return decision::ood_score(cm.calibration, cm.strategy.ratio(project(model, x, class_id)));
}

template <typename V>
Inference infer(const PixOODModel& model, const Eigen::MatrixBase<V>& x) {
    const Vector logits = classifier::forward(model.classifier, x);
    Inference out;
    out.predicted_class = static_cast<int>(argmax_lowest(logits));
    if (model.config.score_mode == ScoreMode::predicted_class) {
        out.ood_score = class_ood_score(model, x, out.predicted_class);
    } else {
        out.ood_score = 1.0;
        for (int c = 0; c < model.class_count(); ++c) out.ood_score = std::min(out.ood_score, class_ood_score(model, x, c));
    }
    return out;
}

inline std::vector<Inference> infer_batch(const PixOODModel& model, const Eigen::Ref<const Matrix>& points) {
    std::vector<Inference> out;
    out.reserve(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) out.push_back(infer(model, points.row(i)));
    return out;
}

// ---- training ------------------------------------------------------------------------

inline ClassModel fit_class_model(const classifier::MLPParams& mlp, const Eigen::Ref<const Matrix>& class_points,
                                  int class_id, const PipelineConfig& config) {
    condense::CondenseConfig cc = config.condense;
    cc.seed = config.seed + 1000 + static_cast<std::uint64_t>(class_id);
    auto condensed = condense::condense(class_points, cc);

    Matrix z(class_points.rows(), 2);
    for (Eigen::Index i = 0; i < class_points.rows(); ++i)
        z.row(i) = project(mlp, condensed.etalons, class_points.row(i), class_id).transpose();

    ClassModel cm;
    cm.class_id = class_id;
    cm.etalons = std::move(condensed.etalons);
    cm.supports = std::move(condensed.tracker);
    const decision::Gaussian2 id = decision::fit_id_gaussian(z);
    const decision::Gaussian2 ood = decision::make_ood_gaussian(id, config.ood_inflation);
    cm.calibration = decision::calibrate(id, ood, decision::default_grid(id, config.grid_resolution, config.grid_half_width));
    cm.strategy = decision::make_strategy(id, ood, cm.calibration, config.epsilon);
    return cm;
}

/// Trains the shared classifier on all classes, then condenses and calibrates
/// each class independently. Deterministic for a fixed config.
inline PixOODModel train(const Dataset& ds, const PipelineConfig& config) {
    validate(ds);
    if (!ds.labels) throw InvalidArgument("pipeline training needs labels");
    if (ds.class_count < 2) throw InvalidArgument("pipeline training needs at least two classes");
    std::vector<Matrix> per_class;
    for (int c = 0; c < ds.class_count; ++c) {
        per_class.push_back(ds.class_points(c));
        if (per_class.back().rows() < 3)
            throw InvalidArgument("class " + std::to_string(c) + " has fewer than 3 training points");
    }
    PixOODModel model;
    model.config = config;
    classifier::TrainConfig mc = config.mlp;
    mc.seed = config.seed;
    model.classifier = classifier::train_mlp(ds, mc).params;
    for (int c = 0; c < ds.class_count; ++c)
        model.class_models.push_back(fit_class_model(model.classifier, per_class[static_cast<std::size_t>(c)], c, config));
    return model;
}

// ---- config files -------------------------------------------------------------------

inline void apply_key_values(const io::KeyValues& kv, classifier::TrainConfig& mlp, const std::string& prefix) {
    for (const auto& [full_key, value] : kv) {
        if (full_key.rfind(prefix, 0) != 0) continue;
        const std::string key = full_key.substr(prefix.size());
        if (key == "epochs") mlp.epochs = static_cast<int>(io::parse_int(value));
        else if (key == "learning_rate") mlp.learning_rate = io::parse_double(value);
        else if (key == "weight_decay") mlp.weight_decay = io::parse_double(value);
        else if (key == "batch_size") mlp.batch_size = static_cast<int>(io::parse_int(value));
        else if (key == "hidden_width") mlp.hidden_width = static_cast<int>(io::parse_int(value));
        else if (key == "seed") mlp.seed = static_cast<std::uint64_t>(io::parse_int(value));
        else throw InvalidArgument("unknown mlp config key \"" + full_key + "\"");
    }
}

/// Keys: "mlp.<field>", "condense.<field>" and the top-level decision fields.
inline void apply_key_values(const io::KeyValues& kv, PipelineConfig& config) {
    apply_key_values(kv, config.mlp, "mlp.");
    condense::apply_key_values(kv, config.condense, "condense.");
    for (const auto& [key, value] : kv) {
        if (key.rfind("mlp.", 0) == 0 || key.rfind("condense.", 0) == 0) continue;
        if (key == "epsilon") config.epsilon = io::parse_double(value);
        else if (key == "ood_inflation") config.ood_inflation = io::parse_double(value);
        else if (key == "grid_resolution") config.grid_resolution = static_cast<int>(io::parse_int(value));
        else if (key == "grid_half_width") config.grid_half_width = io::parse_double(value);
        else if (key == "score_mode") config.score_mode = parse_score_mode(value);
        else if (key == "seed") config.seed = static_cast<std::uint64_t>(io::parse_int(value));
        else if (key == "format_version" || key == "class_count" || key == "input_dim") continue;
        else throw InvalidArgument("unknown pipeline config key \"" + key + "\"");
    }
}

inline io::KeyValues to_key_values(const PipelineConfig& c) {
    io::KeyValues kv = condense::to_key_values(c.condense, "condense.");
    kv["mlp.epochs"] = std::to_string(c.mlp.epochs);
    kv["mlp.learning_rate"] = io::format_double(c.mlp.learning_rate);
    kv["mlp.weight_decay"] = io::format_double(c.mlp.weight_decay);
    kv["mlp.batch_size"] = std::to_string(c.mlp.batch_size);
    kv["mlp.hidden_width"] = std::to_string(c.mlp.hidden_width);
    kv["mlp.seed"] = std::to_string(c.mlp.seed);
    kv["epsilon"] = io::format_double(c.epsilon);
    kv["ood_inflation"] = io::format_double(c.ood_inflation);
    kv["grid_resolution"] = std::to_string(c.grid_resolution);
    kv["grid_half_width"] = io::format_double(c.grid_half_width);
    kv["score_mode"] = to_string(c.score_mode);
    kv["seed"] = std::to_string(c.seed);
    return kv;
}

// ---- bundle directory ----------------------------------------------------------------

inline constexpr int kBundleFormatVersion = 1;

inline std::string class_file(int c, const std::string& what) { return "class_" + std::to_string(c) + "_" + what; }

/// Writes manifest.txt, mlp.bin and per class etalons / strategy / calibration files.
inline void save_bundle(const PixOODModel& model, const io::fs::path& dir) {
    io::fs::create_directories(dir);
    io::KeyValues manifest = to_key_values(model.config);
    manifest["format_version"] = std::to_string(kBundleFormatVersion);
    manifest["class_count"] = std::to_string(model.class_count());
    manifest["input_dim"] = std::to_string(model.classifier.input_dim());
    io::write_file_atomic(dir / "manifest.txt", io::format_key_values(manifest));
    classifier::save(model.classifier, dir / "mlp.bin");
    for (const ClassModel& cm : model.class_models) {
        io::write_file_atomic(dir / class_file(cm.class_id, "etalons.csv"), condense::etalons_to_csv(cm.etalons, cm.supports));
        io::write_file_atomic(dir / class_file(cm.class_id, "strategy.txt"),
                              io::format_key_values(decision::strategy_to_key_values(cm.strategy)));
        io::write_file_atomic(dir / class_file(cm.class_id, "calibration.csv"), decision::calibration_to_csv(cm.calibration));
    }
}

inline PixOODModel load_bundle(const io::fs::path& dir) {
    const io::KeyValues manifest = io::read_key_values(dir / "manifest.txt");
    if (io::parse_int(io::require(manifest, "format_version")) != kBundleFormatVersion)
        throw FormatError(FormatError::Kind::parse, "unsupported bundle format version");
    PixOODModel model;
    apply_key_values(manifest, model.config);
    model.classifier = classifier::load(dir / "mlp.bin");
    const auto classes = static_cast<int>(io::parse_int(io::require(manifest, "class_count")));
    if (classes != model.classifier.class_count())
        throw FormatError(FormatError::Kind::count_mismatch, "manifest class count disagrees with classifier");
    for (int c = 0; c < classes; ++c) {
        ClassModel cm;
        cm.class_id = c;
        auto dump = condense::etalons_from_csv(io::read_file(dir / class_file(c, "etalons.csv")), model.config.condense.variant);
        cm.etalons = std::move(dump.etalons);
        cm.supports = std::move(dump.tracker);
        if (static_cast<Eigen::Index>(cm.etalons.dim()) != model.classifier.input_dim())
            throw FormatError(FormatError::Kind::count_mismatch, "etalon dimension disagrees with classifier");
        cm.strategy = decision::strategy_from_key_values(io::read_key_values(dir / class_file(c, "strategy.txt")));
        cm.calibration = decision::calibration_from_csv(io::read_file(dir / class_file(c, "calibration.csv")));
        model.class_models.push_back(std::move(cm));
    }
    return model;
}

}  // namespace pixood::pipeline
