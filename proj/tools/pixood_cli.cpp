// pixood_cli: synthetic data, condensation, EM, training, scoring and the toy report.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include "pixood/classifier.hpp"
#include "pixood/condense.hpp"
#include "pixood/decision.hpp"
#include "pixood/io.hpp"
#include "pixood/laplace_em.hpp"
#include "pixood/metrics.hpp"
#include "pixood/pipeline.hpp"
#include "pixood/synth.hpp"
#include "pixood/toy.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace pixood;

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out = ".";
};

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
    if (with_config) sub->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", c.seed, "random seed")->each([&c](const std::string&) { c.seed_set = true; });
    sub->add_option("--out", c.out, "output directory");
}

std::optional<fs::path> optional_path(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
}

// ---- synth ---------------------------------------------------------------------

struct SynthArgs {
    std::string generator = "toy_outliers";
    std::optional<int> clusters, per_cluster, outliers;
    std::optional<double> spread;
    bool csv = false;
};

int run_synth(const SynthArgs& a, const Common& c) {
    synth::SyntheticSpec spec = synth::default_spec(synth::parse_generator(a.generator));
    if (a.clusters) spec.clusters = *a.clusters;
    if (a.per_cluster) spec.per_cluster = *a.per_cluster;
    if (a.outliers) spec.outliers = *a.outliers;
    if (a.spread) spec.spread = *a.spread;
    if (c.seed_set) spec.seed = c.seed;
    for (const auto& nd : synth::generate(spec)) {
        const fs::path base = fs::path(c.out) / nd.name;
        if (a.csv) {
            io::write_points(nd.data, fs::path(base) += ".csv");
        } else {
            io::write_points(nd.data, fs::path(base) += ".pts",
                             nd.data.labelled() ? std::optional<fs::path>(fs::path(base) += ".lbl") : std::nullopt);
        }
        std::cout << nd.name << ": " << nd.data.size() << " points\n";
    }
    return 0;
}

// ---- condense ------------------------------------------------------------------

struct CondenseArgs {
    std::string points, labels;
    std::optional<int> k;
    std::string variant;
};

condense::CondenseConfig condense_config(const Common& c, std::optional<int> k, const std::string& variant) {
    condense::CondenseConfig cfg;
    if (!c.config.empty()) condense::apply_key_values(io::read_key_values(c.config), cfg);
    if (k) cfg.budget = *k;
    if (!variant.empty()) cfg.variant = condense::parse_variant(variant);
    if (c.seed_set) cfg.seed = c.seed;
    return cfg;
}

int run_condense(const CondenseArgs& a, const Common& c) {
    const Dataset ds = io::read_points(a.points, optional_path(a.labels));
    const condense::CondenseConfig cfg = condense_config(c, a.k, a.variant);
    const auto result = condense::condense(ds.points, cfg);
    const fs::path out(c.out);
    io::write_file_atomic(out / "etalons.csv", condense::etalons_to_csv(result.etalons, result.tracker));
    io::write_file_atomic(out / "condense_config.txt", io::format_key_values(condense::to_key_values(cfg)));
    std::ostringstream losses;
    losses << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
        losses << e << ',' << io::format_double(result.epoch_losses[e]) << '\n';
    io::write_file_atomic(out / "losses.csv", losses.str());
    std::cout << "useful etalons: " << condense::count_useful(result.tracker, cfg.reinit_threshold) << " of "
              << cfg.budget << " (reinits: " << result.reinit_count << ")\n";
    return 0;
}

// ---- em-fit -------------------------------------------------------------------------

struct EmArgs {
    std::string points;
    int k = 3;
    int iterations = 50;
    int exponent = 1;
};

int run_em(const EmArgs& a, const Common& c) {
    const Dataset ds = io::read_points(a.points);
    const auto fit = laplace_em::em_fit(ds.points, a.k, a.iterations, c.seed, a.exponent);
    const fs::path out(c.out);
    io::write_file_atomic(out / "mixture.csv", laplace_em::mixture_to_csv(fit.mixture));
    std::ostringstream trace;
    trace << "iteration,log_likelihood\n";
    for (std::size_t i = 0; i < fit.log_likelihoods.size(); ++i)
        trace << i << ',' << io::format_double(fit.log_likelihoods[i]) << '\n';
    io::write_file_atomic(out / "em_trace.csv", trace.str());
    std::cout << "log-likelihood: " << io::format_double(fit.log_likelihoods.back()) << '\n';
    return 0;
}

// ---- train ---------------------------------------------------------------------------

struct TrainArgs {
    std::string points, labels;
    std::optional<int> k;
    std::optional<double> epsilon;
    std::string variant;
};

int run_train(const TrainArgs& a, const Common& c) {
    const Dataset ds = io::read_points(a.points, optional_path(a.labels));
    pipeline::PipelineConfig cfg = pipeline::PipelineConfig::desk_scale();
    if (!c.config.empty()) pipeline::apply_key_values(io::read_key_values(c.config), cfg);
    if (a.k) cfg.condense.budget = *a.k;
    if (a.epsilon) cfg.epsilon = *a.epsilon;
    if (!a.variant.empty()) cfg.condense.variant = condense::parse_variant(a.variant);
    if (c.seed_set) cfg.seed = c.seed;
    const auto model = pipeline::train(ds, cfg);
    pipeline::save_bundle(model, c.out);
    std::cout << "trained " << model.class_count() << " classes into " << c.out << '\n';
    return 0;
}

// ---- score -------------------------------------------------------------------------------

struct ScoreArgs {
    std::string model, points, truth;
};

int run_score(const ScoreArgs& a, const Common& c) {
    const auto model = pipeline::load_bundle(a.model);
    const Dataset ds = io::read_points(a.points);
    const auto results = pipeline::infer_batch(model, ds.points);
    std::ostringstream csv;
    csv << "index,class,ood_score\n";
    for (std::size_t i = 0; i < results.size(); ++i)
        csv << i << ',' << results[i].predicted_class << ',' << io::format_double(results[i].ood_score) << '\n';
    io::write_file_atomic(fs::path(c.out) / "scores.csv", csv.str());
    if (!a.truth.empty()) {
        const auto truth = io::read_labels(a.truth);
        if (truth.size() != results.size()) throw FormatError(FormatError::Kind::count_mismatch, "truth/points count mismatch");
        std::vector<double> id_scores, ood_scores;
        for (std::size_t i = 0; i < results.size(); ++i) (truth[i] ? ood_scores : id_scores).push_back(results[i].ood_score);
        const double auc = metrics::auroc(id_scores, ood_scores);
        io::write_file_atomic(fs::path(c.out) / "auroc.txt", "auroc = " + io::format_double(auc) + "\n");
        std::cout << "auroc = " << io::format_double(auc) << '\n';
    }
    return 0;
}

// ---- calib-dump -----------------------------------------------------------------------

struct CalibArgs {
    std::string model;
    int class_id = 0;
};

int run_calib(const CalibArgs& a, const Common& c) {
    const auto model = pipeline::load_bundle(a.model);
    if (a.class_id < 0 || a.class_id >= model.class_count()) throw InvalidArgument("calib-dump: unknown class");
    const auto& cm = model.class_models[static_cast<std::size_t>(a.class_id)];
    io::write_file_atomic(fs::path(c.out) / pipeline::class_file(a.class_id, "calibration.csv"),
                          decision::calibration_to_csv(cm.calibration));
    io::write_file_atomic(fs::path(c.out) / pipeline::class_file(a.class_id, "strategy.txt"),
                          io::format_key_values(decision::strategy_to_key_values(cm.strategy)));
    std::cout << cm.calibration.size() << " calibration entries, mu = " << io::format_double(cm.strategy.threshold) << '\n';
    return 0;
}

// ---- eval-toy --------------------------------------------------------------------------

struct ToyArgs {
    std::string points;
    std::optional<int> k;
    std::optional<double> threshold;
    std::vector<std::uint64_t> seeds;
};

int run_toy(const ToyArgs& a, const Common& c) {
    const Dataset ds = a.points.empty() ? synth::toy_dataset() : io::read_points(a.points);
    toy::ToyConfig cfg;
    if (!c.config.empty()) condense::apply_key_values(io::read_key_values(c.config), cfg.base);
    if (a.k) cfg.base.budget = *a.k;
    if (a.threshold) cfg.base.reinit_threshold = *a.threshold;
    if (!a.seeds.empty()) cfg.seeds = a.seeds;
    else if (c.seed_set) cfg.seeds = {c.seed};
    const auto rows = toy::eval_toy(ds.points, cfg);
    io::write_file_atomic(fs::path(c.out) / "toy_report.csv", toy::report_csv(rows));
    for (std::uint64_t s : cfg.seeds) {
        std::cout << "seed " << s << ":";
        for (std::size_t n : toy::counts_for_seed(rows, s)) std::cout << ' ' << n;
        std::cout << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PixOOD core: condensation, Laplace EM, classifier and calibrated OOD scoring"};
    app.require_subcommand(1);

    Common common;
    SynthArgs synth_args;
    CondenseArgs condense_args;
    EmArgs em_args;
    TrainArgs train_args;
    ScoreArgs score_args;
    CalibArgs calib_args;
    ToyArgs toy_args;

    auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(s, common, false);
    s->add_option("--generator", synth_args.generator, "toy_outliers | xor_gaussians | segmentation3 | ood_probe");
    s->add_option("--clusters", synth_args.clusters);
    s->add_option("--per-cluster", synth_args.per_cluster);
    s->add_option("--outliers", synth_args.outliers);
    s->add_option("--spread", synth_args.spread);
    s->add_flag("--csv", synth_args.csv, "write CSV instead of PTS1/LBL1");

    auto* cd = app.add_subcommand("condense", "condense a point set into etalons");
    add_common(cd, common);
    cd->add_option("--points", condense_args.points)->required()->check(CLI::ExistingFile);
    cd->add_option("--labels", condense_args.labels)->check(CLI::ExistingFile);
    cd->add_option("--k", condense_args.k, "etalon budget");
    cd->add_option("--variant", condense_args.variant, "soft_kmeans | soft_kmedians | condensation");

    auto* em = app.add_subcommand("em-fit", "fit a spherical Laplace mixture by EM");
    add_common(em, common, false);
    em->add_option("--points", em_args.points)->required()->check(CLI::ExistingFile);
    em->add_option("--k", em_args.k)->check(CLI::PositiveNumber);
    em->add_option("--iterations", em_args.iterations)->check(CLI::NonNegativeNumber);
    em->add_option("--exponent", em_args.exponent, "power of the scale in the component density")->check(CLI::PositiveNumber);

    auto* tr = app.add_subcommand("train", "train a model bundle on labelled points");
    add_common(tr, common);
    tr->add_option("--points", train_args.points)->required()->check(CLI::ExistingFile);
    tr->add_option("--labels", train_args.labels)->check(CLI::ExistingFile);
    tr->add_option("--k", train_args.k, "etalon budget per class");
    tr->add_option("--epsilon", train_args.epsilon, "target ID false-negative rate");
    tr->add_option("--variant", train_args.variant);

    auto* sc = app.add_subcommand("score", "score points with a trained bundle");
    add_common(sc, common, false);
    sc->add_option("--model", score_args.model)->required()->check(CLI::ExistingDirectory);
    sc->add_option("--points", score_args.points)->required()->check(CLI::ExistingFile);
    sc->add_option("--truth", score_args.truth, "LBL1 file, 1 marks OOD; prints AUROC")->check(CLI::ExistingFile);

    auto* cb = app.add_subcommand("calib-dump", "write one class's calibration table and strategy");
    add_common(cb, common, false);
    cb->add_option("--model", calib_args.model)->required()->check(CLI::ExistingDirectory);
    cb->add_option("--class", calib_args.class_id)->required();

    auto* ty = app.add_subcommand("eval-toy", "useful-etalon counts of the four condensation variants");
    add_common(ty, common);
    ty->add_option("--points", toy_args.points)->check(CLI::ExistingFile);
    ty->add_option("--k", toy_args.k);
    ty->add_option("--threshold", toy_args.threshold, "support threshold for re-inits and usefulness");
    ty->add_option("--seeds", toy_args.seeds);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 2;
    }

    try {
        if (s->parsed()) return run_synth(synth_args, common);
        if (cd->parsed()) return run_condense(condense_args, common);
        if (em->parsed()) return run_em(em_args, common);
        if (tr->parsed()) return run_train(train_args, common);
        if (sc->parsed()) return run_score(score_args, common);
        if (cb->parsed()) return run_calib(calib_args, common);
        if (ty->parsed()) return run_toy(toy_args, common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
