#pragma once

// The four-way condensation comparison on the toy dataset: soft K-means, soft
// K-medians, condensation, and condensation with re-inits, all with the same
// budget and seeds. Reports the number of useful etalons (support >= threshold).

#include "pixood/condense.hpp"

#include <sstream>
#include <string>
#include <vector>

namespace pixood::toy {

enum class Method { soft_kmeans, soft_kmedians, condensation, condensation_reinit };

inline constexpr Method kMethods[] = {Method::soft_kmeans, Method::soft_kmedians, Method::condensation,
                                      Method::condensation_reinit};

inline std::string to_string(Method m) {
    switch (m) {
        case Method::soft_kmeans: return "soft_kmeans";
        case Method::soft_kmedians: return "soft_kmedians";
        case Method::condensation: return "condensation";
        case Method::condensation_reinit: return "condensation_reinit";
    }
    return "?";
}

/// Shared settings for all four runs. `base.variant` and `base.reinit` are
/// overridden per method.
struct ToyConfig {
    condense::CondenseConfig base = default_base();
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

    static condense::CondenseConfig default_base() {
        condense::CondenseConfig c;
        c.budget = 50;
        c.reinit_threshold = 1.0;
        c.batch_size = 96;
        c.tau_start = 10.0;
        c.learning_rate = 0.03;
        return c;
    }
};

inline condense::CondenseConfig method_config(const condense::CondenseConfig& base, Method m, std::uint64_t seed) {
    condense::CondenseConfig c = base;
    c.seed = seed;
    c.reinit = m == Method::condensation_reinit;
    c.variant = m == Method::soft_kmeans     ? condense::Variant::soft_kmeans
                : m == Method::soft_kmedians ? condense::Variant::soft_kmedians
                                             : condense::Variant::condensation;
    return c;
}

struct Row {
    std::uint64_t seed = 0;
    Method method = Method::soft_kmeans;
    std::size_t useful = 0;
    double final_loss = 0.0;
    std::size_t reinits = 0;
    condense::SupportTracker supports;
};

inline std::vector<Row> eval_toy(const Eigen::Ref<const Matrix>& points, const ToyConfig& config) {
    std::vector<Row> rows;
    for (std::uint64_t seed : config.seeds)
        for (Method m : kMethods) {
            auto r = condense::condense(points, method_config(config.base, m, seed));
            rows.push_back({seed, m, condense::count_useful(r.tracker, config.base.reinit_threshold),
                            r.epoch_losses.back(), r.reinit_count, std::move(r.tracker)});
        }
    return rows;
}

inline std::string report_csv(const std::vector<Row>& rows) {
    std::ostringstream out;
    out << "seed,method,useful,final_loss,reinits\n";
    for (const Row& r : rows)
        out << r.seed << ',' << to_string(r.method) << ',' << r.useful << ',' << io::format_double(r.final_loss) << ','
            << r.reinits << '\n';
    return out.str();
}

/// Useful counts for one seed in method order.
inline std::vector<std::size_t> counts_for_seed(const std::vector<Row>& rows, std::uint64_t seed) {
    std::vector<std::size_t> out;
    for (const Row& r : rows)
        if (r.seed == seed) out.push_back(r.useful);
    return out;
}

}  // namespace pixood::toy
