#pragma once

#include "pixood/core.hpp"

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

namespace pixood::metrics {

/// Area under the ROC curve for separating `positives` (higher scores expected)
/// from `negatives`, from the Mann-Whitney U statistic with mid-ranks for ties.
inline double auroc(std::span<const double> negatives, std::span<const double> positives) {
    if (negatives.empty() || positives.empty()) throw InvalidArgument("auroc: both classes need samples");
    const std::size_t n = negatives.size() + positives.size();
    std::vector<std::pair<double, bool>> all;
    all.reserve(n);
    for (double s : negatives) all.emplace_back(s, false);
    for (double s : positives) all.emplace_back(s, true);
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    double positive_rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && all[j].first == all[i].first) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t)
            if (all[t].second) positive_rank_sum += mid_rank;
        i = j;
    }
    const double np = static_cast<double>(positives.size());
    const double u = positive_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * static_cast<double>(negatives.size()));
}

}  // namespace pixood::metrics
