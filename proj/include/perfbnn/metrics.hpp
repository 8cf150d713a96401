#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "perfbnn/calibration.hpp"
#include "perfbnn/errors.hpp"
#include "perfbnn/special.hpp"

namespace perfbnn {

/// Mean absolute percentage error over points with a non-zero truth. Zero-truth points are
/// skipped and counted in `excluded` when provided.
inline double mape(std::span<const double> predicted, std::span<const double> truths,
                   std::size_t* excluded = nullptr)
{
    if (predicted.size() != truths.size())
        throw DataError(DataErrorKind::invalid_argument, "prediction and truth lists differ in length");
    if (truths.empty())
        throw DataError(DataErrorKind::too_small, "MAPE needs at least one point");
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < truths.size(); ++c) {
        if (truths[c] == 0.0)
            continue;
        sum += std::abs(predicted[c] - truths[c]) / std::abs(truths[c]);
        ++used;
    }
    if (excluded)
        *excluded = truths.size() - used;
    if (used == 0)
        throw DataError(DataErrorKind::degenerate_range, "MAPE is undefined: every truth is zero");
    return sum / static_cast<double>(used) * 100.0;
}

/// sum_j w_j ((rho_j - alpha_j) / 100)^2 * 100. Empty weights mean unit weights.
inline double cal_score(std::span<const double> levels, std::span<const double> alphas,
                        std::span<const double> weights = {})
{
    if (levels.size() != alphas.size() || (!weights.empty() && weights.size() != levels.size()))
        throw DataError(DataErrorKind::invalid_argument, "cal score inputs differ in length");
    double sum = 0.0;
    for (std::size_t j = 0; j < levels.size(); ++j) {
        const double d = (levels[j] - alphas[j]) / 100.0;
        sum += (weights.empty() ? 1.0 : weights[j]) * d * d;
    }
    return sum * 100.0;
}

using IntervalFn = std::function<std::pair<double, double>(Eigen::Index row, double rho_percent)>;

/// Observed frequency per level for intervals produced by `interval_fn` on each test row.
inline std::vector<double> observed_frequencies(const IntervalFn& interval_fn, std::span<const double> truths,
                                                std::span<const double> levels)
{
    if (truths.empty())
        throw DataError(DataErrorKind::too_small, "calibration scoring needs a non-empty test set");
    std::vector<double> alphas;
    std::vector<std::pair<double, double>> intervals(truths.size());
    for (double rho : levels) {
        for (std::size_t c = 0; c < truths.size(); ++c)
            intervals[c] = interval_fn(static_cast<Eigen::Index>(c), rho);
        alphas.push_back(observed_frequency(intervals, truths));
    }
    return alphas;
}

inline double cal_score(const IntervalFn& interval_fn, std::span<const double> truths,
                        std::span<const double> levels, std::span<const double> weights = {})
{
    const auto alphas = observed_frequencies(interval_fn, truths, levels);
    return cal_score(levels, alphas, weights);
}

/// Scores over repeated runs with the half-width of their 95% t confidence interval.
struct EvalSummary {
    std::vector<double> scores;
    double mean = 0.0;
    double margin = 0.0;
};

inline EvalSummary summarize(std::span<const double> scores)
{
    if (scores.size() < 2)
        throw DataError(DataErrorKind::too_small, "summaries need at least 2 repeats");
    EvalSummary s;
    s.scores.assign(scores.begin(), scores.end());
    const double r = static_cast<double>(scores.size());
    double sum = 0.0;
    for (double v : scores)
        sum += v;
    s.mean = sum / r;
    double ss = 0.0;
    for (double v : scores)
        ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / (r - 1.0));
    s.margin = student_t_quantile(0.975, r - 1.0) * sd / std::sqrt(r);
    s.mean = std::clamp(s.mean, *std::min_element(scores.begin(), scores.end()),
                        *std::max_element(scores.begin(), scores.end()));
    return s;
}

enum class Comparison { a_better, b_better, same };

inline const char* to_string(Comparison c) noexcept
{
    switch (c) {
    case Comparison::a_better:
        return "a_better";
    case Comparison::b_better:
        return "b_better";
    default:
        return "same";
    }
}

struct WelchResult {
    double statistic = 0.0;
    double df = 0.0;
    double p_value = 1.0;
    Comparison decision = Comparison::same;
};

/// Two-sided Welch t-test; lower scores are better.
inline WelchResult welch_t_test(std::span<const double> a, std::span<const double> b, double alpha = 0.05)
{
    if (a.size() < 2 || b.size() < 2)
        throw DataError(DataErrorKind::too_small, "Welch's test needs at least 2 values per sample");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw DataError(DataErrorKind::invalid_argument, "significance level must lie in (0, 1)");
    auto moments = [](std::span<const double> x) {
        double m = 0.0;
        for (double v : x)
            m += v;
        m /= static_cast<double>(x.size());
        double ss = 0.0;
        for (double v : x)
            ss += (v - m) * (v - m);
        return std::pair{m, ss / static_cast<double>(x.size() - 1)};
    };
    const auto [ma, va] = moments(a);
    const auto [mb, vb] = moments(b);
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double se2 = va / na + vb / nb;

    WelchResult r;
    if (se2 == 0.0) {
        if (ma == mb)
            return r;
        // Both samples constant but different: the difference is certain.
        r.statistic = ma < mb ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
        r.p_value = 0.0;
        r.decision = ma < mb ? Comparison::a_better : Comparison::b_better;
        return r;
    }
    r.statistic = (ma - mb) / std::sqrt(se2);
    const double qa = va / na;
    const double qb = vb / nb;
    r.df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    r.p_value = 2.0 * student_t_cdf(-std::abs(r.statistic), r.df);
    if (r.p_value < alpha)
        r.decision = ma < mb ? Comparison::a_better : Comparison::b_better;
    return r;
}

} // namespace perfbnn
