#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "perfbnn/bnn.hpp"
#include "perfbnn/errors.hpp"
#include "perfbnn/special.hpp"

namespace perfbnn {

inline constexpr int default_grid_size = 200;

/// 5, 10, ..., 95 percent.
inline std::vector<double> default_levels()
{
    std::vector<double> v;
    for (int j = 1; j <= 19; ++j)
        v.push_back(5.0 * j);
    return v;
}

/// Fitted interval scaling factor per confidence level.
struct CalibrationTable {
    std::vector<double> levels;    // strictly increasing, in (0, 100)
    std::vector<double> zetas;     // > 0
    std::vector<double> zeta_max;  // search anchor used at each level

    friend bool operator==(const CalibrationTable&, const CalibrationTable&) = default;

    void validate() const
    {
        if (levels.size() != zetas.size() || levels.size() != zeta_max.size())
            throw DataError(DataErrorKind::invalid_argument, "calibration table columns differ in length");
        for (std::size_t j = 0; j < levels.size(); ++j) {
            if (!(levels[j] > 0.0 && levels[j] < 100.0) || (j > 0 && !(levels[j] > levels[j - 1])))
                throw DataError(DataErrorKind::invalid_argument, "calibration levels must increase within (0, 100)");
            if (!(zetas[j] > 0.0) || !std::isfinite(zetas[j]))
                throw DataError(DataErrorKind::invalid_argument, "calibration factors must be positive");
        }
    }
};

/// Percentage of truths inside their closed interval.
inline double observed_frequency(std::span<const std::pair<double, double>> intervals, std::span<const double> truths)
{
    if (intervals.size() != truths.size())
        throw DataError(DataErrorKind::invalid_argument, "interval and truth lists differ in length");
    if (truths.empty())
        throw DataError(DataErrorKind::too_small, "observed frequency needs at least one point");
    std::size_t inside = 0;
    for (std::size_t c = 0; c < truths.size(); ++c)
        if (intervals[c].first <= truths[c] && truths[c] <= intervals[c].second)
            ++inside;
    return 100.0 * static_cast<double>(inside) / static_cast<double>(truths.size());
}

namespace detail {

inline void check_calibration_inputs(std::span<const double> means, std::span<const double> halfwidths,
                                     std::span<const double> truths)
{
    if (means.size() != halfwidths.size() || means.size() != truths.size())
        throw DataError(DataErrorKind::invalid_argument, "calibration inputs differ in length");
    if (means.empty())
        throw DataError(DataErrorKind::too_small, "calibration needs at least one evaluation point");
    for (double h : halfwidths)
        if (!(h > 0.0))
            throw DataError(DataErrorKind::invalid_argument, "interval halfwidths must be positive");
}

inline bool covered(double mean, double halfwidth, double truth, double zeta) noexcept
{
    return mean - zeta * halfwidth <= truth && truth <= mean + zeta * halfwidth;
}

} // namespace detail

/// Observed frequency of the intervals mean +/- zeta * halfwidth.
inline double scaled_frequency(std::span<const double> means, std::span<const double> halfwidths,
                               std::span<const double> truths, double zeta)
{
    std::size_t inside = 0;
    for (std::size_t c = 0; c < truths.size(); ++c)
        inside += detail::covered(means[c], halfwidths[c], truths[c], zeta) ? 1 : 0;
    return 100.0 * static_cast<double>(inside) / static_cast<double>(truths.size());
}

/// Smallest scaling that puts every truth inside its interval; 1 when all truths equal the means.
inline double zeta_max(std::span<const double> means, std::span<const double> halfwidths,
                       std::span<const double> truths)
{
    detail::check_calibration_inputs(means, halfwidths, truths);
    double z = 0.0;
    for (std::size_t c = 0; c < truths.size(); ++c)
        z = std::max(z, std::abs(truths[c] - means[c]) / halfwidths[c]);
    if (z == 0.0)
        return 1.0;
    // Division and re-multiplication can round a boundary truth just outside; nudge up until closed.
    while (scaled_frequency(means, halfwidths, truths, z) < 100.0)
        z = std::nextafter(z, std::numeric_limits<double>::infinity());
    return z;
}

/// Log-spaced grid over [0.01 zeta_max, 10 zeta_max].
inline std::vector<double> scaling_grid(double zmax, int grid_size)
{
    if (grid_size < 2)
        throw DataError(DataErrorKind::invalid_argument, "calibration grid needs at least 2 points");
    std::vector<double> grid(static_cast<std::size_t>(grid_size));
    const double lo = std::log(0.01 * zmax);
    const double hi = std::log(10.0 * zmax);
    for (int i = 0; i < grid_size; ++i)
        grid[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (grid_size - 1));
    return grid;
}

struct ScalingSearch {
    double zeta = 1.0;
    double zeta_max = 1.0;
    double alpha = 0.0; // observed frequency at zeta
};

/// Grid point minimizing |rho - alpha(zeta)|; the smallest zeta wins ties.
inline ScalingSearch search_scaling(std::span<const double> means, std::span<const double> halfwidths,
                                   std::span<const double> truths, double rho_percent, int grid_size = default_grid_size)
{
    const double zmax = zeta_max(means, halfwidths, truths);
    ScalingSearch best{0.0, zmax, 0.0};
    double best_gap = std::numeric_limits<double>::infinity();
    for (double z : scaling_grid(zmax, grid_size)) {
        const double alpha = scaled_frequency(means, halfwidths, truths, z);
        const double gap = std::abs(rho_percent - alpha);
        if (gap < best_gap) {
            best_gap = gap;
            best.zeta = z;
            best.alpha = alpha;
        }
    }
    return best;
}

/// Fits one scaling factor per level from predictive means / total sds on held-out points.
inline CalibrationTable calibrate_member(std::span<const double> means, std::span<const double> sd_total,
                                         std::span<const double> truths, const std::vector<double>& levels,
                                         int grid_size = default_grid_size)
{
    if (truths.empty())
        throw DataError(DataErrorKind::too_small, "calibration needs a non-empty evaluation set");
    CalibrationTable table;
    std::vector<double> halfwidths(sd_total.size());
    for (double rho : levels) {
        const double z = z_score(rho);
        for (std::size_t c = 0; c < sd_total.size(); ++c)
            halfwidths[c] = z * sd_total[c];
        const auto found = search_scaling(means, halfwidths, truths, rho, grid_size);
        table.levels.push_back(rho);
        table.zetas.push_back(found.zeta);
        table.zeta_max.push_back(found.zeta_max);
    }
    table.validate();
    return table;
}

inline CalibrationTable calibrate_member(const std::vector<PredictiveDistribution>& predictions,
                                         std::span<const double> truths, const std::vector<double>& levels,
                                         int grid_size = default_grid_size)
{
    if (predictions.size() != truths.size())
        throw DataError(DataErrorKind::invalid_argument, "prediction and truth lists differ in length");
    std::vector<double> means, sds;
    for (const auto& pd : predictions) {
        means.push_back(pd.mean);
        sds.push_back(pd.sd_total());
    }
    return calibrate_member(means, sds, truths, levels, grid_size);
}

/// Exact value at fitted levels, linear in rho between them, clamped outside.
inline double zeta_at(const CalibrationTable& table, double rho_percent)
{
    if (table.levels.empty())
        throw DataError(DataErrorKind::invalid_argument, "calibration table is empty");
    if (!(rho_percent > 0.0 && rho_percent < 100.0))
        throw DataError(DataErrorKind::invalid_argument, "confidence level must lie in (0, 100)");
    const auto& lv = table.levels;
    if (rho_percent <= lv.front())
        return table.zetas.front();
    if (rho_percent >= lv.back())
        return table.zetas.back();
    const auto hi = static_cast<std::size_t>(std::upper_bound(lv.begin(), lv.end(), rho_percent) - lv.begin());
    const std::size_t lo = hi - 1;
    if (lv[lo] == rho_percent)
        return table.zetas[lo];
    const double w = (rho_percent - lv[lo]) / (lv[hi] - lv[lo]);
    return table.zetas[lo] + w * (table.zetas[hi] - table.zetas[lo]);
}

} // namespace perfbnn
