#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "perfbnn/bnn.hpp"
#include "perfbnn/calibration.hpp"
#include "perfbnn/dataset.hpp"
#include "perfbnn/hyperparams.hpp"
#include "perfbnn/random.hpp"

namespace perfbnn {

inline constexpr int default_folds = 3;

struct EnsembleConfig {
    int folds = default_folds;
    int predictive_samples = default_predictive_samples;
    std::vector<double> levels = default_levels();
    int grid_size = default_grid_size;
    double collinear_tolerance = default_collinear_tolerance;

    friend bool operator==(const EnsembleConfig&, const EnsembleConfig&) = default;
};

struct EnsembleMember {
    BnnModel model;
    CalibrationTable calibration;
    std::vector<std::size_t> train_indices; // rows of the training set this member fitted
    std::vector<std::size_t> eval_indices;  // rows its calibration table was fitted on
    std::uint64_t predict_seed = 0;
};

/// K calibrated BNNs plus everything needed to map raw configurations to predictions.
struct EnsembleModel {
    OptionSchema schema; // as loaded, before collinearity removal
    std::string performance_column = "performance";
    PreprocessReport preprocess;
    Normalizer normalizer;
    Hyperparams hyperparams;
    EnsembleConfig config;
    std::uint64_t seed = 0;
    std::vector<EnsembleMember> members;

    std::size_t size() const noexcept { return members.size(); }
};

/// Trains member k on fold k and calibrates it on the remaining K-1 folds.
inline EnsembleModel train_ensemble(const PerformanceDataset& train, const Hyperparams& hp,
                                    const EnsembleConfig& config, std::uint64_t seed,
                                    const std::string& performance_column = "performance")
{
    const auto k_folds = static_cast<std::size_t>(config.folds);
    if (config.folds < 2)
        throw UsageError("ensemble needs at least 2 folds");
    if (train.size() < 3 * k_folds)
        throw DataError(DataErrorKind::too_small, "training set has " + std::to_string(train.size()) +
                                                      " rows; an ensemble of " + std::to_string(k_folds) +
                                                      " members needs at least " + std::to_string(3 * k_folds));

    EnsembleModel em;
    em.schema = train.schema;
    em.performance_column = performance_column;
    em.hyperparams = hp;
    em.config = config;
    em.seed = seed;

    auto [reduced, report] = remove_collinear(train, config.collinear_tolerance);
    em.preprocess = std::move(report);
    hp.validate(static_cast<int>(em.preprocess.retained_count));
    auto [normalized, nz] = normalize_performance(reduced);
    em.normalizer = nz;

    const auto folds = kfold_split(train.size(), k_folds, split_seed(seed, 0));
    for (std::size_t k = 0; k < k_folds; ++k) {
        EnsembleMember m;
        m.train_indices = folds[k];
        for (std::size_t f = 0; f < k_folds; ++f)
            if (f != k)
                m.eval_indices.insert(m.eval_indices.end(), folds[f].begin(), folds[f].end());
        m.model = train_bnn(normalized.select_rows(m.train_indices), hp, split_seed(seed, 1 + k));
        m.predict_seed = split_seed(seed, 1000 + k);

        const PerformanceDataset eval = normalized.select_rows(m.eval_indices);
        Rng rng(m.predict_seed);
        const PredictiveBatch pb = predict_batch(m.model, eval.rows, config.predictive_samples, rng);
        const Eigen::VectorXd sd = pb.sd_total();
        m.calibration = calibrate_member(std::span<const double>(pb.mean.data(), static_cast<std::size_t>(pb.mean.size())),
                                         std::span<const double>(sd.data(), static_cast<std::size_t>(sd.size())),
                                         std::span<const double>(eval.performance.data(), eval.size()),
                                         config.levels, config.grid_size);
        em.members.push_back(std::move(m));
    }
    return em;
}

/// Per-member predictive means and total sds (normalized units) for a batch of configurations.
struct EnsembleForecast {
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::VectorXd> sds;
    std::vector<CalibrationTable> tables;
    Normalizer normalizer;

    Eigen::Index rows() const { return means.empty() ? 0 : means.front().size(); }

    /// Mean of member means, in original units.
    double prediction(Eigen::Index i) const
    {
        double sum = 0.0;
        for (const auto& m : means)
            sum += m[i];
        return normalizer.invert(sum / static_cast<double>(means.size()));
    }

    /// Average of member interval endpoints in original units. Each member's interval is
    /// mean +/- zeta * z(rho) * sd with zeta from its table, or 1 when `calibrated` is false.
    std::pair<double, double> interval(Eigen::Index i, double rho_percent, bool calibrated = true) const
    {
        const double z = z_score(rho_percent);
        double lo = 0.0;
        double hi = 0.0;
        for (std::size_t k = 0; k < means.size(); ++k) {
            const double zeta = calibrated ? zeta_at(tables[k], rho_percent) : 1.0;
            const double half = zeta * z * sds[k][i];
            lo += means[k][i] - half;
            hi += means[k][i] + half;
        }
        const double n = static_cast<double>(means.size());
        return denormalize_interval(lo / n, hi / n, normalizer);
    }
};

/// Keeps the columns retained by preprocessing; `raw` must follow the original schema.
inline Eigen::MatrixXd model_inputs(const EnsembleModel& em, const Eigen::MatrixXd& raw)
{
    if (static_cast<std::size_t>(raw.cols()) != em.schema.size())
        throw DataError(DataErrorKind::schema_mismatch, "configuration has " + std::to_string(raw.cols()) +
                                                            " values, model schema has " +
                                                            std::to_string(em.schema.size()) + " options");
    Eigen::MatrixXd out(raw.rows(), static_cast<Eigen::Index>(em.preprocess.retained_columns.size()));
    for (std::size_t k = 0; k < em.preprocess.retained_columns.size(); ++k)
        out.col(static_cast<Eigen::Index>(k)) = raw.col(static_cast<Eigen::Index>(em.preprocess.retained_columns[k]));
    return out;
}

/// Deterministic in (model, row): each member always replays its own prediction seed.
inline EnsembleForecast forecast(const EnsembleModel& em, const Eigen::MatrixXd& raw_rows)
{
    const Eigen::MatrixXd inputs = model_inputs(em, raw_rows);
    EnsembleForecast fc;
    fc.normalizer = em.normalizer;
    for (const auto& m : em.members) {
        Rng rng(m.predict_seed);
        const PredictiveBatch pb = predict_batch(m.model, inputs, em.config.predictive_samples, rng);
        fc.means.push_back(pb.mean);
        fc.sds.push_back(pb.sd_total());
        fc.tables.push_back(m.calibration);
    }
    return fc;
}

inline double ensemble_predict(const EnsembleModel& em, std::span<const double> x)
{
    const Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return forecast(em, row).prediction(0);
}

inline std::pair<double, double> ensemble_interval(const EnsembleModel& em, std::span<const double> x,
                                                   double rho_percent, bool calibrated = true)
{
    if (!(rho_percent > 0.0 && rho_percent < 100.0))
        throw DataError(DataErrorKind::invalid_argument, "confidence level must lie in (0, 100)");
    const Eigen::MatrixXd row = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return forecast(em, row).interval(0, rho_percent, calibrated);
}

} // namespace perfbnn
