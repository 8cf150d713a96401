#pragma once

#include <algorithm>
#include <array>
#include <numbers>
#include <numeric>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "perfbnn/bnn.hpp"
#include "perfbnn/dataset.hpp"
#include "perfbnn/errors.hpp"
#include "perfbnn/hyperparams.hpp"
#include "perfbnn/metrics.hpp"
#include "perfbnn/random.hpp"
#include "perfbnn/special.hpp"

namespace perfbnn {

inline constexpr int initial_random_evaluations = 4;
inline constexpr int depth_bo_iterations = 12;
inline constexpr int final_bo_iterations = 8;
inline constexpr int acquisition_candidates = 2048;
inline constexpr int default_max_depth = 8;

struct SearchSpace {
    int option_count = 1;            // n after preprocessing; widths are n, 2n or 4n
    int max_depth = default_max_depth;

    friend bool operator==(const SearchSpace&, const SearchSpace&) = default;
};

// ---------------------------------------------------------------------------
// Encoding: [depth, epochs, log10 lr, neurons, log10 b], every coordinate in [0, 1].

inline constexpr int encoded_dims = 5;

namespace detail {

template <std::size_t N>
int index_of(const std::array<int, N>& choices, int value)
{
    for (std::size_t i = 0; i < N; ++i)
        if (choices[i] == value)
            return static_cast<int>(i);
    return -1;
}

inline int nearest_index(double coord, int count)
{
    return std::clamp(static_cast<int>(std::lround(coord * (count - 1))), 0, count - 1);
}

} // namespace detail

inline Eigen::VectorXd encode(const Hyperparams& hp, const SearchSpace& space)
{
    hp.validate(space.option_count);
    if (hp.depth > space.max_depth)
        throw UsageError("invalid hyperparameters: depth exceeds the search space maximum");
    Eigen::VectorXd v(encoded_dims);
    v[0] = space.max_depth > 1 ? static_cast<double>(hp.depth - 1) / (space.max_depth - 1) : 0.0;
    v[1] = detail::index_of(epoch_choices, hp.epochs) / 2.0;
    v[2] = (std::log10(hp.base_lr) - std::log10(min_learning_rate)) /
           (std::log10(max_learning_rate) - std::log10(min_learning_rate));
    v[3] = detail::index_of(width_multipliers, hp.neurons_per_layer / space.option_count) / 2.0;
    v[4] = (std::log10(hp.laplace_scale) - std::log10(min_laplace_scale)) /
           (std::log10(max_laplace_scale) - std::log10(min_laplace_scale));
    return v;
}

/// Inverse of encode; discrete coordinates snap to the nearest grid index.
inline Hyperparams decode(const Eigen::VectorXd& v, const SearchSpace& space)
{
    Hyperparams hp;
    hp.depth = 1 + detail::nearest_index(v[0], space.max_depth);
    hp.epochs = epoch_choices[static_cast<std::size_t>(detail::nearest_index(v[1], 3))];
    const double lr_log = std::log10(min_learning_rate) +
                          std::clamp(v[2], 0.0, 1.0) * (std::log10(max_learning_rate) - std::log10(min_learning_rate));
    hp.base_lr = std::clamp(std::pow(10.0, lr_log), min_learning_rate, max_learning_rate);
    hp.neurons_per_layer =
        width_multipliers[static_cast<std::size_t>(detail::nearest_index(v[3], 3))] * space.option_count;
    const double b_log = std::log10(min_laplace_scale) +
                         std::clamp(v[4], 0.0, 1.0) * (std::log10(max_laplace_scale) - std::log10(min_laplace_scale));
    hp.laplace_scale = std::clamp(std::pow(10.0, b_log), min_laplace_scale, max_laplace_scale);
    return hp;
}

inline Hyperparams random_hyperparams(int depth, const SearchSpace& space, Rng& rng)
{
    Hyperparams hp;
    hp.depth = depth;
    hp.epochs = epoch_choices[rng.below(3)];
    hp.base_lr = std::pow(10.0, rng.uniform(std::log10(min_learning_rate), std::log10(max_learning_rate)));
    hp.neurons_per_layer = width_multipliers[rng.below(3)] * space.option_count;
    hp.laplace_scale = std::pow(10.0, rng.uniform(std::log10(min_laplace_scale), std::log10(max_laplace_scale)));
    return hp;
}

// ---------------------------------------------------------------------------
// Gaussian-process surrogate

struct EvaluationRecord {
    Hyperparams hyperparams;
    double score = std::numeric_limits<double>::infinity(); // validation MAPE, +inf on failure
    std::uint64_t seed = 0;
    std::string phase = "depth"; // "depth" during layer growth, "final" afterwards
};

struct GpFitOptions {
    int restarts = 16;
    double noise_floor = 1e-6;   // bounds on noise variance, in standardized target units
    double noise_ceiling = 1.0;
    std::uint64_t seed = 0;
};

/// Zero-mean GP with a squared-exponential ARD kernel on standardized targets.
class GpSurrogate {
public:
    Eigen::MatrixXd inputs;       // m x d
    Eigen::VectorXd targets;      // m, original units
    double target_mean = 0.0;
    double target_scale = 1.0;
    Eigen::VectorXd length_scales;
    double signal_variance = 1.0; // standardized units
    double noise_variance = 1e-6; // standardized units
    double jitter = 0.0;

    /// Posterior mean and sd of the latent function, in target units.
    std::pair<double, double> predict(const Eigen::VectorXd& x) const
    {
        const Eigen::VectorXd k = kernel_column(x);
        const double mean = k.dot(alpha_);
        const Eigen::VectorXd v = chol_.matrixL().solve(k);
        const double var = std::max(signal_variance - v.squaredNorm(), 0.0);
        return {target_mean + target_scale * mean, target_scale * std::sqrt(var)};
    }

    double log_marginal_likelihood() const { return lml_; }

    /// Builds the factorization for the current hyperparameters; false if the kernel stays
    /// singular after jitter escalation.
    bool factorize()
    {
        const Eigen::Index m = inputs.rows();
        Eigen::MatrixXd kmat(m, m);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j <= i; ++j)
                kmat(i, j) = kmat(j, i) = kernel(inputs.row(i).transpose(), inputs.row(j).transpose());
        const Eigen::VectorXd ys = standardized();
        for (double jit = 1e-8; jit <= 1e-4 * 1.0000001; jit *= 10.0) {
            Eigen::MatrixXd kn = kmat;
            kn.diagonal().array() += noise_variance + jit;
            chol_.compute(kn);
            if (chol_.info() != Eigen::Success)
                continue;
            const Eigen::MatrixXd l = chol_.matrixL();
            if (!(l.diagonal().array() > 0.0).all())
                continue;
            jitter = jit;
            alpha_ = chol_.solve(ys);
            lml_ = -0.5 * ys.dot(alpha_) - l.diagonal().array().log().sum() -
                   0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi);
            return std::isfinite(lml_);
        }
        return false;
    }

private:
    double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const
    {
        return signal_variance * std::exp(-0.5 * ((a - b).array() / length_scales.array()).square().sum());
    }

    Eigen::VectorXd kernel_column(const Eigen::VectorXd& x) const
    {
        Eigen::VectorXd k(inputs.rows());
        for (Eigen::Index i = 0; i < inputs.rows(); ++i)
            k[i] = kernel(inputs.row(i).transpose(), x);
        return k;
    }

    Eigen::VectorXd standardized() const { return (targets.array() - target_mean) / target_scale; }

    Eigen::LLT<Eigen::MatrixXd> chol_;
    Eigen::VectorXd alpha_;
    double lml_ = -std::numeric_limits<double>::infinity();
};

/// Fits kernel hyperparameters by maximizing the log marginal likelihood with a multi-start
/// coordinate search in log space.
inline GpSurrogate gp_fit(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                          const GpFitOptions& options = {})
{
    if (inputs.rows() < 1 || inputs.rows() != targets.size())
        throw DataError(DataErrorKind::too_small, "GP fit needs at least one input/target pair");
    const Eigen::Index d = inputs.cols();

    GpSurrogate gp;
    gp.inputs = inputs;
    gp.targets = targets;
    gp.target_mean = targets.mean();
    if (targets.size() > 1) {
        const double sd = std::sqrt((targets.array() - gp.target_mean).square().sum() /
                                    static_cast<double>(targets.size() - 1));
        gp.target_scale = sd > 0.0 ? sd : 1.0;
    }

    // theta = [log length scales..., log signal variance, log noise variance]
    const Eigen::Index p = d + 2;
    Eigen::VectorXd lo(p), hi(p);
    lo.head(d).setConstant(std::log(0.01));
    hi.head(d).setConstant(std::log(10.0));
    lo[d] = std::log(0.01);
    hi[d] = std::log(10.0);
    lo[d + 1] = std::log(options.noise_floor);
    hi[d + 1] = std::log(std::max(options.noise_ceiling, options.noise_floor));

    auto apply = [&](GpSurrogate& g, const Eigen::VectorXd& theta) {
        g.length_scales = theta.head(d).array().exp();
        g.signal_variance = std::exp(theta[d]);
        g.noise_variance = std::exp(theta[d + 1]);
    };
    auto score = [&](const Eigen::VectorXd& theta) {
        GpSurrogate g = gp;
        apply(g, theta);
        return g.factorize() ? g.log_marginal_likelihood() : -std::numeric_limits<double>::infinity();
    };

    Rng rng(options.seed);
    Eigen::VectorXd best_theta(p);
    double best = -std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < std::max(options.restarts, 1); ++restart) {
        Eigen::VectorXd theta(p);
        if (restart == 0) {
            theta.head(d).setConstant(std::log(0.5));
            theta[d] = 0.0;
            theta[d + 1] = std::clamp(std::log(1e-2), lo[d + 1], hi[d + 1]);
        } else {
            for (Eigen::Index k = 0; k < p; ++k)
                theta[k] = rng.uniform(lo[k], hi[k]);
        }
        double current = score(theta);
        double step = 1.0;
        for (int iter = 0; iter < 400 && step > 1e-3; ++iter) {
            bool improved = false;
            for (Eigen::Index k = 0; k < p; ++k) {
                for (double dir : {1.0, -1.0}) {
                    Eigen::VectorXd trial = theta;
                    trial[k] = std::clamp(theta[k] + dir * step, lo[k], hi[k]);
                    if (trial[k] == theta[k])
                        continue;
                    const double s = score(trial);
                    if (s > current) {
                        current = s;
                        theta = trial;
                        improved = true;
                        break;
                    }
                }
            }
            if (!improved)
                step *= 0.5;
        }
        if (current > best) {
            best = current;
            best_theta = theta;
        }
    }
    if (!std::isfinite(best))
        throw NumericalError("GP kernel matrix is singular even with maximum jitter");
    apply(gp, best_theta);
    if (!gp.factorize())
        throw NumericalError("GP kernel matrix is singular even with maximum jitter");
    return gp;
}

/// Surrogate over encoded hyperparameters. Failed (+inf) scores take the worst finite score.
inline GpSurrogate gp_fit(const std::vector<EvaluationRecord>& records, const SearchSpace& space,
                          const GpFitOptions& options = {})
{
    if (records.empty())
        throw DataError(DataErrorKind::too_small, "GP fit needs at least one evaluation record");
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& r : records)
        if (std::isfinite(r.score))
            worst = std::max(worst, r.score);
    if (!std::isfinite(worst))
        worst = 0.0;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(records.size()), encoded_dims);
    Eigen::VectorXd y(static_cast<Eigen::Index>(records.size()));
    for (std::size_t i = 0; i < records.size(); ++i) {
        x.row(static_cast<Eigen::Index>(i)) = encode(records[i].hyperparams, space).transpose();
        y[static_cast<Eigen::Index>(i)] = std::isfinite(records[i].score) ? records[i].score : worst;
    }
    return gp_fit(x, y, options);
}

/// Expected improvement below `best_so_far` (minimization).
inline double expected_improvement(double mean, double sd, double best_so_far)
{
    const double gain = best_so_far - mean;
    if (sd <= 0.0)
        return std::max(gain, 0.0);
    const double u = gain / sd;
    return std::max(gain * normal_cdf(u) + sd * normal_pdf(u), 0.0);
}

/// Maximizes EI over seeded random candidates at `depth` plus one-step neighbours of the
/// incumbent. Falls back to a random candidate when no candidate has positive EI.
inline Hyperparams propose_next(const GpSurrogate& gp, const SearchSpace& space, int depth, double best_so_far,
                                const std::optional<Hyperparams>& incumbent, Rng& rng)
{
    std::vector<Hyperparams> candidates;
    candidates.reserve(acquisition_candidates + 8);
    for (int c = 0; c < acquisition_candidates; ++c)
        candidates.push_back(random_hyperparams(depth, space, rng));
    if (incumbent && incumbent->depth == depth) {
        const Eigen::VectorXd base = encode(*incumbent, space);
        for (int dim = 1; dim < encoded_dims; ++dim) {
            const double step = (dim == 1 || dim == 3) ? 0.5 : 0.05;
            for (double dir : {-1.0, 1.0}) {
                Eigen::VectorXd v = base;
                v[dim] = std::clamp(v[dim] + dir * step, 0.0, 1.0);
                candidates.push_back(decode(v, space));
            }
        }
    }
    double best_ei = 0.0;
    std::optional<std::size_t> best_idx;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const auto [m, s] = gp.predict(encode(candidates[c], space));
        const double ei = expected_improvement(m, s, best_so_far);
        if (ei > best_ei) {
            best_ei = ei;
            best_idx = c;
        }
    }
    if (!best_idx)
        return random_hyperparams(depth, space, rng);
    return candidates[*best_idx];
}

// ---------------------------------------------------------------------------
// Tuning loops

using Objective = std::function<double(const Hyperparams&, std::uint64_t seed)>;

namespace detail {

inline EvaluationRecord evaluate(const Objective& objective, const Hyperparams& hp, std::uint64_t seed,
                                 const std::string& phase)
{
    EvaluationRecord rec{hp, std::numeric_limits<double>::infinity(), seed, phase};
    try {
        const double s = objective(hp, seed);
        if (std::isfinite(s) && s >= 0.0)
            rec.score = s;
    } catch (const NumericalError&) {
        // recorded as a failed candidate
    }
    return rec;
}

inline double best_score_at(const std::vector<EvaluationRecord>& records, int depth)
{
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : records)
        if (r.hyperparams.depth == depth)
            best = std::min(best, r.score);
    return best;
}

inline std::optional<Hyperparams> incumbent_at(const std::vector<EvaluationRecord>& records, int depth)
{
    std::optional<Hyperparams> out;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& r : records)
        if (r.hyperparams.depth == depth && r.score < best) {
            best = r.score;
            out = r.hyperparams;
        }
    return out;
}

inline GpFitOptions gp_options(std::uint64_t seed)
{
    GpFitOptions o;
    o.seed = seed;
    return o;
}

} // namespace detail

/// One BO run at fixed depth: `initial` random evaluations then `iterations` EI proposals.
/// Records are appended to `records` in evaluation order.
inline void run_depth_bo(const Objective& objective, const SearchSpace& space, int depth, std::uint64_t seed,
                         std::vector<EvaluationRecord>& records, int initial = initial_random_evaluations,
                         int iterations = depth_bo_iterations)
{
    Rng rng(split_seed(seed, 0));
    std::vector<EvaluationRecord> local;
    std::uint64_t counter = 0;
    for (int i = 0; i < initial; ++i)
        local.push_back(detail::evaluate(objective, random_hyperparams(depth, space, rng),
                                         split_seed(seed, 100 + counter++), "depth"));
    for (int it = 0; it < iterations; ++it) {
        const GpSurrogate gp = gp_fit(local, space, detail::gp_options(split_seed(seed, 200 + counter)));
        const Hyperparams next = propose_next(gp, space, depth, detail::best_score_at(local, depth),
                                              detail::incumbent_at(local, depth), rng);
        local.push_back(detail::evaluate(objective, next, split_seed(seed, 100 + counter++), "depth"));
    }
    records.insert(records.end(), local.begin(), local.end());
}

struct DepthSearch {
    int best_depth = 1;
    std::vector<double> depth_best; // best score at depth 1, 2, ...
    std::vector<EvaluationRecord> records;
};

/// Layer growth: tune depth 1, 2, ... and stop at the first depth whose best score is worse
/// than the previous depth's best (or at space.max_depth). Picks the best depth seen.
inline DepthSearch tune_depth(const Objective& objective, const SearchSpace& space, std::uint64_t seed)
{
    DepthSearch out;
    for (int depth = 1; depth <= space.max_depth; ++depth) {
        run_depth_bo(objective, space, depth, split_seed(seed, static_cast<std::uint64_t>(depth)), out.records);
        const double best = detail::best_score_at(out.records, depth);
        out.depth_best.push_back(best);
        if (depth > 1 && best > out.depth_best[out.depth_best.size() - 2])
            break;
    }
    const auto it = std::min_element(out.depth_best.begin(), out.depth_best.end());
    out.best_depth = 1 + static_cast<int>(it - out.depth_best.begin());
    return out;
}

struct FinalTune {
    Hyperparams best;
    std::vector<EvaluationRecord> records; // prior records followed by the new ones
};

/// Warm-started BO at the chosen depth: the GP sees every prior record (depth is an input
/// dimension) while proposals stay at `depth`.
inline FinalTune final_tune(const Objective& objective, const SearchSpace& space, int depth,
                            const std::vector<EvaluationRecord>& prior_records, std::uint64_t seed,
                            int iterations = final_bo_iterations)
{
    if (prior_records.empty())
        throw DataError(DataErrorKind::too_small, "final tuning needs prior evaluation records");
    FinalTune out{{}, prior_records};
    Rng rng(split_seed(seed, 0));
    for (int it = 0; it < iterations; ++it) {
        const GpSurrogate gp =
            gp_fit(out.records, space, detail::gp_options(split_seed(seed, 200 + static_cast<std::uint64_t>(it))));
        double best = detail::best_score_at(out.records, depth);
        if (!std::isfinite(best))
            best = gp.targets.minCoeff();
        const Hyperparams next = propose_next(gp, space, depth, best, detail::incumbent_at(out.records, depth), rng);
        out.records.push_back(
            detail::evaluate(objective, next, split_seed(seed, 100 + static_cast<std::uint64_t>(it)), "final"));
    }
    const auto inc = detail::incumbent_at(out.records, depth);
    if (!inc)
        throw NumericalError("every evaluation at the chosen depth failed");
    out.best = *inc;
    return out;
}

// ---------------------------------------------------------------------------
// Dataset objective

/// Validation MAPE of a single BNN: a seeded 2/3 train / 1/3 validation split of the
/// (already preprocessed) training data, normalizer fitted on the 2/3 part.
class ValidationObjective {
public:
    ValidationObjective(const PerformanceDataset& data, std::uint64_t seed,
                        int predictive_samples = default_predictive_samples)
        : samples_(predictive_samples)
    {
        const std::size_t n = data.size();
        const std::size_t n_train = (2 * n + 2) / 3;
        if (n < 3 || n_train >= n)
            throw DataError(DataErrorKind::too_small, "dataset with " + std::to_string(n) +
                                                          " rows is too small for the tuning split");
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng(seed);
        rng.shuffle(idx);
        const std::vector<std::size_t> tr(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        const std::vector<std::size_t> va(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
        auto [train_norm, nz] = normalize_performance(data.select_rows(tr));
        train_ = std::move(train_norm);
        normalizer_ = nz;
        validation_ = data.select_rows(va);
    }

    double operator()(const Hyperparams& hp, std::uint64_t seed) const
    {
        const BnnModel model = train_bnn(train_, hp, seed);
        Rng rng(split_seed(seed, 1));
        const PredictiveBatch pb = predict_batch(model, validation_.rows, samples_, rng);
        std::vector<double> pred(validation_.size());
        for (std::size_t i = 0; i < pred.size(); ++i)
            pred[i] = normalizer_.invert(pb.mean[static_cast<Eigen::Index>(i)]);
        return mape(pred, std::span<const double>(validation_.performance.data(), validation_.size()));
    }

private:
    PerformanceDataset train_;
    PerformanceDataset validation_;
    Normalizer normalizer_;
    int samples_;
};

struct TuningTrace {
    std::uint64_t seed = 0;
    SearchSpace space;
    std::vector<EvaluationRecord> records;
    std::vector<double> depth_best;
    int chosen_depth = 1;
    Hyperparams final_hyperparams;
};

/// Layer growth followed by warm-started final tuning; `data` must already be preprocessed.
inline TuningTrace tune(const Objective& objective, const SearchSpace& space, std::uint64_t seed)
{
    TuningTrace trace;
    trace.seed = seed;
    trace.space = space;
    DepthSearch ds = tune_depth(objective, space, split_seed(seed, 1));
    trace.depth_best = ds.depth_best;
    trace.chosen_depth = ds.best_depth;
    FinalTune ft = final_tune(objective, space, ds.best_depth, ds.records, split_seed(seed, 2));
    trace.records = std::move(ft.records);
    trace.final_hyperparams = ft.best;
    return trace;
}

inline TuningTrace tune(const PerformanceDataset& data, std::uint64_t seed,
                        int predictive_samples = default_predictive_samples, int max_depth = default_max_depth)
{
    const ValidationObjective objective(data, split_seed(seed, 0), predictive_samples);
    const SearchSpace space{static_cast<int>(data.schema.size()), max_depth};
    return tune([&](const Hyperparams& hp, std::uint64_t s) { return objective(hp, s); }, space, seed);
}

} // namespace perfbnn
