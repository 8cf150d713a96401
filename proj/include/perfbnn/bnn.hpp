#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "perfbnn/dataset.hpp"
#include "perfbnn/errors.hpp"
#include "perfbnn/hyperparams.hpp"
#include "perfbnn/net.hpp"
#include "perfbnn/random.hpp"
#include "perfbnn/special.hpp"

namespace perfbnn {

inline constexpr int default_predictive_samples = 300;
inline constexpr double initial_posterior_sd = 0.05;
// Starting noise scale in normalized output units (1% of the range).
inline constexpr double initial_noise_sd = 1.0;

/// Mean-field Gaussian over the flat parameter vector; sd = softplus(raw_scale).
struct VariationalPosterior {
    Eigen::VectorXd mean;
    Eigen::VectorXd raw_scale;

    Eigen::VectorXd sd() const { return raw_scale.unaryExpr([](double r) { return softplus(r); }); }
};

/// Laplace(0, b) on first-layer weights, N(0, s0^2) on every other weight. Biases are point
/// estimates without a prior term.
struct PriorSpec {
    double laplace_scale = 1e-2;
    double gaussian_sd = 1.0;

    friend bool operator==(const PriorSpec&, const PriorSpec&) = default;
};

struct TrainingMeta {
    int epochs = 0;
    double base_lr = 0.0;
    std::uint64_t seed = 0;

    friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct BnnModel {
    NetworkTopology topology;
    VariationalPosterior posterior;
    PriorSpec prior;
    TrainingMeta meta;
};

enum class ParameterRole : unsigned char { laplace, gaussian, point };

/// Prior role of every entry of the flat parameter vector.
inline std::vector<ParameterRole> parameter_roles(const ParameterLayout& layout)
{
    std::vector<ParameterRole> roles(static_cast<std::size_t>(layout.size), ParameterRole::point);
    for (std::size_t l = 0; l < layout.layers.size(); ++l) {
        const auto& s = layout.layers[l];
        const auto role = l == 0 ? ParameterRole::laplace : ParameterRole::gaussian;
        for (Eigen::Index k = 0; k < s.fan_in * s.fan_out; ++k)
            roles[static_cast<std::size_t>(s.weight_offset + k)] = role;
    }
    return roles;
}

/// Posterior sd per parameter, zero for point-estimated entries.
inline Eigen::VectorXd effective_sd(const VariationalPosterior& q, const std::vector<ParameterRole>& roles)
{
    Eigen::VectorXd sd = q.sd();
    for (std::size_t k = 0; k < roles.size(); ++k)
        if (roles[k] == ParameterRole::point)
            sd[static_cast<Eigen::Index>(k)] = 0.0;
    return sd;
}

/// Reparameterized weight draw: mean + sd * eps with eps ~ N(0, I).
inline ParameterVector sample_weights(const Eigen::VectorXd& mean, const Eigen::VectorXd& sd, Rng& rng)
{
    ParameterVector w(mean.size());
    for (Eigen::Index k = 0; k < mean.size(); ++k)
        w[k] = mean[k] + sd[k] * rng.normal();
    return w;
}

inline ParameterVector sample_weights(const BnnModel& model, Rng& rng)
{
    const ParameterLayout layout(model.topology);
    return sample_weights(model.posterior.mean, effective_sd(model.posterior, parameter_roles(layout)), rng);
}

/// Sum of KL(N(mu_k, sd_k^2) || N(0, prior_sd^2)) over the slice.
inline double kl_gaussian(std::span<const double> mean, std::span<const double> sd, double prior_sd)
{
    if (!(prior_sd > 0.0))
        throw DataError(DataErrorKind::invalid_argument, "Gaussian prior sd must be positive");
    double kl = 0.0;
    const double s2 = prior_sd * prior_sd;
    for (std::size_t k = 0; k < mean.size(); ++k)
        kl += std::log(prior_sd / sd[k]) + (sd[k] * sd[k] + mean[k] * mean[k]) / (2.0 * s2) - 0.5;
    return kl;
}

inline double laplace_log_density(double w, double scale) noexcept
{
    return -std::log(2.0 * scale) - std::abs(w) / scale;
}

inline double gaussian_log_density(double w, double mean, double sd) noexcept
{
    const double z = (w - mean) / sd;
    return -0.5 * z * z - std::log(sd) - 0.91893853320467274178;
}

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Monte-Carlo estimate of sum_k KL(N(mu_k, sd_k^2) || Laplace(0, b)) from `samples` joint draws.
inline McEstimate kl_laplace_mc(std::span<const double> mean, std::span<const double> sd, double scale,
                                long samples, Rng& rng)
{
    if (!(scale > 0.0))
        throw DataError(DataErrorKind::invalid_argument, "Laplace scale must be positive");
    if (samples < 1)
        throw DataError(DataErrorKind::invalid_argument, "Monte-Carlo sample count must be at least 1");
    double sum = 0.0;
    double sum_sq = 0.0;
    for (long s = 0; s < samples; ++s) {
        double draw = 0.0;
        for (std::size_t k = 0; k < mean.size(); ++k) {
            const double w = mean[k] + sd[k] * rng.normal();
            draw += gaussian_log_density(w, mean[k], sd[k]) - laplace_log_density(w, scale);
        }
        sum += draw;
        sum_sq += draw * draw;
    }
    const double n = static_cast<double>(samples);
    const double m = sum / n;
    const double var = samples > 1 ? std::max(0.0, (sum_sq - n * m * m) / (n - 1.0)) : 0.0;
    return {m, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------
// ELBO

struct ElboEvaluation {
    double loss = 0.0; // nll + kl_weight * kl
    double nll = 0.0;  // summed over batch rows, averaged over draws
    double kl = 0.0;   // Gaussian part closed form, Laplace part from the same draws
    Eigen::VectorXd grad_mean;
    Eigen::VectorXd grad_raw_scale;
};

/// ELBO-style loss and its reparameterization gradient for fixed standard-normal draws
/// (one vector per draw, each of the parameter vector's length).
inline ElboEvaluation evaluate_elbo(const BnnModel& model, const Eigen::MatrixXd& inputs,
                                    const Eigen::VectorXd& targets, const std::vector<Eigen::VectorXd>& draws,
                                    double kl_weight)
{
    if (inputs.rows() == 0)
        throw DataError(DataErrorKind::invalid_argument, "ELBO requires a non-empty batch");
    if (draws.empty())
        throw DataError(DataErrorKind::invalid_argument, "ELBO requires at least one weight draw");
    const ParameterLayout layout(model.topology);
    const auto roles = parameter_roles(layout);
    const Eigen::VectorXd& mu = model.posterior.mean;
    const Eigen::VectorXd& raw = model.posterior.raw_scale;
    if (mu.size() != layout.size || raw.size() != layout.size)
        throw DataError(DataErrorKind::schema_mismatch, "posterior does not match topology");

    const double inv_s = 1.0 / static_cast<double>(draws.size());
    const double b = model.prior.laplace_scale;
    const double s0 = model.prior.gaussian_sd;

    ElboEvaluation ev;
    ev.grad_mean = Eigen::VectorXd::Zero(layout.size);
    ev.grad_raw_scale = Eigen::VectorXd::Zero(layout.size);

    for (const auto& eps : draws) {
        ParameterVector w = mu;
        for (Eigen::Index k = 0; k < layout.size; ++k)
            if (roles[static_cast<std::size_t>(k)] != ParameterRole::point)
                w[k] += softplus(raw[k]) * eps[k];

        const LossGradient data = gradient(layout, w, inputs, targets, LossKind::gaussian_nll);
        ev.nll += data.loss * inv_s;

        for (Eigen::Index k = 0; k < layout.size; ++k) {
            const double g = data.gradient[k] * inv_s;
            ev.grad_mean[k] += g;
            const auto role = roles[static_cast<std::size_t>(k)];
            if (role == ParameterRole::point)
                continue;
            const double sd = softplus(raw[k]);
            const double dsd = sigmoid(raw[k]);
            ev.grad_raw_scale[k] += g * eps[k] * dsd;
            if (role == ParameterRole::laplace) {
                // log q(w) - log p(w) with w = mu + sd * eps; d/dmu log q = 0, d/dsd log q = -1/sd
                const double sign = w[k] > 0.0 ? 1.0 : (w[k] < 0.0 ? -1.0 : 0.0);
                ev.kl += (gaussian_log_density(w[k], mu[k], sd) - laplace_log_density(w[k], b)) * inv_s;
                ev.grad_mean[k] += kl_weight * sign / b * inv_s;
                ev.grad_raw_scale[k] += kl_weight * (-1.0 / sd + sign * eps[k] / b) * dsd * inv_s;
            }
        }
    }

    for (Eigen::Index k = 0; k < layout.size; ++k) {
        if (roles[static_cast<std::size_t>(k)] != ParameterRole::gaussian)
            continue;
        const double sd = softplus(raw[k]);
        ev.kl += std::log(s0 / sd) + (sd * sd + mu[k] * mu[k]) / (2.0 * s0 * s0) - 0.5;
        ev.grad_mean[k] += kl_weight * mu[k] / (s0 * s0);
        ev.grad_raw_scale[k] += kl_weight * (-1.0 / sd + sd / (s0 * s0)) * sigmoid(raw[k]);
    }

    ev.loss = ev.nll + kl_weight * ev.kl;
    if (!std::isfinite(ev.loss))
        throw NumericalError("non-finite ELBO (nll=" + std::to_string(ev.nll) + ", kl=" + std::to_string(ev.kl) + ")");
    return ev;
}

inline ElboEvaluation evaluate_elbo(const BnnModel& model, const Eigen::MatrixXd& inputs,
                                    const Eigen::VectorXd& targets, int train_samples, double kl_weight, Rng& rng)
{
    if (train_samples < 1)
        throw DataError(DataErrorKind::invalid_argument, "training sample count must be at least 1");
    const Eigen::Index p = model.posterior.mean.size();
    std::vector<Eigen::VectorXd> draws(static_cast<std::size_t>(train_samples), Eigen::VectorXd(p));
    for (auto& d : draws)
        for (Eigen::Index k = 0; k < p; ++k)
            d[k] = rng.normal();
    return evaluate_elbo(model, inputs, targets, draws, kl_weight);
}

inline double elbo_loss(const BnnModel& model, const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                        int train_samples, double kl_weight, Rng& rng)
{
    return evaluate_elbo(model, inputs, targets, train_samples, kl_weight, rng).loss;
}

// ---------------------------------------------------------------------------
// Training

/// Freshly initialized posterior: Glorot-uniform weight means, zero biases except the mean head
/// (target mean) and the noise head (initial_noise_sd), initial posterior sd 0.05.
inline BnnModel init_bnn(const NetworkTopology& topology, const PriorSpec& prior, const Eigen::VectorXd& targets,
                         Rng& rng)
{
    const ParameterLayout layout(topology);
    BnnModel model{topology, {Eigen::VectorXd::Zero(layout.size),
                              Eigen::VectorXd::Constant(layout.size, inverse_softplus(initial_posterior_sd))},
                   prior, {}};
    for (const auto& s : layout.layers) {
        const double limit = std::sqrt(6.0 / static_cast<double>(s.fan_in + s.fan_out));
        for (Eigen::Index k = 0; k < s.fan_in * s.fan_out; ++k)
            model.posterior.mean[s.weight_offset + k] = rng.uniform(-limit, limit);
    }
    const auto& head = layout.head();
    model.posterior.mean[head.bias_offset] = targets.mean();
    model.posterior.mean[head.bias_offset + 1] = inverse_softplus(initial_noise_sd);
    return model;
}

inline NetworkTopology topology_for(int input_dim, const Hyperparams& hp)
{
    return NetworkTopology{input_dim, std::vector<int>(static_cast<std::size_t>(hp.depth), hp.neurons_per_layer)};
}

/// Full-batch Adam on the ELBO for hp.epochs epochs (one step per epoch, one weight draw per
/// step, NLL summed over rows plus KL weighted by 1/N). `subset` must carry normalized
/// performance values.
inline BnnModel train_bnn(const PerformanceDataset& subset, const Hyperparams& hp, std::uint64_t seed,
                          std::vector<double>* loss_trace = nullptr)
{
    if (subset.size() == 0)
        throw DataError(DataErrorKind::too_small, "cannot train on an empty subset");
    const int n_inputs = static_cast<int>(subset.rows.cols());
    if (hp.depth < 1 || hp.neurons_per_layer < 1 || hp.epochs < 1 || !(hp.base_lr > 0.0) || !(hp.laplace_scale > 0.0))
        throw UsageError("invalid hyperparameters for training");

    Rng rng(seed);
    BnnModel model = init_bnn(topology_for(n_inputs, hp), PriorSpec{hp.laplace_scale, 1.0}, subset.performance, rng);
    model.meta = {hp.epochs, hp.base_lr, seed};

    const Eigen::Index p = model.posterior.mean.size();
    const double kl_weight = 1.0 / static_cast<double>(subset.size());
    AdamState adam(2 * p, hp.base_lr);
    Eigen::VectorXd packed(2 * p);
    Eigen::VectorXd grads(2 * p);
    if (loss_trace)
        loss_trace->reserve(static_cast<std::size_t>(hp.epochs));

    for (int epoch = 0; epoch < hp.epochs; ++epoch) {
        ElboEvaluation ev;
        try {
            ev = evaluate_elbo(model, subset.rows, subset.performance, 1, kl_weight, rng);
        } catch (const NumericalError& e) {
            throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (loss_trace)
            loss_trace->push_back(ev.loss);
        packed << model.posterior.mean, model.posterior.raw_scale;
        grads << ev.grad_mean, ev.grad_raw_scale;
        adam_step(adam, packed, grads);
        if (!packed.allFinite())
            throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": non-finite parameters");
        model.posterior.mean = packed.head(p);
        model.posterior.raw_scale = packed.tail(p);
    }
    return model;
}

// ---------------------------------------------------------------------------
// Prediction

/// Draws of (f, sigma) for one configuration with the derived mean and variance split.
struct PredictiveDistribution {
    std::vector<double> f;
    std::vector<double> sigma;
    double mean = 0.0;
    double epistemic_var = 0.0; // sample variance of f
    double aleatoric_var = 0.0; // mean of sigma^2

    double sd_total() const noexcept { return std::sqrt(epistemic_var + aleatoric_var); }
};

/// Predictive draws for every row of `inputs`: S x N matrices of f and sigma plus summaries.
struct PredictiveBatch {
    Eigen::MatrixXd f;
    Eigen::MatrixXd sigma;
    Eigen::VectorXd mean;
    Eigen::VectorXd epistemic_var;
    Eigen::VectorXd aleatoric_var;

    Eigen::VectorXd sd_total() const { return (epistemic_var + aleatoric_var).cwiseSqrt(); }

    PredictiveDistribution at(Eigen::Index i) const
    {
        PredictiveDistribution pd;
        pd.f.assign(f.col(i).data(), f.col(i).data() + f.rows());
        pd.sigma.assign(sigma.col(i).data(), sigma.col(i).data() + sigma.rows());
        pd.mean = mean[i];
        pd.epistemic_var = epistemic_var[i];
        pd.aleatoric_var = aleatoric_var[i];
        return pd;
    }
};

/// One weight draw per sample shared across all rows, so a row's prediction does not depend on
/// which other rows are in the batch.
inline PredictiveBatch predict_batch(const BnnModel& model, const Eigen::MatrixXd& inputs, int samples, Rng& rng)
{
    if (samples < 2)
        throw DataError(DataErrorKind::invalid_argument, "predictive sample count must be at least 2");
    const ParameterLayout layout(model.topology);
    const Eigen::VectorXd sd = effective_sd(model.posterior, parameter_roles(layout));
    const Eigen::Index n = inputs.rows();
    PredictiveBatch pb{Eigen::MatrixXd(samples, n), Eigen::MatrixXd(samples, n), {}, {}, {}};
    for (int s = 0; s < samples; ++s) {
        const ParameterVector w = sample_weights(model.posterior.mean, sd, rng);
        const Eigen::MatrixXd out = forward_batch(layout, w, inputs);
        pb.f.row(s) = out.col(0).transpose();
        pb.sigma.row(s) = out.col(1).unaryExpr([](double r) { return softplus(r) + sigma_floor; }).transpose();
    }
    // Shifted by the first draw so identical draws give exactly that value and zero variance.
    const Eigen::RowVectorXd shift = pb.f.row(0);
    const Eigen::ArrayXXd d = (pb.f.rowwise() - shift).array();
    const Eigen::RowVectorXd d_mean = d.colwise().mean().matrix();
    pb.mean = (shift + d_mean).transpose();
    pb.epistemic_var = ((d.rowwise() - d_mean.array()).square().colwise().sum() / static_cast<double>(samples - 1))
                           .transpose();
    pb.aleatoric_var = pb.sigma.array().square().colwise().mean().transpose();
    return pb;
}

inline PredictiveDistribution predict_samples(const BnnModel& model, std::span<const double> x, int samples, Rng& rng)
{
    if (x.size() != static_cast<std::size_t>(model.topology.input_dim))
        throw DataError(DataErrorKind::schema_mismatch, "configuration has " + std::to_string(x.size()) +
                                                            " values, model expects " +
                                                            std::to_string(model.topology.input_dim));
    const Eigen::MatrixXd in = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    return predict_batch(model, in, samples, rng).at(0);
}

/// mean +/- z(rho) * total sd.
inline std::pair<double, double> interval(const PredictiveDistribution& pd, double rho_percent)
{
    const double half = z_score(rho_percent) * pd.sd_total();
    return {pd.mean - half, pd.mean + half};
}

} // namespace perfbnn
