#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "perfbnn/errors.hpp"
#include "perfbnn/special.hpp"

namespace perfbnn {

/// Lower bound added to the softplus noise head (normalized-output units).
inline constexpr double sigma_floor = 1e-3;

/// Dense relu network with two linear heads off the last hidden layer: mean and raw noise scale.
struct NetworkTopology {
    int input_dim = 1;
    std::vector<int> hidden_layers{1};

    void validate() const
    {
        if (input_dim < 1)
            throw DataError(DataErrorKind::invalid_argument, "network input dimension must be at least 1");
        if (hidden_layers.empty())
            throw DataError(DataErrorKind::invalid_argument, "network needs at least one hidden layer");
        for (int w : hidden_layers)
            if (w < 1)
                throw DataError(DataErrorKind::invalid_argument, "hidden layer widths must be at least 1");
    }

    friend bool operator==(const NetworkTopology&, const NetworkTopology&) = default;
};

struct LayerSlice {
    Eigen::Index weight_offset = 0; // fan_in x fan_out, column-major
    Eigen::Index bias_offset = 0;   // fan_out
    Eigen::Index fan_in = 0;
    Eigen::Index fan_out = 0;

    friend bool operator==(const LayerSlice&, const LayerSlice&) = default;
};

/// Where each layer's weights and biases live in the flat parameter vector. The final
/// slice is the two-unit output head (column 0 = mean, column 1 = raw noise scale).
struct ParameterLayout {
    std::vector<LayerSlice> layers;
    Eigen::Index size = 0;

    explicit ParameterLayout(const NetworkTopology& topo)
    {
        topo.validate();
        Eigen::Index in = topo.input_dim;
        auto add = [&](Eigen::Index out) {
            LayerSlice s{size, size + in * out, in, out};
            size += in * out + out;
            layers.push_back(s);
            in = out;
        };
        for (int w : topo.hidden_layers)
            add(w);
        add(2);
    }

    const LayerSlice& head() const { return layers.back(); }

    /// True for entries of the flat vector that are biases.
    std::vector<bool> bias_mask() const
    {
        std::vector<bool> mask(static_cast<std::size_t>(size), false);
        for (const auto& l : layers)
            for (Eigen::Index k = 0; k < l.fan_out; ++k)
                mask[static_cast<std::size_t>(l.bias_offset + k)] = true;
        return mask;
    }
};

using ParameterVector = Eigen::VectorXd;

struct HeadOutput {
    double mu = 0.0;
    double raw_noise = 0.0;

    double sigma() const noexcept { return softplus(raw_noise) + sigma_floor; }
};

namespace detail {

inline Eigen::Map<const Eigen::MatrixXd> weights(const ParameterVector& p, const LayerSlice& l)
{
    return {p.data() + l.weight_offset, l.fan_in, l.fan_out};
}

inline Eigen::Map<const Eigen::RowVectorXd> bias(const ParameterVector& p, const LayerSlice& l)
{
    return {p.data() + l.bias_offset, l.fan_out};
}

inline void check_params(const ParameterLayout& layout, const ParameterVector& p)
{
    if (p.size() != layout.size)
        throw DataError(DataErrorKind::schema_mismatch, "parameter vector length " + std::to_string(p.size()) +
                                                            " does not match topology (" +
                                                            std::to_string(layout.size) + ")");
}

} // namespace detail

/// Head outputs for every row of `inputs` (N x input_dim). Returns N x 2: [mu, raw_noise].
inline Eigen::MatrixXd forward_batch(const ParameterLayout& layout, const ParameterVector& params,
                                     const Eigen::MatrixXd& inputs)
{
    detail::check_params(layout, params);
    if (inputs.cols() != layout.layers.front().fan_in)
        throw DataError(DataErrorKind::schema_mismatch, "input has " + std::to_string(inputs.cols()) +
                                                            " columns, network expects " +
                                                            std::to_string(layout.layers.front().fan_in));
    // Row at a time: a blocked matrix product rounds differently depending on batch size, and a
    // configuration's prediction must not depend on which other rows share its file.
    Eigen::MatrixXd out(inputs.rows(), 2);
    for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
        Eigen::RowVectorXd a = inputs.row(r);
        for (std::size_t l = 0; l + 1 < layout.layers.size(); ++l) {
            const auto& s = layout.layers[l];
            a = (a * detail::weights(params, s) + detail::bias(params, s)).cwiseMax(0.0);
        }
        const auto& h = layout.head();
        out.row(r) = a * detail::weights(params, h) + detail::bias(params, h);
    }
    return out;
}

inline HeadOutput forward(const NetworkTopology& topology, const ParameterVector& params, std::span<const double> x)
{
    const ParameterLayout layout(topology);
    if (x.size() != static_cast<std::size_t>(topology.input_dim))
        throw DataError(DataErrorKind::schema_mismatch, "configuration has " + std::to_string(x.size()) +
                                                            " values, network expects " +
                                                            std::to_string(topology.input_dim));
    const Eigen::MatrixXd in = Eigen::Map<const Eigen::RowVectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    const Eigen::MatrixXd out = forward_batch(layout, params, in);
    return {out(0, 0), out(0, 1)};
}

enum class LossKind {
    squared_error, // (mu - y)^2, noise head unused
    gaussian_nll,  // (y - mu)^2 / (2 sigma^2) + log sigma + log(2 pi) / 2
};

struct LossGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
};

/// Loss summed over the batch and its exact gradient with respect to every parameter.
inline LossGradient gradient(const ParameterLayout& layout, const ParameterVector& params,
                             const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, LossKind kind)
{
    detail::check_params(layout, params);
    if (inputs.rows() == 0)
        throw DataError(DataErrorKind::invalid_argument, "gradient requires a non-empty batch");
    if (inputs.rows() != targets.size())
        throw DataError(DataErrorKind::schema_mismatch, "batch inputs and targets differ in length");
    if (inputs.cols() != layout.layers.front().fan_in)
        throw DataError(DataErrorKind::schema_mismatch, "batch width does not match network input dimension");

    const std::size_t n_hidden = layout.layers.size() - 1;
    std::vector<Eigen::MatrixXd> acts(n_hidden + 1); // acts[0] = inputs, acts[l+1] = relu output of layer l
    acts[0] = inputs;
    for (std::size_t l = 0; l < n_hidden; ++l) {
        const auto& s = layout.layers[l];
        acts[l + 1] = ((acts[l] * detail::weights(params, s)).rowwise() + detail::bias(params, s)).cwiseMax(0.0);
    }
    const auto& head = layout.head();
    const Eigen::MatrixXd out = (acts[n_hidden] * detail::weights(params, head)).rowwise() + detail::bias(params, head);

    const Eigen::Index n = inputs.rows();
    Eigen::MatrixXd d_out = Eigen::MatrixXd::Zero(n, 2);
    double loss = 0.0;
    constexpr double half_log_2pi = 0.91893853320467274178;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = out(i, 0);
        const double r = targets[i] - mu;
        double term;
        if (kind == LossKind::squared_error) {
            term = r * r;
            d_out(i, 0) = -2.0 * r;
        } else {
            const double sigma = softplus(out(i, 1)) + sigma_floor;
            const double s2 = sigma * sigma;
            term = r * r / (2.0 * s2) + std::log(sigma) + half_log_2pi;
            d_out(i, 0) = -r / s2;
            d_out(i, 1) = (1.0 / sigma - r * r / (s2 * sigma)) * sigmoid(out(i, 1));
        }
        if (!std::isfinite(term))
            throw NumericalError("non-finite loss term at batch row " + std::to_string(i) + " (mu=" +
                                 std::to_string(mu) + ", raw_noise=" + std::to_string(out(i, 1)) +
                                 ", target=" + std::to_string(targets[i]) + ")");
        loss += term;
    }

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size);
    auto write = [&](const LayerSlice& s, const Eigen::MatrixXd& a_in, const Eigen::MatrixXd& delta) {
        Eigen::Map<Eigen::MatrixXd>(grad.data() + s.weight_offset, s.fan_in, s.fan_out) = a_in.transpose() * delta;
        Eigen::Map<Eigen::RowVectorXd>(grad.data() + s.bias_offset, s.fan_out) = delta.colwise().sum();
    };
    write(head, acts[n_hidden], d_out);
    Eigen::MatrixXd delta = d_out * detail::weights(params, head).transpose();
    for (std::size_t l = n_hidden; l-- > 0;) {
        delta = delta.cwiseProduct((acts[l + 1].array() > 0.0).cast<double>().matrix());
        write(layout.layers[l], acts[l], delta);
        if (l > 0)
            delta = delta * detail::weights(params, layout.layers[l]).transpose();
    }
    return {loss, std::move(grad)};
}

inline LossGradient gradient(const NetworkTopology& topology, const ParameterVector& params,
                             const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, LossKind kind)
{
    return gradient(ParameterLayout(topology), params, inputs, targets, kind);
}

// ---------------------------------------------------------------------------
// Adam

inline constexpr int lr_decay_start_epoch = 1000;
inline constexpr double lr_decay_rate = 0.001;

/// Constant up to epoch 1000, then exponential decay with rate 0.001 per epoch.
inline double lr_at_epoch(double base_lr, long epoch)
{
    if (epoch <= lr_decay_start_epoch)
        return base_lr;
    return base_lr * std::exp(-lr_decay_rate * static_cast<double>(epoch - lr_decay_start_epoch));
}

struct AdamState {
    Eigen::VectorXd first_moment;
    Eigen::VectorXd second_moment;
    long step = 0;
    double base_lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;

    AdamState() = default;
    AdamState(Eigen::Index size, double lr)
        : first_moment(Eigen::VectorXd::Zero(size)), second_moment(Eigen::VectorXd::Zero(size)), base_lr(lr)
    {
    }
};

/// One bias-corrected Adam update in place; the step size follows lr_at_epoch(base_lr, step).
inline void adam_step(AdamState& state, Eigen::Ref<Eigen::VectorXd> params, const Eigen::VectorXd& grads)
{
    if (params.size() != grads.size() || state.first_moment.size() != params.size())
        throw DataError(DataErrorKind::schema_mismatch, "adam_step: parameter, gradient and moment sizes differ");
    const double lr = lr_at_epoch(state.base_lr, state.step);
    ++state.step;
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    params.array() -= lr * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

} // namespace perfbnn
