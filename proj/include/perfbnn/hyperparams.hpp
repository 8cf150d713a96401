#pragma once

#include <array>
#include <string>

#include "perfbnn/errors.hpp"

namespace perfbnn {

inline constexpr std::array<int, 3> epoch_choices{500, 1000, 2000};
inline constexpr std::array<int, 3> width_multipliers{1, 2, 4};
inline constexpr double min_learning_rate = 1e-4;
inline constexpr double max_learning_rate = 0.1;
inline constexpr double min_laplace_scale = 1e-4;
inline constexpr double max_laplace_scale = 1.0;

/// Tunable training settings for one BNN.
struct Hyperparams {
    int depth = 1;
    int epochs = 1000;
    double base_lr = 1e-2;
    int neurons_per_layer = 1;
    double laplace_scale = 1e-2;

    friend bool operator==(const Hyperparams&, const Hyperparams&) = default;

    /// Throws UsageError unless every field lies in its search domain for `option_count` inputs.
    void validate(int option_count) const
    {
        auto fail = [](const std::string& what) { throw UsageError("invalid hyperparameters: " + what); };
        if (depth < 1)
            fail("depth must be >= 1");
        bool ok = false;
        for (int e : epoch_choices)
            ok = ok || e == epochs;
        if (!ok)
            fail("epochs must be one of 500, 1000, 2000");
        if (!(base_lr >= min_learning_rate && base_lr <= max_learning_rate))
            fail("learning rate must lie in [1e-4, 0.1]");
        if (!(laplace_scale >= min_laplace_scale && laplace_scale <= max_laplace_scale))
            fail("Laplace scale must lie in [1e-4, 1]");
        ok = false;
        for (int m : width_multipliers)
            ok = ok || m * option_count == neurons_per_layer;
        if (!ok)
            fail("neurons per layer must be n, 2n or 4n with n = " + std::to_string(option_count));
    }
};

} // namespace perfbnn
