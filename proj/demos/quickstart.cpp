// Trains a calibrated ensemble on a small synthetic system and prints a few forecasts.

#include <cstdio>
#include <string>
#include <vector>

#include "perfbnn/baseline.hpp"
#include "perfbnn/ensemble.hpp"
#include "perfbnn/metrics.hpp"

using namespace perfbnn;

namespace {

// Six binary options; runtime grows when options 0 and 1 are enabled together.
PerformanceDataset make_system(int n, std::uint64_t seed)
{
    Rng rng(seed);
    Eigen::MatrixXd x(n, 6);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 6; ++j)
            x(i, j) = static_cast<double>(rng.below(2));
        y[i] = 40.0 + 25.0 * x(i, 0) * x(i, 1) + 8.0 * x(i, 2) - 5.0 * x(i, 3) + (0.5 + x(i, 4)) * rng.normal();
    }
    std::vector<std::string> names{"cache", "prefetch", "compress", "inline", "logging", "threads"};
    return {infer_schema(names, x), x, y};
}

} // namespace

int main()
{
    const PerformanceDataset train = make_system(90, 1);
    const PerformanceDataset test = make_system(300, 2);

    const Hyperparams hp{2, 2000, 0.01, 12, 0.01};
    const EnsembleModel em = train_ensemble(train, hp, EnsembleConfig{}, 42);
    const EnsembleForecast fc = forecast(em, test.rows);

    std::vector<double> pred(test.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        pred[i] = fc.prediction(static_cast<Eigen::Index>(i));
    const std::span<const double> truth(test.performance.data(), test.size());
    const Eigen::VectorXd ols = LinearBaseline::fit(train).predict(test.rows);
    const std::vector<double> ols_pred(ols.data(), ols.data() + ols.size());

    std::printf("%-8s %-10s %-10s %-22s\n", "row", "measured", "predicted", "90% interval");
    for (Eigen::Index i = 0; i < 5; ++i) {
        const auto [lo, hi] = fc.interval(i, 90.0);
        std::printf("%-8ld %-10.3f %-10.3f [%.3f, %.3f]\n", static_cast<long>(i), test.performance[i],
                    fc.prediction(i), lo, hi);
    }

    const auto levels = default_levels();
    const double cal_raw = cal_score([&](Eigen::Index i, double r) { return fc.interval(i, r, false); }, truth, levels);
    const double cal = cal_score([&](Eigen::Index i, double r) { return fc.interval(i, r, true); }, truth, levels);
    std::printf("\nMAPE %.2f%% (least squares %.2f%%)\n", mape(pred, truth), mape(ols_pred, truth));
    std::printf("cal score %.2f before calibration, %.2f after\n", cal_raw, cal);
    return 0;
}
