#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "perfbnn/bnn.hpp"

using namespace perfbnn;

namespace {

// KL(N(mu, sd^2) || Laplace(0, b)) via the folded-normal mean E|w|.
double kl_gauss_laplace_closed(double mu, double sd, double b)
{
    const double abs_mean = sd * std::sqrt(2.0 / std::numbers::pi) * std::exp(-mu * mu / (2 * sd * sd)) +
                            mu * (1.0 - 2.0 * 0.5 * std::erfc(mu / (sd * std::sqrt(2.0))));
    const double neg_entropy = -0.5 * std::log(2 * std::numbers::pi * std::numbers::e * sd * sd);
    return neg_entropy + std::log(2 * b) + abs_mean / b;
}

PerformanceDataset make_dataset(const Eigen::MatrixXd& x, const Eigen::VectorXd& y)
{
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        names.push_back("x" + std::to_string(j));
    return {infer_schema(names, x), x, y};
}

BnnModel random_model(const NetworkTopology& topo, std::uint64_t seed, double sd = 0.3)
{
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> n01;
    const ParameterLayout layout(topo);
    BnnModel m{topo,
               {Eigen::VectorXd(layout.size), Eigen::VectorXd::Constant(layout.size, inverse_softplus(sd))},
               {0.5, 1.0},
               {}};
    for (auto& v : m.posterior.mean)
        v = 0.8 * n01(eng);
    for (auto& v : m.posterior.raw_scale)
        v += 0.3 * n01(eng);
    return m;
}

} // namespace

TEST(SampleWeights, DegeneratePosteriorReturnsMean)
{
    Rng rng(1);
    const Eigen::VectorXd mean = Eigen::VectorXd::LinSpaced(6, -1, 1);
    EXPECT_EQ(sample_weights(mean, Eigen::VectorXd::Zero(6), rng), mean);
}

TEST(SampleWeights, EmpiricalMeanConcentrates)
{
    Rng rng(2);
    Eigen::VectorXd mean(4), sd(4);
    mean << 0.5, -2.0, 0.0, 10.0;
    sd << 0.1, 1.0, 3.0, 0.01;
    const int n = 100000;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(4);
    for (int i = 0; i < n; ++i)
        acc += sample_weights(mean, sd, rng);
    acc /= n;
    for (Eigen::Index k = 0; k < 4; ++k)
        EXPECT_LE(std::abs(acc[k] - mean[k]), 3 * sd[k] / std::sqrt(double(n))) << k;
}

TEST(SampleWeights, DeterministicAndBiasesArePointEstimates)
{
    const BnnModel m = random_model({3, {4}}, 5);
    Rng a(9), b(9);
    const auto wa = sample_weights(m, a);
    EXPECT_EQ(wa, sample_weights(m, b));
    const ParameterLayout layout(m.topology);
    const auto mask = layout.bias_mask();
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k])
            EXPECT_EQ(wa[static_cast<Eigen::Index>(k)], m.posterior.mean[static_cast<Eigen::Index>(k)]);
}

TEST(KlGaussian, ClosedFormValues)
{
    const std::vector<double> zero{0.0}, one{1.0};
    EXPECT_DOUBLE_EQ(kl_gaussian(zero, one, 1.0), 0.0);
    EXPECT_DOUBLE_EQ(kl_gaussian(one, one, 1.0), 0.5);
    const std::vector<double> mu{0.3, -1.2}, sd{0.5, 2.0};
    const double expected = std::log(2.0 / 0.5) + (0.25 + 0.09) / 8 - 0.5 + std::log(2.0 / 2.0) + (4 + 1.44) / 8 - 0.5;
    EXPECT_NEAR(kl_gaussian(mu, sd, 2.0), expected, 1e-14);
    EXPECT_THROW(kl_gaussian(zero, one, 0.0), DataError);
}

TEST(KlGaussian, NonNegativeOnRandomSlices)
{
    std::mt19937_64 eng(4);
    std::uniform_real_distribution<double> u(-3, 3), s(0.01, 4);
    for (int t = 0; t < 1000; ++t) {
        std::vector<double> mu(5), sd(5);
        for (int k = 0; k < 5; ++k) {
            mu[k] = u(eng);
            sd[k] = s(eng);
        }
        EXPECT_GE(kl_gaussian(mu, sd, s(eng)), 0.0);
    }
}

TEST(KlGaussian, MatchesMonteCarlo)
{
    std::mt19937_64 eng(6);
    std::normal_distribution<double> n01;
    for (auto [mu, sd, s0] : {std::tuple{0.5, 0.3, 1.0}, std::tuple{-1.0, 2.0, 0.7}, std::tuple{2.0, 0.1, 3.0}}) {
        double acc = 0;
        const int n = 400000;
        for (int i = 0; i < n; ++i) {
            const double w = mu + sd * n01(eng);
            acc += gaussian_log_density(w, mu, sd) - gaussian_log_density(w, 0.0, s0);
        }
        const std::vector<double> m{mu}, s{sd};
        EXPECT_NEAR(acc / n, kl_gaussian(m, s, s0), 0.02 * kl_gaussian(m, s, s0));
    }
}

TEST(KlLaplace, DensityAtZero)
{
    EXPECT_DOUBLE_EQ(laplace_log_density(0.0, 0.5), 0.0);
    EXPECT_NEAR(laplace_log_density(1.0, 2.0), -std::log(4.0) - 0.5, 1e-15);
}

TEST(KlLaplace, NearPointPosterior)
{
    const std::vector<double> mu{0.0}, sd{1e-6};
    Rng rng(3);
    const auto est = kl_laplace_mc(mu, sd, 0.5, 2000, rng);
    const double oracle = -0.5 * std::log(2 * std::numbers::pi * std::numbers::e * 1e-12) + std::log(1.0);
    EXPECT_NEAR(est.value, oracle, 0.02 * std::abs(oracle));
    EXPECT_NEAR(est.value, kl_gauss_laplace_closed(0.0, 1e-6, 0.5), 3 * est.std_error);
}

TEST(KlLaplace, WithinThreeStandardErrorsOfClosedForm)
{
    std::mt19937_64 eng(12);
    std::uniform_real_distribution<double> u(-1, 1), s(0.05, 1.0), b(0.01, 1.0);
    for (int t = 0; t < 10; ++t) {
        std::vector<double> mu(3), sd(3);
        double exact = 0;
        const double scale = b(eng);
        for (int k = 0; k < 3; ++k) {
            mu[k] = u(eng);
            sd[k] = s(eng);
            exact += kl_gauss_laplace_closed(mu[k], sd[k], scale);
        }
        Rng rng(100 + t);
        const auto est = kl_laplace_mc(mu, sd, scale, 100000, rng);
        EXPECT_LE(std::abs(est.value - exact), 3 * est.std_error) << "trial " << t;
        EXPECT_GE(est.value, -3 * est.std_error);
    }
}

TEST(Elbo, PerfectFitSinglePoint)
{
    const NetworkTopology topo{1, {2}};
    const ParameterLayout layout(topo);
    BnnModel m{topo, {Eigen::VectorXd::Zero(layout.size), Eigen::VectorXd::Constant(layout.size, -60.0)}, {}, {}};
    m.posterior.mean[layout.head().bias_offset] = 4.0;
    m.posterior.mean[layout.head().bias_offset + 1] = inverse_softplus(1.0 - sigma_floor);
    Eigen::MatrixXd x(1, 1);
    x << 1.0;
    Rng rng(1);
    const auto ev = evaluate_elbo(m, x, Eigen::VectorXd::Constant(1, 4.0), 1, 0.0, rng);
    EXPECT_NEAR(ev.nll, 0.5 * std::log(2 * std::numbers::pi), 1e-12);
    EXPECT_NEAR(ev.nll, 0.9189, 1e-4);
}

TEST(Elbo, KlWeightIsLinear)
{
    const BnnModel m = random_model({3, {4, 3}}, 7);
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(5, 3);
    Eigen::VectorXd y = Eigen::VectorXd::Random(5);
    std::vector<Eigen::VectorXd> draws;
    std::mt19937_64 eng(1);
    std::normal_distribution<double> n01;
    for (int s = 0; s < 2; ++s) {
        Eigen::VectorXd d(m.posterior.mean.size());
        for (auto& v : d)
            v = n01(eng);
        draws.push_back(d);
    }
    const auto a = evaluate_elbo(m, x, y, draws, 0.3);
    const auto b = evaluate_elbo(m, x, y, draws, 0.6);
    EXPECT_NEAR(b.loss - a.loss, 0.3 * a.kl, 1e-12 * std::abs(b.loss));
    EXPECT_EQ(a.kl, b.kl);
    EXPECT_EQ(a.nll, b.nll);
}

TEST(Elbo, GradientMatchesFiniteDifferencesWithCommonRandomNumbers)
{
    std::mt19937_64 eng(31);
    std::normal_distribution<double> n01;
    int checked = 0;
    for (int trial = 0; trial < 10; ++trial) {
        BnnModel m = random_model({2, {3, 2}}, 40 + trial);
        m.prior.laplace_scale = 0.3;
        Eigen::MatrixXd x(4, 2);
        Eigen::VectorXd y(4);
        for (Eigen::Index i = 0; i < 4; ++i) {
            x(i, 0) = n01(eng);
            x(i, 1) = n01(eng);
            y[i] = n01(eng);
        }
        std::vector<Eigen::VectorXd> draws(2, Eigen::VectorXd(m.posterior.mean.size()));
        for (auto& d : draws)
            for (auto& v : d)
                v = n01(eng);
        const double klw = 0.25;
        const auto ev = evaluate_elbo(m, x, y, draws, klw);
        const Eigen::Index p = m.posterior.mean.size();
        for (int which = 0; which < 2; ++which)
            for (Eigen::Index k = 0; k < p; ++k) {
                Eigen::VectorXd& v = which == 0 ? m.posterior.mean : m.posterior.raw_scale;
                const double h = 1e-6 * std::max(1.0, std::abs(v[k]));
                const double orig = v[k];
                v[k] = orig + h;
                const double up = evaluate_elbo(m, x, y, draws, klw).loss;
                v[k] = orig - h;
                const double down = evaluate_elbo(m, x, y, draws, klw).loss;
                v[k] = orig;
                const double fd = (up - down) / (2 * h);
                const double g = which == 0 ? ev.grad_mean[k] : ev.grad_raw_scale[k];
                EXPECT_LE(std::abs(fd - g), std::max(1e-6, 1e-3 * std::max(std::abs(fd), std::abs(g))))
                    << "trial " << trial << " param " << k << " which " << which;
                ++checked;
            }
    }
    EXPECT_GT(checked, 300);
}

TEST(TrainBnn, ConstantTargetIsFitted)
{
    Eigen::MatrixXd x(12, 3);
    for (Eigen::Index i = 0; i < 12; ++i)
        for (Eigen::Index j = 0; j < 3; ++j)
            x(i, j) = (i >> j) & 1;
    const auto ds = make_dataset(x, Eigen::VectorXd::Constant(12, 50.0));
    const auto m = train_bnn(ds, {1, 1000, 0.01, 6, 0.01}, 3);
    Rng rng(4);
    const auto pb = predict_batch(m, x, 300, rng);
    for (Eigen::Index i = 0; i < 12; ++i)
        EXPECT_NEAR(pb.mean[i], 50.0, 5.0);
}

TEST(TrainBnn, LinearOneOptionSystem)
{
    Eigen::MatrixXd x(2, 1);
    x << 0, 1;
    const auto ds = make_dataset(x, Eigen::Vector2d(0.0, 100.0));
    const auto m = train_bnn(ds, {1, 2000, 0.01, 2, 0.01}, 11);
    Rng rng(5);
    const auto pb = predict_batch(m, x, 300, rng);
    // MAPE over the non-zero truth; the zero truth is checked in absolute terms.
    EXPECT_LT(std::abs(pb.mean[1] - 100.0) / 100.0 * 100.0, 5.0);
    EXPECT_LT(std::abs(pb.mean[0]), 5.0);
}

TEST(TrainBnn, DeterministicAndFiniteTrace)
{
    Eigen::MatrixXd x(8, 2);
    x << 0, 0, 0, 1, 1, 0, 1, 1, 0, 0, 0, 1, 1, 0, 1, 1;
    Eigen::VectorXd y(8);
    y << 0, 20, 30, 100, 5, 25, 28, 96;
    const auto ds = make_dataset(x, y);
    std::vector<double> trace;
    const auto a = train_bnn(ds, {2, 500, 0.01, 4, 0.1}, 21, &trace);
    const auto b = train_bnn(ds, {2, 500, 0.01, 4, 0.1}, 21);
    EXPECT_EQ(a.posterior.mean, b.posterior.mean);
    EXPECT_EQ(a.posterior.raw_scale, b.posterior.raw_scale);
    ASSERT_EQ(trace.size(), 500u);
    for (double v : trace)
        EXPECT_TRUE(std::isfinite(v));
    const auto c = train_bnn(ds, {2, 500, 0.01, 4, 0.1}, 22);
    EXPECT_NE(a.posterior.mean, c.posterior.mean);
}

TEST(TrainBnn, DivergenceReportsEpoch)
{
    Eigen::MatrixXd x(3, 1);
    x << 0, 1, 1;
    const auto ds = make_dataset(x, Eigen::Vector3d(0.0, 1e308, -1e308));
    try {
        train_bnn(ds, {1, 500, 0.1, 1, 0.01}, 1);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos) << e.what();
    }
}

TEST(TrainBnn, SmallerLaplaceScaleShrinksIrrelevantInputs)
{
    std::mt19937_64 eng(77);
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> noise(0.0, 1.0);
    Eigen::MatrixXd x(60, 8);
    Eigen::VectorXd y(60);
    for (Eigen::Index i = 0; i < 60; ++i) {
        for (Eigen::Index j = 0; j < 8; ++j)
            x(i, j) = coin(eng);
        y[i] = 10 + 50 * x(i, 0) + 30 * x(i, 1) + noise(eng);
    }
    auto irrelevant = [&](double b) {
        const auto m = train_bnn(make_dataset(x, y), {1, 1000, 0.01, 8, b}, 5);
        const ParameterLayout layout(m.topology);
        const auto& first = layout.layers.front();
        double s = 0;
        int n = 0;
        for (Eigen::Index o = 0; o < first.fan_out; ++o)
            for (Eigen::Index k = 2; k < first.fan_in; ++k, ++n)
                s += std::abs(m.posterior.mean[first.weight_offset + o * first.fan_in + k]);
        return s / n;
    };
    EXPECT_LT(irrelevant(1e-4), irrelevant(1.0));
}

TEST(Predict, DegeneratePosteriorHasNoEpistemicVariance)
{
    BnnModel m = random_model({2, {3}}, 8);
    m.posterior.raw_scale.setConstant(-800.0);
    Rng rng(2);
    const auto pd = predict_samples(m, std::vector<double>{0.3, -0.4}, 50, rng);
    EXPECT_EQ(pd.epistemic_var, 0.0);
    EXPECT_NEAR(pd.sd_total(), std::sqrt(pd.aleatoric_var), 1e-15);
    EXPECT_EQ(pd.f.size(), 50u);
    for (double s : pd.sigma)
        EXPECT_GT(s, 0.0);
}

TEST(Predict, SummariesMatchDefinitions)
{
    const BnnModel m = random_model({2, {4}}, 9);
    Rng rng(3);
    const auto pd = predict_samples(m, std::vector<double>{1.0, 0.5}, default_predictive_samples, rng);
    ASSERT_EQ(pd.f.size(), 300u);
    double mean = 0, va = 0;
    for (std::size_t s = 0; s < pd.f.size(); ++s) {
        mean += pd.f[s];
        va += pd.sigma[s] * pd.sigma[s];
    }
    mean /= 300;
    double ve = 0;
    for (double f : pd.f)
        ve += (f - mean) * (f - mean);
    ve /= 299;
    EXPECT_NEAR(pd.mean, mean, 1e-12);
    EXPECT_NEAR(pd.epistemic_var, ve, 1e-10);
    EXPECT_NEAR(pd.aleatoric_var, va / 300, 1e-10);
    EXPECT_THROW(predict_samples(m, std::vector<double>{1.0}, 10, rng), DataError);
}

TEST(Predict, MeanFluctuationShrinksWithSampleCount)
{
    const BnnModel m = random_model({2, {4}}, 10, 0.5);
    const std::vector<double> x{0.7, -0.2};
    auto spread = [&](int s, double& avg) {
        double sum = 0, sq = 0;
        const int reps = 400;
        for (int r = 0; r < reps; ++r) {
            Rng rng(1000 + r + 7919 * s);
            const double v = predict_samples(m, x, s, rng).mean;
            sum += v;
            sq += v * v;
        }
        avg = sum / reps;
        return std::sqrt(sq / reps - avg * avg);
    };
    double m1, m2;
    const double sd1 = spread(50, m1), sd2 = spread(200, m2);
    EXPECT_NEAR(sd1 / sd2, 2.0, 0.4);
    EXPECT_NEAR(m1, m2, 3 * sd1 / std::sqrt(400.0) * 1.5);
}

TEST(Predict, VarianceDecompositionMatchesPooledSamples)
{
    const BnnModel m = random_model({2, {5}}, 11, 0.4);
    Rng rng(5);
    const int s = 100000;
    const auto pd = predict_samples(m, std::vector<double>{0.2, 0.9}, s, rng);
    std::mt19937_64 eng(6);
    std::normal_distribution<double> n01;
    double sum = 0, sq = 0;
    for (int i = 0; i < s; ++i) {
        const double v = pd.f[static_cast<std::size_t>(i)] + pd.sigma[static_cast<std::size_t>(i)] * n01(eng);
        sum += v;
        sq += v * v;
    }
    const double var = (sq - sum * sum / s) / (s - 1);
    const double total = pd.epistemic_var + pd.aleatoric_var;
    EXPECT_NEAR(var, total, 0.02 * total);
}

TEST(Interval, WidthProportionalToZ)
{
    PredictiveDistribution pd;
    pd.mean = 3.0;
    pd.epistemic_var = 0.5;
    pd.aleatoric_var = 1.5;
    double prev_width = 0;
    for (double rho = 1; rho < 100; rho += 2.5) {
        const auto [lo, hi] = interval(pd, rho);
        EXPECT_NEAR((hi - lo) / z_score(rho), 2 * std::sqrt(2.0), 1e-9);
        EXPECT_GT(hi - lo, prev_width);
        EXPECT_NEAR(0.5 * (lo + hi), 3.0, 1e-12);
        prev_width = hi - lo;
    }
    const auto [lo, hi] = interval(pd, 1e-12);
    EXPECT_NEAR(lo, 3.0, 1e-10);
    EXPECT_NEAR(hi, 3.0, 1e-10);
    EXPECT_THROW(interval(pd, 0.0), DataError);
    EXPECT_THROW(interval(pd, 100.0), DataError);
}
