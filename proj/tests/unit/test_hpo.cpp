#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "surrogate.hpp"
#include "perfbnn/hpo.hpp"

using namespace perfbnn;

namespace {

const SearchSpace space5{5, 8};

double quadratic(const Hyperparams& hp)
{
    // Minimum at depth 1 with lr = 1e-2 and b = 1e-2; depth-independent elsewhere.
    const Eigen::VectorXd v = encode(hp, space5);
    return 1.0 + 10 * std::pow(v[2] - 2.0 / 3.0, 2) + 10 * std::pow(v[4] - 0.5, 2) + 0.5 * v[0];
}

} // namespace

TEST(Encoding, RoundTripOnGridPoints)
{
    for (int depth : {1, 4, 8})
        for (int e : epoch_choices)
            for (int m : width_multipliers)
                for (double lr : {1e-4, 3e-3, 0.1})
                    for (double b : {1e-4, 0.05, 1.0}) {
                        const Hyperparams hp{depth, e, lr, m * 5, b};
                        const Eigen::VectorXd v = encode(hp, space5);
                        EXPECT_GE(v.minCoeff(), 0.0);
                        EXPECT_LE(v.maxCoeff(), 1.0);
                        const Hyperparams back = decode(v, space5);
                        EXPECT_EQ(back.depth, depth);
                        EXPECT_EQ(back.epochs, e);
                        EXPECT_EQ(back.neurons_per_layer, m * 5);
                        EXPECT_NEAR(back.base_lr, lr, 1e-12 * lr);
                        EXPECT_NEAR(back.laplace_scale, b, 1e-12 * b);
                    }
}

TEST(Encoding, ValidationAndClamping)
{
    EXPECT_THROW(encode(Hyperparams{1, 700, 0.01, 5, 0.01}, space5), UsageError);
    EXPECT_THROW(encode(Hyperparams{1, 500, 0.01, 6, 0.01}, space5), UsageError);
    EXPECT_THROW(encode(Hyperparams{9, 500, 0.01, 5, 0.01}, space5), UsageError);
    Eigen::VectorXd v(5);
    v << 2.0, -1.0, 5.0, 0.3, -4.0;
    const auto hp = decode(v, space5);
    EXPECT_EQ(hp.depth, 8);
    EXPECT_EQ(hp.epochs, 500);
    EXPECT_DOUBLE_EQ(hp.base_lr, max_learning_rate);
    EXPECT_EQ(hp.neurons_per_layer, 10);
    EXPECT_DOUBLE_EQ(hp.laplace_scale, min_laplace_scale);
}

TEST(RandomHyperparams, StayInDomain)
{
    Rng rng(4);
    for (int i = 0; i < 500; ++i) {
        const auto hp = random_hyperparams(3, space5, rng);
        EXPECT_NO_THROW(hp.validate(5));
        EXPECT_EQ(hp.depth, 3);
    }
}

TEST(Gp, InterpolatesNoiseFreeData)
{
    std::mt19937_64 eng(2);
    std::uniform_real_distribution<double> u(0, 1);
    Eigen::MatrixXd x(12, 2);
    Eigen::VectorXd y(12);
    for (int i = 0; i < 12; ++i) {
        x(i, 0) = u(eng);
        x(i, 1) = u(eng);
        y[i] = std::sin(3 * x(i, 0)) + x(i, 1) * x(i, 1);
    }
    const auto gp = gp_fit(x, y);
    for (int i = 0; i < 12; ++i) {
        const auto [m, s] = gp.predict(x.row(i).transpose());
        EXPECT_NEAR(m, y[i], 0.02);
        EXPECT_LT(s, 0.1);
    }
    Eigen::VectorXd far(2);
    far << 30.0, -30.0;
    const auto [mf, sf] = gp.predict(far);
    EXPECT_NEAR(mf, y.mean(), 1e-6);
    EXPECT_GT(sf, 0.0);
    EXPECT_TRUE(std::isfinite(gp.log_marginal_likelihood()));
}

TEST(Gp, DuplicateInputsStayFinite)
{
    Eigen::MatrixXd x(4, 1);
    x << 0.5, 0.5, 0.5, 0.2;
    Eigen::VectorXd y(4);
    y << 1.0, 1.2, 0.8, 3.0;
    const auto gp = gp_fit(x, y);
    Eigen::VectorXd q(1);
    q << 0.5;
    const auto [m, s] = gp.predict(q);
    EXPECT_TRUE(std::isfinite(m));
    EXPECT_TRUE(std::isfinite(s));
    EXPECT_NEAR(m, 1.0, 0.5);
}

TEST(Gp, SingleRecordAndInvalidInput)
{
    Eigen::MatrixXd x(1, 3);
    x << 0.1, 0.2, 0.3;
    const auto gp = gp_fit(x, Eigen::VectorXd::Constant(1, 4.0));
    EXPECT_NEAR(gp.predict(x.row(0).transpose()).first, 4.0, 1e-6);
    EXPECT_THROW(gp_fit(Eigen::MatrixXd(0, 3), Eigen::VectorXd(0)), DataError);
}

TEST(ExpectedImprovement, ClosedFormValues)
{
    // gain 0, sd 1: EI = phi(0).
    EXPECT_NEAR(expected_improvement(1.0, 1.0, 1.0), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-12);
    EXPECT_DOUBLE_EQ(expected_improvement(1.0, 0.0, 3.0), 2.0);
    EXPECT_DOUBLE_EQ(expected_improvement(5.0, 0.0, 3.0), 0.0);
    const double gain = 0.7, sd = 0.4, u = gain / sd;
    const double phi = std::exp(-0.5 * u * u) / std::sqrt(2 * std::numbers::pi);
    const double cdf = 0.5 * std::erfc(-u / std::sqrt(2.0));
    EXPECT_NEAR(expected_improvement(1.0, sd, 1.0 + gain), gain * cdf + sd * phi, 1e-12);
}

TEST(ExpectedImprovement, MonotoneInMeanAndSd)
{
    double prev = 1e9;
    for (double m = -3; m <= 3; m += 0.25) {
        const double e = expected_improvement(m, 0.5, 0.0);
        EXPECT_LE(e, prev);
        EXPECT_GE(e, 0.0);
        prev = e;
    }
    prev = -1;
    for (double s = 0.01; s < 4; s *= 1.5) {
        const double e = expected_improvement(0.5, s, 0.0);
        EXPECT_GE(e, prev);
        prev = e;
    }
}

TEST(ExpectedImprovement, StrictlyIncreasingInSdAtIncumbent)
{
    double prev = 0.0;
    for (double s = 0.01; s < 10; s += 0.05) {
        const double e = expected_improvement(2.0, s, 2.0);
        EXPECT_GT(e, prev);
        prev = e;
    }
}

TEST(Gp, PosteriorMeanWithinThreeNoiseSdOfNoisyTargets)
{
    std::mt19937_64 eng(9);
    std::uniform_real_distribution<double> u(0, 1);
    std::normal_distribution<double> noise(0, 0.3);
    Eigen::MatrixXd x(25, 3);
    Eigen::VectorXd y(25);
    for (int i = 0; i < 25; ++i) {
        for (int d = 0; d < 3; ++d)
            x(i, d) = u(eng);
        y[i] = 4 * x(i, 0) - 2 * x(i, 1) * x(i, 2) + noise(eng);
    }
    const auto gp = gp_fit(x, y);
    const double noise_sd = gp.target_scale * std::sqrt(gp.noise_variance + gp.jitter);
    for (int i = 0; i < 25; ++i)
        EXPECT_LE(std::abs(gp.predict(x.row(i).transpose()).first - y[i]), 3 * noise_sd + 1e-9) << i;
}

TEST(Propose, DeterministicAtRequestedDepth)
{
    std::vector<EvaluationRecord> recs;
    Rng init(3);
    for (int i = 0; i < 6; ++i) {
        const auto hp = random_hyperparams(2, space5, init);
        recs.push_back({hp, quadratic(hp), 0, "depth"});
    }
    const auto gp = gp_fit(recs, space5);
    Rng a(8), b(8);
    const auto pa = propose_next(gp, space5, 2, 1.0, recs.front().hyperparams, a);
    const auto pb = propose_next(gp, space5, 2, 1.0, recs.front().hyperparams, b);
    EXPECT_EQ(pa, pb);
    EXPECT_EQ(pa.depth, 2);
    EXPECT_NO_THROW(pa.validate(5));
}

TEST(TuneDepth, StopsAtFirstRiseAndKeepsBest)
{
    const std::vector<double> by_depth{10, 8, 9, 1, 1, 1, 1, 1};
    int calls = 0;
    const Objective obj = [&](const Hyperparams& hp, std::uint64_t) {
        ++calls;
        return by_depth[static_cast<std::size_t>(hp.depth - 1)];
    };
    const auto ds = tune_depth(obj, space5, 4);
    EXPECT_EQ(ds.depth_best, (std::vector<double>{10, 8, 9}));
    EXPECT_EQ(ds.best_depth, 2);
    EXPECT_EQ(calls, 3 * (initial_random_evaluations + depth_bo_iterations));
    EXPECT_EQ(ds.records.size(), 48u);
    // Depths are visited in order, each exactly once, with 16 evaluations apiece.
    for (std::size_t i = 0; i < ds.records.size(); ++i)
        EXPECT_EQ(ds.records[i].hyperparams.depth, static_cast<int>(i / 16) + 1);
}

TEST(TuneDepth, RunsToMaximumWhenScoresKeepFalling)
{
    const SearchSpace space{3, 4};
    const Objective obj = [](const Hyperparams& hp, std::uint64_t) { return 10.0 - hp.depth; };
    const auto ds = tune_depth(obj, space, 1);
    EXPECT_EQ(ds.depth_best.size(), 4u);
    EXPECT_EQ(ds.best_depth, 4);
}

TEST(Tune, BudgetAndFailureHandling)
{
    int calls = 0;
    const Objective obj = [&](const Hyperparams& hp, std::uint64_t) -> double {
        ++calls;
        if (hp.base_lr > 0.05)
            throw NumericalError("diverged");
        return hp.depth == 1 ? 5.0 + hp.base_lr : 7.0;
    };
    const auto trace = tune(obj, space5, 9);
    EXPECT_EQ(trace.depth_best.size(), 2u);
    EXPECT_EQ(trace.chosen_depth, 1);
    EXPECT_EQ(calls, 16 * 2 + final_bo_iterations);
    EXPECT_EQ(trace.records.size(), static_cast<std::size_t>(calls));
    EXPECT_EQ(trace.final_hyperparams.depth, 1);
    EXPECT_LE(trace.final_hyperparams.base_lr, 0.05);
    for (const auto& r : trace.records)
        if (r.hyperparams.base_lr > 0.05)
            EXPECT_TRUE(std::isinf(r.score));
    std::size_t finals = 0;
    for (const auto& r : trace.records)
        finals += r.phase == "final";
    EXPECT_EQ(finals, static_cast<std::size_t>(final_bo_iterations));
}

TEST(Tune, DeterministicForSeed)
{
    const Objective obj = [](const Hyperparams& hp, std::uint64_t) { return quadratic(hp); };
    const auto a = tune(obj, space5, 12), b = tune(obj, space5, 12);
    EXPECT_EQ(a.final_hyperparams, b.final_hyperparams);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i)
        EXPECT_EQ(a.records[i].hyperparams, b.records[i].hyperparams);
}

TEST(DepthBo, ReachesQuadraticOptimum)
{
    const oracle::QuadraticSurrogate bowl;
    const Objective obj = [&](const Hyperparams& hp, std::uint64_t) { return bowl(hp); };
    std::vector<EvaluationRecord> recs;
    run_depth_bo(obj, space5, 1, 21, recs);
    ASSERT_EQ(recs.size(), 16u);
    double best = 1e9;
    for (const auto& r : recs)
        best = std::min(best, r.score);
    EXPECT_TRUE(bowl.within(best, 0.05)) << best;
}

TEST(ValidationObjective, ScoresAreFiniteAndSeeded)
{
    const auto ds = oracle::as_dataset(oracle::two_way_system(30, 6));
    const ValidationObjective obj(ds, 1, 50);
    const Hyperparams hp{1, 500, 0.01, 10, 0.01};
    const double a = obj(hp, 7), b = obj(hp, 7);
    EXPECT_EQ(a, b);
    EXPECT_TRUE(std::isfinite(a));
    EXPECT_GT(a, 0.0);
    EXPECT_THROW(ValidationObjective(ds.select_rows({0, 1}), 1), DataError);
}
