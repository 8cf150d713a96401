#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "perfbnn/errors.hpp"
#include "perfbnn/special.hpp"

using namespace perfbnn;

namespace {

// Bisection on the erf-based CDF.
double quantile_by_bisection(double p)
{
    double lo = -40.0, hi = 40.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double t_density(double x, double df)
{
    return std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * std::numbers::pi) *
           std::pow(1 + x * x / df, -(df + 1) / 2);
}

// Composite Simpson integration of the density from 0 to |t|.
double t_cdf_by_integration(double t, double df)
{
    const int n = 200000;
    const double a = 0.0, b = std::abs(t), h = (b - a) / n;
    double s = t_density(a, df) + t_density(b, df);
    for (int i = 1; i < n; ++i)
        s += t_density(a + i * h, df) * (i % 2 ? 4 : 2);
    const double half = s * h / 3;
    return t >= 0 ? 0.5 + half : 0.5 - half;
}

} // namespace

TEST(Special, SoftplusInverseRoundTrip)
{
    for (double y : {1e-6, 1e-3, 0.05, 1.0, 7.5, 29.0, 31.0, 200.0})
        EXPECT_NEAR(softplus(inverse_softplus(y)), y, 1e-12 * std::max(1.0, y));
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
    EXPECT_DOUBLE_EQ(softplus(800.0), 800.0);
}

TEST(Special, NormalQuantileMatchesBisection)
{
    for (double p = 0.0005; p < 1.0; p += 0.0137)
        EXPECT_NEAR(normal_quantile(p), quantile_by_bisection(p), 1e-9) << "p=" << p;
    for (double p : {1e-10, 1e-6, 1 - 1e-6})
        EXPECT_NEAR(normal_quantile(p), quantile_by_bisection(p), 1e-8) << "p=" << p;
}

TEST(Special, ZScoreKnownLevels)
{
    EXPECT_NEAR(z_score(95.0), 1.959964, 1e-6);
    EXPECT_NEAR(z_score(68.2689492137), 1.0, 1e-6);
    EXPECT_NEAR(z_score(1e-9), 0.0, 1e-9);
    EXPECT_THROW(z_score(0.0), DataError);
    EXPECT_THROW(z_score(100.0), DataError);
    EXPECT_THROW(z_score(-5.0), DataError);
}

TEST(Special, ZScoreStrictlyIncreasing)
{
    double prev = 0.0;
    for (double r = 1.0; r < 100.0; r += 1.0) {
        const double z = z_score(r);
        EXPECT_GT(z, prev);
        prev = z;
    }
}

TEST(Special, StudentTCdfMatchesIntegration)
{
    for (double df : {1.0, 2.5, 4.0, 9.0, 30.0})
        for (double t : {-6.0, -2.0, -0.3, 0.0, 0.7, 1.5, 4.0})
            EXPECT_NEAR(student_t_cdf(t, df), t_cdf_by_integration(t, df), 1e-8) << "t=" << t << " df=" << df;
}

TEST(Special, StudentTQuantileKnownValues)
{
    EXPECT_NEAR(student_t_quantile(0.975, 1.0), 12.706204736, 1e-6);
    EXPECT_NEAR(student_t_quantile(0.975, 19.0), 2.093024054, 1e-8);
    EXPECT_NEAR(student_t_quantile(0.5, 7.0), 0.0, 1e-10);
    for (double df : {1.0, 3.0, 12.0})
        for (double p : {0.01, 0.2, 0.9, 0.999})
            EXPECT_NEAR(student_t_cdf(student_t_quantile(p, df), df), p, 1e-10);
}

TEST(Special, IncompleteBetaSymmetry)
{
    for (double a : {0.5, 1.0, 3.0})
        for (double b : {0.5, 2.0, 7.0})
            for (double x : {0.1, 0.4, 0.8})
                EXPECT_NEAR(incomplete_beta(a, b, x) + incomplete_beta(b, a, 1 - x), 1.0, 1e-12);
    EXPECT_NEAR(incomplete_beta(1.0, 1.0, 0.3), 0.3, 1e-14);
    EXPECT_NEAR(incomplete_beta(2.0, 1.0, 0.5), 0.25, 1e-14);
}
