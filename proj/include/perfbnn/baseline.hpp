#pragma once

#include <Eigen/Dense>

#include "perfbnn/dataset.hpp"

namespace perfbnn {

/// Ordinary least squares on the raw option values plus an intercept. Used as the
/// linear reference model in comparisons.
class LinearBaseline {
public:
    static LinearBaseline fit(const PerformanceDataset& ds)
    {
        const Eigen::MatrixXd design = with_intercept(ds.rows);
        LinearBaseline m;
        m.coef_ = design.completeOrthogonalDecomposition().solve(ds.performance);
        return m;
    }

    Eigen::VectorXd predict(const Eigen::MatrixXd& rows) const { return with_intercept(rows) * coef_; }

    const Eigen::VectorXd& coefficients() const noexcept { return coef_; }

private:
    static Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& rows)
    {
        Eigen::MatrixXd d(rows.rows(), rows.cols() + 1);
        d.col(0).setOnes();
        d.rightCols(rows.cols()) = rows;
        return d;
    }

    Eigen::VectorXd coef_;
};

} // namespace perfbnn
