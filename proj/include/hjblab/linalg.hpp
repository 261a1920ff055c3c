#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace hjblab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Convex combination lambda*x1 + (1-lambda)*x0, evaluated so that the
/// endpoints lambda = 0 and lambda = 1 reproduce x0 and x1 bitwise.
inline Vector convex_combination(const Vector& x0, const Vector& x1, double lambda) {
    return lambda * x1 + (1.0 - lambda) * x0;
}

}  // namespace hjblab
