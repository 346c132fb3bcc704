#pragma once

// Dense kernels used by the network, each paired with its backward pass,
// plus a central-difference gradient checker.

#include <Eigen/Dense>
#include <functional>

namespace melodyforge::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kProbabilityFloor = 1e-12;

Matrix matmul(const Matrix& a, const Matrix& b);

struct MatmulGrads {
  Matrix da;  // dC * B^T
  Matrix db;  // A^T * dC
};
MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dc);

double sigmoid(double x);
Vector sigmoid(const Vector& x);
Vector tanh(const Vector& x);

// Backward passes take the forward output y, not the input.
Vector sigmoid_backward(const Vector& y, const Vector& dy);
Vector tanh_backward(const Vector& y, const Vector& dy);

Vector softmax(const Vector& x);
Vector softmax_backward(const Vector& y, const Vector& dy);

/// -log(max(p[target], 1e-12)).
double cross_entropy(const Vector& predicted, int target);
/// Gradient of cross_entropy(softmax(logits)) w.r.t. the logits.
Vector softmax_cross_entropy_backward(const Vector& predicted, int target);

/// Lowest index among maximal entries.
int argmax(const Eigen::Ref<const Vector>& v);

struct GradCheckResult {
  double max_relative_error = 0.0;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares `gradient(params)` against (f(θ+ε) - f(θ-ε)) / 2ε coordinate by
/// coordinate. Relative error is |a - n| / max(|a| + |n|, 1e-8).
GradCheckResult grad_check(const std::function<double(const Vector&)>& loss,
                           const std::function<Vector(const Vector&)>& gradient,
                           const Vector& params, double epsilon = 1e-5);

}  // namespace melodyforge::nn
