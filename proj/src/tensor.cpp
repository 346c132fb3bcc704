#include "melodyforge/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "melodyforge/error.hpp"

namespace melodyforge::nn {

namespace {
std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }
}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw Error(Errc::ShapeMismatch, "matmul " + shape(a) + " * " + shape(b));
  return a * b;
}

MatmulGrads matmul_backward(const Matrix& a, const Matrix& b, const Matrix& dc) {
  if (a.cols() != b.rows() || dc.rows() != a.rows() || dc.cols() != b.cols())
    throw Error(Errc::ShapeMismatch, "matmul_backward " + shape(a) + " * " + shape(b) + " with dC " + shape(dc));
  return {dc * b.transpose(), a.transpose() * dc};
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

Vector sigmoid(const Vector& x) { return x.unaryExpr([](double v) { return sigmoid(v); }); }

Vector tanh(const Vector& x) { return x.array().tanh().matrix(); }

Vector sigmoid_backward(const Vector& y, const Vector& dy) { return (dy.array() * y.array() * (1.0 - y.array())).matrix(); }

Vector tanh_backward(const Vector& y, const Vector& dy) { return (dy.array() * (1.0 - y.array().square())).matrix(); }

Vector softmax(const Vector& x) {
  Vector e = (x.array() - x.maxCoeff()).exp().matrix();
  return e / e.sum();
}

Vector softmax_backward(const Vector& y, const Vector& dy) { return (y.array() * (dy.array() - y.dot(dy))).matrix(); }

double cross_entropy(const Vector& predicted, int target) {
  if (target < 0 || target >= predicted.size())
    throw Error(Errc::TargetOutOfRange, "target " + std::to_string(target) + " for " + std::to_string(predicted.size()) + " classes");
  return -std::log(std::max(predicted[target], kProbabilityFloor));
}

Vector softmax_cross_entropy_backward(const Vector& predicted, int target) {
  if (target < 0 || target >= predicted.size()) throw Error(Errc::TargetOutOfRange, "target " + std::to_string(target));
  Vector g = predicted;
  g[target] -= 1.0;
  return g;
}

int argmax(const Eigen::Ref<const Vector>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = static_cast<int>(i);
  return best;
}

GradCheckResult grad_check(const std::function<double(const Vector&)>& loss, const std::function<Vector(const Vector&)>& gradient,
                           const Vector& params, double epsilon) {
  const Vector analytic = gradient(params);
  if (analytic.size() != params.size()) throw Error(Errc::ShapeMismatch, "gradient size differs from parameter size");
  GradCheckResult result;
  Vector probe = params;
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    const double saved = probe[k];
    probe[k] = saved + epsilon;
    const double up = loss(probe);
    probe[k] = saved - epsilon;
    const double down = loss(probe);
    probe[k] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double err = std::abs(analytic[k] - numeric) / std::max(std::abs(analytic[k]) + std::abs(numeric), 1e-8);
    if (err > result.max_relative_error || result.worst_index < 0) result = {err, k, analytic[k], numeric};
  }
  return result;
}

}  // namespace melodyforge::nn
