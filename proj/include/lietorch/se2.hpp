#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace lietorch {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Wraps an angle into [-pi, pi).
double wrap_angle(double theta);

/// Element of SE(2), identified with a point (x, y, theta) of M2.
/// The orientation is kept wrapped to [-pi, pi).
struct SE2 {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;

    SE2() = default;
    SE2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

    static SE2 identity() { return {}; }
};

/// Coefficients in the left-invariant frame A1 (main), A2 (lateral), A3 (angular).
struct LieVector {
    double c1 = 0.0;
    double c2 = 0.0;
    double c3 = 0.0;

    LieVector operator*(double s) const { return {c1 * s, c2 * s, c3 * s}; }
    LieVector operator-() const { return {-c1, -c2, -c3}; }
    double operator[](int i) const { return i == 0 ? c1 : (i == 1 ? c2 : c3); }
};

/// Diagonal left-invariant metric with weights (wM, wL, wA).
///
/// Weights are stored as logarithms so that unconstrained updates keep them
/// strictly positive.
class MetricParams {
public:
    MetricParams() = default;

    static MetricParams from_weights(double wM, double wL, double wA);
    static MetricParams from_log_weights(double lM, double lL, double lA);

    double weight(int axis) const { return std::exp(log_w_[axis]); }
    double log_weight(int axis) const { return log_w_[axis]; }
    void set_log_weight(int axis, double v) { log_w_[axis] = v; }

    double wM() const { return weight(0); }
    double wL() const { return weight(1); }
    double wA() const { return weight(2); }

    std::array<double, 3> weights() const { return {wM(), wL(), wA()}; }

private:
    std::array<double, 3> log_w_{0.0, 0.0, 0.0};
};

SE2 compose(const SE2& g1, const SE2& g2);
SE2 inverse(const SE2& g);

/// Group logarithm in exponential coordinates of the first kind.
LieVector log_map(const SE2& g);

/// Group exponential; inverse of log_map on the principal branch.
SE2 exp_map(const LieVector& v);

/// Partial derivatives of exp_map: jac[r][c] = d(x, y, theta)_r / d(c1, c2, c3)_c.
std::array<std::array<double, 3>, 3> exp_jacobian(const LieVector& v);

double seminorm(const LieVector& v, const MetricParams& m);

/// Logarithmic estimate of the Riemannian distance from the identity.
double rho(const SE2& p, const MetricParams& m);

/// d rho / d(log wM, log wL, log wA). Throws std::domain_error at rho == 0.
std::array<double, 3> rho_gradient(const SE2& p, const MetricParams& m);

}  // namespace lietorch
