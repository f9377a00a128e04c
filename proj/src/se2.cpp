#include "lietorch/se2.hpp"

#include <stdexcept>

namespace lietorch {

double wrap_angle(double theta) {
    if (theta >= -kPi && theta < kPi) return theta;
    double r = theta - kTwoPi * std::floor((theta + kPi) / kTwoPi);
    if (r >= kPi) r -= kTwoPi;
    if (r < -kPi) r += kTwoPi;
    return r;
}

MetricParams MetricParams::from_weights(double wM, double wL, double wA) {
    if (!(wM > 0.0) || !(wL > 0.0) || !(wA > 0.0)) {
        throw std::invalid_argument("metric weights must be strictly positive");
    }
    return from_log_weights(std::log(wM), std::log(wL), std::log(wA));
}

MetricParams MetricParams::from_log_weights(double lM, double lL, double lA) {
    MetricParams m;
    m.log_w_ = {lM, lL, lA};
    return m;
}

SE2 compose(const SE2& g1, const SE2& g2) {
    const double c = std::cos(g1.theta);
    const double s = std::sin(g1.theta);
    return {g1.x + c * g2.x - s * g2.y, g1.y + s * g2.x + c * g2.y, g1.theta + g2.theta};
}

SE2 inverse(const SE2& g) {
    const double c = std::cos(g.theta);
    const double s = std::sin(g.theta);
    return {-c * g.x - s * g.y, s * g.x - c * g.y, -g.theta};
}

namespace {

// (theta/2) * cot(theta/2), removable singularity at 0.
double half_cot(double theta) {
    const double a = std::abs(theta);
    if (a < 1e-7) return 1.0;
    if (a < 1e-3) {
        const double t2 = theta * theta;
        return 1.0 - t2 / 12.0 - t2 * t2 / 720.0 - t2 * t2 * t2 / 30240.0;
    }
    const double h = 0.5 * theta;
    return h * std::cos(h) / std::sin(h);
}

struct ExpCoefficients {
    double s;   // sin(a)/a
    double c;   // (1 - cos(a))/a
    double ds;  // d/da of s
    double dc;  // d/da of c
};

ExpCoefficients exp_coefficients(double a) {
    if (std::abs(a) < 1e-3) {
        const double a2 = a * a;
        return {1.0 - a2 / 6.0 + a2 * a2 / 120.0, a / 2.0 - a * a2 / 24.0 + a * a2 * a2 / 720.0,
                -a / 3.0 + a * a2 / 30.0, 0.5 - a2 / 8.0 + a2 * a2 / 144.0};
    }
    const double sa = std::sin(a);
    const double ca = std::cos(a);
    return {sa / a, (1.0 - ca) / a, (a * ca - sa) / (a * a), (a * sa - (1.0 - ca)) / (a * a)};
}

}  // namespace

LieVector log_map(const SE2& g) {
    const double th = g.theta;
    // Near zero (theta/2) cot(theta/2) = 1 to double precision; the first-order term stays.
    if (std::abs(th) < 1e-7) return {g.x + 0.5 * th * g.y, -0.5 * th * g.x + g.y, th};
    const double s = half_cot(th);
    const double h = 0.5 * th;
    return {s * g.x + h * g.y, -h * g.x + s * g.y, th};
}

SE2 exp_map(const LieVector& v) {
    const auto k = exp_coefficients(v.c3);
    return {v.c1 * k.s - v.c2 * k.c, v.c1 * k.c + v.c2 * k.s, v.c3};
}

std::array<std::array<double, 3>, 3> exp_jacobian(const LieVector& v) {
    const auto k = exp_coefficients(v.c3);
    return {{{k.s, -k.c, v.c1 * k.ds - v.c2 * k.dc},
             {k.c, k.s, v.c1 * k.dc + v.c2 * k.ds},
             {0.0, 0.0, 1.0}}};
}

double seminorm(const LieVector& v, const MetricParams& m) {
    return std::sqrt(m.wM() * v.c1 * v.c1 + m.wL() * v.c2 * v.c2 + m.wA() * v.c3 * v.c3);
}

double rho(const SE2& p, const MetricParams& m) { return seminorm(log_map(p), m); }

std::array<double, 3> rho_gradient(const SE2& p, const MetricParams& m) {
    const LieVector c = log_map(p);
    const double r = seminorm(c, m);
    if (!(r > 0.0)) throw std::domain_error("rho_gradient is undefined at the identity");
    return {m.wM() * c.c1 * c.c1 / (2.0 * r), m.wL() * c.c2 * c.c2 / (2.0 * r),
            m.wA() * c.c3 * c.c3 / (2.0 * r)};
}

}  // namespace lietorch
