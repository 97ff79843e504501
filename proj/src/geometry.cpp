#include "chbt/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace chbt {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

bool SourcePair::small_angle_valid() const {
    return theta() < 1e-3 && std::abs(alpha) < 1e-2;
}

void SourcePair::validate() const {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0))
        throw std::invalid_argument("SourcePair: wavelengths must be positive");
    if (!(L > 0.0)) throw std::invalid_argument("SourcePair: L must be positive");
    if (d < 0.0) throw std::invalid_argument("SourcePair: d must be non-negative");
}

BaselineGeometry BaselineGeometry::from_scene(const SourcePair& scene, double x) {
    if (!(x > 0.0)) throw std::invalid_argument("BaselineGeometry: x must be positive");
    BaselineGeometry g;
    g.x = x;
    g.rA = {-x / 2.0, 0.0};
    g.rB = {x / 2.0, 0.0};
    g.r1 = {scene.L * scene.alpha - scene.d / 2.0, scene.L};
    g.r2 = {scene.L * scene.alpha + scene.d / 2.0, scene.L};
    return g;
}

DerivedWavelengths derived_wavelengths(double lambda1, double lambda2) {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0))
        throw std::invalid_argument("derived_wavelengths: wavelengths must be positive");
    DerivedWavelengths dw;
    dw.lambda_a = (lambda1 + lambda2) / 2.0;
    dw.lambda_h = 2.0 * lambda1 * lambda2 / (lambda1 + lambda2);
    dw.delta_lambda = lambda1 - lambda2;
    return dw;
}

double path_difference(const Vec2& r, const Vec2& a, const Vec2& b) {
    // |r-b|^2 - |r-a|^2 = 2 * (r - (a+b)/2) . (a - b), expanded from the
    // components so no large squares are ever subtracted.
    const double mx = (a.x + b.x) / 2.0;
    const double my = (a.y + b.y) / 2.0;
    const double numerator =
        2.0 * ((r.x - mx) * (a.x - b.x) + (r.y - my) * (a.y - b.y));
    const double dist_b = std::hypot(r.x - b.x, r.y - b.y);
    const double dist_a = std::hypot(r.x - a.x, r.y - a.y);
    return numerator / (dist_b + dist_a);
}

double exact_spatial_phase(const BaselineGeometry& geom, double lambda1, double lambda2) {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0))
        throw std::invalid_argument("exact_spatial_phase: wavelengths must be positive");
    const double pd1 = path_difference(geom.r1, geom.rA, geom.rB);
    const double pd2 = path_difference(geom.r2, geom.rA, geom.rB);
    return kTwoPi * (pd1 / lambda1 - pd2 / lambda2);
}

SmallAnglePhase small_angle_spatial_phase(double x, double theta, double alpha,
                                          const DerivedWavelengths& dw) {
    SmallAnglePhase out;
    out.phase = kTwoPi * x / dw.lambda_h * (theta + alpha * dw.delta_lambda / dw.lambda_a);
    out.within_regime = theta < 1e-3 && std::abs(alpha) < 1e-2;
    return out;
}

}  // namespace chbt
