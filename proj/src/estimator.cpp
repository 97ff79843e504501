#include "chbt/estimator.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace chbt {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

ThetaEstimate theta_from_slope(double m_bar, double sigma_m, double sigma_alpha,
                               const DerivedWavelengths& dw) {
    if (sigma_m < 0.0 || sigma_alpha < 0.0)
        throw std::invalid_argument("theta_from_slope: uncertainties must be non-negative");
    ThetaEstimate est;
    est.m_bar = m_bar;
    est.sigma_m = sigma_m;
    est.sigma_alpha = sigma_alpha;
    est.dw = dw;
    est.theta = m_bar * dw.lambda_h / kTwoPi;
    // hypot keeps the sigma_m = 0 slice exactly equal to resolution_limit.
    est.sigma_theta = std::hypot(dw.lambda_h / kTwoPi * sigma_m,
                                 dw.delta_lambda / dw.lambda_a * sigma_alpha);
    return est;
}

double resolution_limit(const DerivedWavelengths& dw, double sigma_alpha) {
    if (sigma_alpha < 0.0)
        throw std::invalid_argument("resolution_limit: sigma_alpha must be non-negative");
    return std::abs(dw.delta_lambda / dw.lambda_a * sigma_alpha);
}

double diffraction_limit(double lambda, double aperture) {
    if (!(lambda > 0.0) || !(aperture > 0.0))
        throw std::invalid_argument("diffraction_limit: lambda and aperture must be positive");
    return 1.22 * lambda / aperture;
}

double resolution_gain(double sigma_theta, double diffraction) {
    if (!(sigma_theta > 0.0) || !(diffraction > 0.0))
        throw std::invalid_argument("resolution_gain: inputs must be positive");
    return diffraction / sigma_theta;
}

}  // namespace chbt
