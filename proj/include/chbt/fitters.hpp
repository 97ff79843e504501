#pragma once
// chbt/fitters.hpp - parameter extraction from g2 histograms.
//
// fit_g2 does weighted least squares of 1 + (eps/2)*cos(2*pi*f*tau + phi)
// against a histogram. The inner iteration runs on quadrature components
// (A*cos + B*sin) plus f, which stays well-conditioned through phase wraps
// and at zero visibility; (eps, phi) and their errors are recovered from
// (A, B) afterwards. unwrap_phases and fit_slope turn per-segment phases
// into the phase-versus-baseline slope.

#include <cstddef>
#include <vector>

#include "chbt/correlator.hpp"

namespace chbt {

/// Result of one g2 oscillation fit.
struct G2Fit {
    double epsilon = 0.0;     ///< visibility
    double f_beat = 0.0;      ///< oscillation frequency [Hz], always positive
    double phi_c = 0.0;       ///< phase in (-pi, pi]
    double se_epsilon = 0.0;
    double se_f = 0.0;        ///< [Hz]
    double se_phi = 0.0;      ///< [rad]
    double chi2_dof = 0.0;
    bool converged = false;
    std::size_t n_bins_used = 0;
    /// False when epsilon exceeds the physical bound 1 by more than 3 standard
    /// errors; kept as a quality flag rather than an error.
    bool epsilon_physical = true;
};

struct G2FitOptions {
    /// The fitter constrains f > 0; cos is even, so data generated with a
    /// negative beat frequency fits identically with the phase negated. Set
    /// this when the detection chain is known to run with f3_1 < f3_2 and the
    /// reported phi_c flips sign accordingly.
    bool beat_sign_negative = false;
    double tolerance = 1e-8;
    int max_iterations = 100;
};

/// One phase sample of a baseline sweep. se_phi <= 0 (or NaN) means the
/// uncertainty is unknown; fits fall back to unweighted in that case.
struct PhasePoint {
    double x = 0.0;       ///< baseline [m]
    double phi = 0.0;     ///< [rad]
    double se_phi = 0.0;  ///< [rad]
};

/// Weighted line fit phi = m*x + intercept over a sweep.
struct SlopeFit {
    double m = 0.0;          ///< [rad/m]
    double intercept = 0.0;  ///< [rad]
    double se_m = 0.0;       ///< [rad/m]
    double r_squared = 0.0;
    std::vector<PhasePoint> points;
};

/// Mean and Bessel-corrected standard deviation of repeated slope
/// measurements.
struct SlopeStats {
    double m_bar = 0.0;    ///< [rad/m]
    double sigma_m = 0.0;  ///< [rad/m]
};

/// Oscillation frequency estimate from the peak of the histogram's
/// periodogram (mean removed, zero-count bins ignored), refined by quadratic
/// interpolation around the peak. Throws std::runtime_error("no oscillation
/// detected...") when the peak does not rise to 5x the median power.
double estimate_beat_frequency(const CorrelationHistogram& hist);

/// Weighted least squares of the g2 oscillation model. f_init must be within
/// ~20% of the true beat (use estimate_beat_frequency). Non-convergence is
/// reported through the converged flag, not an exception; fewer than 6 usable
/// bins throws std::invalid_argument.
G2Fit fit_g2(const CorrelationHistogram& hist, double f_init, const G2FitOptions& options = {});

/// Sequential phase unwrapping: adds integer multiples of 2*pi so every
/// consecutive difference lies in (-pi, pi]. Points must be sorted by x.
std::vector<PhasePoint> unwrap_phases(std::vector<PhasePoint> points);

/// Weighted (default) or unweighted linear least squares of phi against x.
/// Throws std::invalid_argument on fewer than 3 points or a degenerate design
/// (all x identical).
SlopeFit fit_slope(const std::vector<PhasePoint>& points, bool weighted = true);

/// Throws std::invalid_argument on fewer than 2 samples.
SlopeStats aggregate_slopes(const std::vector<double>& slopes);

/// Folds an angle into (-pi, pi].
double wrap_phase(double phi);

}  // namespace chbt
