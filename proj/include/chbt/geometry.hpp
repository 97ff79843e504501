#pragma once
// chbt/geometry.hpp - two-source / two-telescope scene and the spatial phase
// of the intensity interference.
//
// Canonical frame: the interferometer baseline is the horizontal axis and its
// perpendicular bisector the vertical axis. Telescopes sit at (-x/2, 0) and
// (x/2, 0); the sources at (L*alpha - d/2, L) and (L*alpha + d/2, L). All
// geometry is planar.

#include <cstddef>

namespace chbt {

struct Vec2 {
    double x = 0.0;  ///< [m]
    double y = 0.0;  ///< [m]
};

/// Wavelength combinations that govern the chromatic fringe.
struct DerivedWavelengths {
    double lambda_a = 0.0;      ///< arithmetic mean wavelength [m]
    double lambda_h = 0.0;      ///< harmonic mean wavelength [m]
    double delta_lambda = 0.0;  ///< lambda1 - lambda2, signed [m]
};

/// The two point sources and their placement relative to the baseline.
struct SourcePair {
    double lambda1 = 0.0;  ///< wavelength of source 1 [m]
    double lambda2 = 0.0;  ///< wavelength of source 2 [m]
    double d = 0.0;        ///< projected source separation [m]
    double L = 0.0;        ///< distance from target to baseline [m]
    double alpha = 0.0;    ///< baseline-bisector to source-midpoint angle [rad]

    double theta() const { return d / L; }

    /// True when the small-angle expressions hold to the accuracy the rest of
    /// the pipeline assumes (d/L < 1e-3 and |alpha| < 1e-2).
    bool small_angle_valid() const;

    /// Throws std::invalid_argument on non-positive wavelengths or distance,
    /// or negative separation.
    void validate() const;
};

/// Concrete positions for one baseline setting.
struct BaselineGeometry {
    double x = 0.0;  ///< telescope separation [m]
    Vec2 rA;         ///< telescope A position [m]
    Vec2 rB;         ///< telescope B position [m]
    Vec2 r1;         ///< source 1 position [m]
    Vec2 r2;         ///< source 2 position [m]

    /// Canonical-frame layout for a scene at telescope separation x.
    static BaselineGeometry from_scene(const SourcePair& scene, double x);
};

/// lambda_a, lambda_h and delta_lambda for a wavelength pair.
/// Throws std::invalid_argument on non-positive input.
DerivedWavelengths derived_wavelengths(double lambda1, double lambda2);

/// |r - b| - |r - a| without catastrophic cancellation. The difference of the
/// two ~L-scale distances is evaluated through the difference-of-squares form
/// so that nm-scale path differences survive at km-scale ranges.
double path_difference(const Vec2& r, const Vec2& a, const Vec2& b);

/// Spatial interference phase from exact Euclidean path differences:
///   (2*pi/lambda1) * (|r1-rB| - |r1-rA|) - (2*pi/lambda2) * (|r2-rB| - |r2-rA|)
double exact_spatial_phase(const BaselineGeometry& geom, double lambda1, double lambda2);

struct SmallAnglePhase {
    double phase = 0.0;        ///< [rad]
    bool within_regime = true; ///< false: value computed but accuracy degraded
};

/// Small-angle spatial phase (2*pi*x/lambda_h) * (theta + alpha*delta_lambda/lambda_a).
/// Always computes; flags the result when (theta, alpha) leave the small-angle
/// regime.
SmallAnglePhase small_angle_spatial_phase(double x, double theta, double alpha,
                                          const DerivedWavelengths& dw);

}  // namespace chbt
