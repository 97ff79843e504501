#pragma once
// chbt/photon_sim.hpp - seeded photon timestamp simulation for the two
// detection channels.
//
// The detection chain is modeled as frequency relabeling: photons from each
// source accrue spatial phase at their original wavelength, but the two
// channels beat at the post-conversion frequency difference f3_1 - f3_2.
// Detector B additionally carries the static fiber phase and a drifting noise
// phase; only phase differences between the detectors are observable, so
// putting the noise on one side loses no generality.
//
// Timestamps are quantized to integer picoseconds at generation (the TDC
// granularity of the stream file format), which makes the binary round trip
// lossless and the staged pipeline bit-identical to the in-memory one.

#include <cstdint>
#include <optional>
#include <vector>

#include "chbt/geometry.hpp"

namespace chbt {

enum class Channel : std::uint8_t { A = 0, B = 1 };

inline char channel_name(Channel c) { return c == Channel::A ? 'A' : 'B'; }

/// Detection-chain parameters shared by both telescopes.
struct DetectionChainSpec {
    double f3_1 = 0.0;         ///< post-conversion frequency offset, source-1 channel [Hz]
    double f3_2 = 0.0;         ///< post-conversion frequency offset, source-2 channel [Hz]
    double amp1 = 1.0;         ///< source-1 field amplitude at the detectors
    double amp2 = 1.0;         ///< source-2 field amplitude at the detectors
    double rate_scale = 1e5;   ///< mean photon rate per detector at unit intensity [counts/s]
    double jitter_sigma = 0.0; ///< detector timing jitter, Gaussian std [s]
    std::optional<double> coherence_time;  ///< envelope time constant [s]; empty = monochromatic

    double beat() const { return f3_1 - f3_2; }

    /// Throws std::invalid_argument on invalid values; logs a warning when the
    /// beat period does not exceed 10x the timing jitter.
    void validate() const;
};

/// Static fiber phase plus a drifting zero-mean noise phase.
struct NoiseModel {
    double phi_f = 0.0;        ///< static fiber phase [rad]
    double phi_n_sigma = 0.0;  ///< stationary std of the drifting phase [rad]
    double phi_n_tau = 1.0;    ///< correlation time of the drift [s]
    std::uint64_t seed = 0;    ///< reproducibility seed for the noise path

    void validate() const;
};

/// Time-tagged detections of one channel. Timestamps are picoseconds from the
/// acquisition start, non-negative and sorted ascending.
struct EventStream {
    Channel channel = Channel::A;
    std::vector<std::uint64_t> times_ps;

    std::size_t size() const { return times_ps.size(); }
    bool empty() const { return times_ps.empty(); }
    double time_s(std::size_t i) const { return static_cast<double>(times_ps[i]) * 1e-12; }
    /// Latest timestamp in seconds (0 for an empty stream).
    double span_s() const { return empty() ? 0.0 : static_cast<double>(times_ps.back()) * 1e-12; }
};

struct StreamPair {
    EventStream a;
    EventStream b;
};

/// Baseline sweep protocol: the telescopes move symmetrically, the baseline
/// is chopped into fixed-width segments and one g2 measurement is taken per
/// segment with x frozen at the segment midpoint.
struct SweepPlan {
    double x_start = 0.0;       ///< [m]
    double x_end = 0.0;         ///< [m]
    double x_speed = 0.0;       ///< [m/s]
    double segment_width = 0.0; ///< [m]

    std::size_t segments() const;
    double segment_mid(std::size_t k) const { return x_start + (static_cast<double>(k) + 0.5) * segment_width; }
    /// Wall-clock time the telescopes spend inside one segment.
    double transit_time() const { return segment_width / x_speed; }

    /// Throws std::invalid_argument unless the span divides into >= 8 segments
    /// of the requested width.
    void validate() const;
};

/// Regularly sampled noise-phase path with linear interpolation in between.
struct NoisePath {
    double t0 = 0.0;  ///< wall-clock time of the first sample [s]
    double dt = 0.0;  ///< sample spacing [s]
    std::vector<double> phi;

    double at(double t) const;
};

/// Fringe visibility produced by a pair of field amplitudes:
///   4 a1^2 a2^2 / (a1^2 + a2^2)^2.
double visibility_for_amplitudes(double amp1, double amp2);

/// Inverse of the above: the amplitude ratio amp2/amp1 (<= 1 root) that
/// produces a target visibility in (0, 1].
double amplitude_ratio_for_visibility(double epsilon);

/// Instantaneous detector intensity |E1 + E2|^2 for the two-field model.
/// phi_n (noise phase, detector B only) and source_phase (relative source
/// phase, both detectors) are supplied by the caller. Deterministic.
double intensity_at(double t, Channel detector, const SourcePair& scene,
                    const BaselineGeometry& geom, const DetectionChainSpec& chain,
                    double phi_n, double source_phase = 0.0);

/// Mean-reverting Gaussian (Ornstein-Uhlenbeck) path with stationary std
/// phi_n_sigma and correlation time phi_n_tau, sampled every dt for the given
/// duration. Exact discretization; the same seed reproduces the path
/// bit-for-bit. phi_n_sigma = 0 yields all-zero samples.
NoisePath phase_noise_path(const NoiseModel& model, double duration, double dt);

/// Core generator: inhomogeneous-Poisson thinning of both channels against
/// intensity_at, with the noise phase read from a precomputed path at
/// wall-clock time t_wall_offset + t. Event timestamps are local to the
/// segment (start at 0).
StreamPair generate_events_with_noise(const SourcePair& scene, const BaselineGeometry& geom,
                                      const DetectionChainSpec& chain, const NoisePath& noise_path,
                                      double phi_f, double t_wall_offset, double duration,
                                      std::uint64_t seed);

/// One-shot convenience: builds the noise path internally and generates one
/// stream pair of the given duration.
StreamPair generate_events(const SourcePair& scene, const BaselineGeometry& geom,
                           const DetectionChainSpec& chain, const NoiseModel& noise,
                           double duration, std::uint64_t seed);

struct SweepSegment {
    std::size_t index = 0;   ///< segment number within the sweep
    double x_mid = 0.0;      ///< frozen baseline for this segment [m]
    double t_start = 0.0;    ///< wall-clock start within the sweep [s]
    StreamPair streams;
};

/// Simulates one full sweep: one continuous noise path for the sweep, one
/// stream pair per segment with x frozen at the segment midpoint. dwell is
/// the acquisition time per segment and may not exceed the transit time.
std::vector<SweepSegment> simulate_sweep(const SourcePair& scene, const DetectionChainSpec& chain,
                                         const NoiseModel& noise, const SweepPlan& plan,
                                         double dwell, std::uint64_t seed);

}  // namespace chbt
