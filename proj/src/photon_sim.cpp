#include "chbt/photon_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "chbt/log.hpp"
#include "chbt/rng.hpp"

namespace chbt {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Seed-stream purpose tags.
constexpr std::uint64_t kTagEvents = 0x45564e54;  // "EVNT"
constexpr std::uint64_t kTagNoise = 0x4e4f4953;   // "NOIS"

std::uint64_t quantize_ps(double t_s) {
    const double ps = std::round(t_s * 1e12);
    return ps <= 0.0 ? 0 : static_cast<std::uint64_t>(ps);
}

}  // namespace

void DetectionChainSpec::validate() const {
    if (!(rate_scale > 0.0))
        throw std::invalid_argument("DetectionChainSpec: rate_scale must be positive");
    if (jitter_sigma < 0.0)
        throw std::invalid_argument("DetectionChainSpec: jitter_sigma must be non-negative");
    if (amp1 < 0.0 || amp2 < 0.0)
        throw std::invalid_argument("DetectionChainSpec: amplitudes must be non-negative");
    if (coherence_time && !(*coherence_time > 0.0))
        throw std::invalid_argument("DetectionChainSpec: coherence_time must be positive");
    const double beat_mag = std::abs(beat());
    if (beat_mag == 0.0) {
        log::warn("chain: f3_1 == f3_2, chromatic beat disabled");
    } else if (jitter_sigma > 0.0 && 1.0 / beat_mag <= 10.0 * jitter_sigma) {
        log::warn("chain: beat period " + std::to_string(1.0 / beat_mag) +
                  " s does not exceed 10x jitter_sigma; fitted oscillation will wash out");
    }
}

void NoiseModel::validate() const {
    if (phi_n_sigma < 0.0)
        throw std::invalid_argument("NoiseModel: phi_n_sigma must be non-negative");
    if (!(phi_n_tau > 0.0))
        throw std::invalid_argument("NoiseModel: phi_n_tau must be positive");
}

std::size_t SweepPlan::segments() const {
    return static_cast<std::size_t>(std::llround((x_end - x_start) / segment_width));
}

void SweepPlan::validate() const {
    if (!(x_start < x_end)) throw std::invalid_argument("SweepPlan: x_start must be < x_end");
    if (!(x_speed > 0.0)) throw std::invalid_argument("SweepPlan: x_speed must be positive");
    if (!(segment_width > 0.0))
        throw std::invalid_argument("SweepPlan: segment_width must be positive");
    const double span = x_end - x_start;
    const double n_exact = span / segment_width;
    const double n_round = std::llround(n_exact);
    if (std::abs(n_exact - n_round) > 1e-9 * std::max(1.0, n_exact))
        throw std::invalid_argument("SweepPlan: segment_width must divide the baseline span");
    if (n_round < 8)
        throw std::invalid_argument("SweepPlan: need >= 8 segments for a usable line fit, got " +
                                    std::to_string(static_cast<long long>(n_round)));
}

double NoisePath::at(double t) const {
    if (phi.empty()) return 0.0;
    if (phi.size() == 1 || dt <= 0.0) return phi.front();
    const double u = (t - t0) / dt;
    if (u <= 0.0) return phi.front();
    const auto last = static_cast<double>(phi.size() - 1);
    if (u >= last) return phi.back();
    const auto i = static_cast<std::size_t>(u);
    const double frac = u - static_cast<double>(i);
    return phi[i] + frac * (phi[i + 1] - phi[i]);
}

double visibility_for_amplitudes(double amp1, double amp2) {
    const double i1 = amp1 * amp1;
    const double i2 = amp2 * amp2;
    const double total = i1 + i2;
    if (total == 0.0) return 0.0;
    return 4.0 * i1 * i2 / (total * total);
}

double amplitude_ratio_for_visibility(double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 1.0)
        throw std::invalid_argument("amplitude_ratio_for_visibility: epsilon must be in (0, 1]");
    // Solve eps = 4 u / (1 + u)^2 for u = (amp2/amp1)^2, taking the root <= 1.
    const double u = (2.0 - epsilon - 2.0 * std::sqrt(1.0 - epsilon)) / epsilon;
    return std::sqrt(u);
}

double intensity_at(double t, Channel detector, const SourcePair& scene,
                    const BaselineGeometry& geom, const DetectionChainSpec& chain,
                    double phi_n, double source_phase) {
    const Vec2& det = detector == Channel::A ? geom.rA : geom.rB;
    const double dist1 = std::hypot(geom.r1.x - det.x, geom.r1.y - det.y);
    const double dist2 = std::hypot(geom.r2.x - det.x, geom.r2.y - det.y);
    // Relative phase of the two fields. The fiber and drift phases ride on
    // detector B only; the relative source phase is common to both detectors.
    double rel = kTwoPi * (chain.beat() * t + dist1 / scene.lambda1 - dist2 / scene.lambda2) +
                 source_phase;
    if (detector == Channel::B) rel += phi_n;
    return chain.amp1 * chain.amp1 + chain.amp2 * chain.amp2 +
           2.0 * chain.amp1 * chain.amp2 * std::cos(rel);
}

NoisePath phase_noise_path(const NoiseModel& model, double duration, double dt) {
    if (!(duration > 0.0)) throw std::invalid_argument("phase_noise_path: duration must be positive");
    if (!(dt > 0.0)) throw std::invalid_argument("phase_noise_path: dt must be positive");
    model.validate();

    const auto n = static_cast<std::size_t>(std::ceil(duration / dt)) + 1;
    NoisePath path;
    path.t0 = 0.0;
    path.dt = dt;
    path.phi.resize(n);
    if (model.phi_n_sigma == 0.0) {
        std::fill(path.phi.begin(), path.phi.end(), 0.0);
        return path;
    }

    // Exact OU update: phi' = phi * a + sigma * sqrt(1 - a^2) * N(0,1), with
    // the first sample drawn from the stationary distribution.
    Rng rng(derive_seed(model.seed, kTagNoise));
    const double a = std::exp(-dt / model.phi_n_tau);
    const double step_sigma = model.phi_n_sigma * std::sqrt(1.0 - a * a);
    path.phi[0] = model.phi_n_sigma * rng.gaussian();
    for (std::size_t i = 1; i < n; ++i)
        path.phi[i] = path.phi[i - 1] * a + step_sigma * rng.gaussian();
    return path;
}

StreamPair generate_events_with_noise(const SourcePair& scene, const BaselineGeometry& geom,
                                      const DetectionChainSpec& chain, const NoisePath& noise_path,
                                      double phi_f, double t_wall_offset, double duration,
                                      std::uint64_t seed) {
    scene.validate();
    chain.validate();
    if (!(duration > 0.0))
        throw std::invalid_argument("generate_events: duration must be positive");
    const double beat_mag = std::abs(chain.beat());
    if (beat_mag > 0.0 && duration * beat_mag < 100.0)
        log::warn("generate_events: duration covers only " +
                  std::to_string(duration * beat_mag) + " beat periods (< 100)");

    StreamPair out;
    out.a.channel = Channel::A;
    out.b.channel = Channel::B;

    const double peak_intensity =
        (chain.amp1 + chain.amp2) * (chain.amp1 + chain.amp2);
    const double rate_max = chain.rate_scale * peak_intensity;
    if (!(rate_max > 0.0)) {
        log::warn("generate_events: zero expected counts, returning empty streams");
        return out;
    }

    Rng rng(derive_seed(seed, kTagEvents));

    // Candidates for both channels come from one merged homogeneous process at
    // rate 2*rate_max with a fair channel mark. This keeps the channels
    // statistically independent while letting a single time-ordered pass carry
    // the source-phase random walk shared by both detectors.
    const bool coherent_envelope = chain.coherence_time.has_value();
    const double diffusion = coherent_envelope ? 2.0 / *chain.coherence_time : 0.0;
    double source_phase = 0.0;
    double t = 0.0;
    while (true) {
        const double gap = rng.exponential(2.0 * rate_max);
        t += gap;
        if (t > duration) break;
        if (coherent_envelope && diffusion > 0.0)
            source_phase += std::sqrt(diffusion * gap) * rng.gaussian();
        const Channel ch = rng.uniform() < 0.5 ? Channel::A : Channel::B;
        const double phi_n = ch == Channel::B ? phi_f + noise_path.at(t_wall_offset + t) : 0.0;
        const double intensity = intensity_at(t, ch, scene, geom, chain, phi_n, source_phase);
        if (rng.uniform() * peak_intensity <= intensity) {
            (ch == Channel::A ? out.a : out.b).times_ps.push_back(quantize_ps(t));
        }
    }

    if (chain.jitter_sigma > 0.0) {
        for (EventStream* stream : {&out.a, &out.b}) {
            for (auto& t_ps : stream->times_ps) {
                const double jittered =
                    static_cast<double>(t_ps) * 1e-12 + chain.jitter_sigma * rng.gaussian();
                t_ps = quantize_ps(jittered);
            }
            std::sort(stream->times_ps.begin(), stream->times_ps.end());
        }
    }
    return out;
}

StreamPair generate_events(const SourcePair& scene, const BaselineGeometry& geom,
                           const DetectionChainSpec& chain, const NoiseModel& noise,
                           double duration, std::uint64_t seed) {
    noise.validate();
    NoisePath path;
    if (noise.phi_n_sigma > 0.0)
        path = phase_noise_path(noise, duration, noise.phi_n_tau / 100.0);
    return generate_events_with_noise(scene, geom, chain, path, noise.phi_f, 0.0, duration, seed);
}

std::vector<SweepSegment> simulate_sweep(const SourcePair& scene, const DetectionChainSpec& chain,
                                         const NoiseModel& noise, const SweepPlan& plan,
                                         double dwell, std::uint64_t seed) {
    plan.validate();
    noise.validate();
    const double transit = plan.transit_time();
    if (!(dwell > 0.0) || dwell > transit * (1.0 + 1e-9))
        throw std::invalid_argument("simulate_sweep: dwell must be in (0, segment transit time]");

    const std::size_t n = plan.segments();
    const double sweep_duration = static_cast<double>(n) * transit;

    // One continuous noise path per sweep, generated up front and then read
    // by every segment at its own wall-clock offset.
    NoisePath path;
    if (noise.phi_n_sigma > 0.0) {
        const double dt = std::min(noise.phi_n_tau / 100.0, std::max(dwell / 8.0, 1e-6));
        NoiseModel sweep_noise = noise;
        sweep_noise.seed = derive_seed(noise.seed, kTagNoise, seed);
        path = phase_noise_path(sweep_noise, sweep_duration, dt);
    }

    std::vector<SweepSegment> segments(n);
    for (std::size_t k = 0; k < n; ++k) {
        SweepSegment& seg = segments[k];
        seg.index = k;
        seg.x_mid = plan.segment_mid(k);
        seg.t_start = static_cast<double>(k) * transit;
        const BaselineGeometry geom = BaselineGeometry::from_scene(scene, seg.x_mid);
        seg.streams = generate_events_with_noise(scene, geom, chain, path, noise.phi_f,
                                                 seg.t_start, dwell, derive_seed(seed, k));
    }
    return segments;
}

}  // namespace chbt
