#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "chbt/correlator.hpp"
#include "chbt/fitters.hpp"
#include "chbt/rng.hpp"

using namespace chbt;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

EventStream homogeneous_stream(Channel ch, double rate, double duration, std::uint64_t seed) {
    EventStream stream;
    stream.channel = ch;
    Rng rng(seed);
    double t = 0.0;
    while (true) {
        t += rng.exponential(rate);
        if (t > duration) break;
        stream.times_ps.push_back(static_cast<std::uint64_t>(std::llround(t * 1e12)));
    }
    return stream;
}

SourcePair reference_scene() {
    SourcePair s;
    s.lambda1 = 1063.6e-9;
    s.lambda2 = 1064.4e-9;
    s.d = 4.2e-3;
    s.L = 1430.0;
    s.alpha = 0.0;
    return s;
}

DetectionChainSpec reference_chain(double rate_scale) {
    DetectionChainSpec chain;
    chain.f3_1 = 15.79e6;
    chain.f3_2 = 0.0;
    chain.rate_scale = rate_scale;
    return chain;
}

}  // namespace

TEST_CASE("independent streams are flat at g2 = 1") {
    const double rate = 1e5;
    const double duration = 10.0;
    const EventStream a = homogeneous_stream(Channel::A, rate, duration, 41);
    const EventStream b = homogeneous_stream(Channel::B, rate, duration, 42);
    REQUIRE(a.size() > 900000);

    const CorrelationHistogram hist = g2_histogram(a, b, 1e-9, 500e-9);
    double mean = 0.0;
    std::size_t used = 0, outliers = 0;
    double max_z = 0.0;
    double se_mean_sq = 0.0;
    for (std::size_t i = 0; i < hist.n_bins(); ++i) {
        if (hist.counts[i] == 0) continue;
        const double z = (hist.g2[i] - 1.0) / hist.g2_err[i];
        if (std::abs(z) > 3.0) ++outliers;
        max_z = std::max(max_z, std::abs(z));
        mean += hist.g2[i];
        se_mean_sq += hist.g2_err[i] * hist.g2_err[i];
        ++used;
    }
    mean /= static_cast<double>(used);
    const double se_mean = std::sqrt(se_mean_sq) / static_cast<double>(used);
    CHECK(std::abs(mean - 1.0) < 3.0 * se_mean);
    // ~0.27% of bins land outside 3 sigma by chance; flat means no excess.
    CHECK(static_cast<double>(outliers) / static_cast<double>(used) < 0.01);
    CHECK(max_z < 6.0);
}

TEST_CASE("an exact copy shifted by delta gives a single hot bin") {
    const EventStream a = homogeneous_stream(Channel::A, 100.0, 10.0, 5);
    EventStream b;
    b.channel = Channel::B;
    const std::uint64_t delta_ps = 100000;  // 100 ns
    for (std::uint64_t t : a.times_ps) b.times_ps.push_back(t + delta_ps);

    const CorrelationHistogram hist = g2_histogram(a, b, 1e-9, 500e-9);
    const std::size_t hot = static_cast<std::size_t>(hist.k_max + 100);
    CHECK(hist.counts[hot] == a.size());
    std::uint64_t elsewhere = 0;
    for (std::size_t i = 0; i < hist.n_bins(); ++i)
        if (i != hot) elsewhere += hist.counts[i];
    CHECK(elsewhere <= 2);
    CHECK(hist.tau_center(hot) == doctest::Approx(100e-9));
}

TEST_CASE("exchanging the streams mirrors the histogram bin-exactly") {
    const SourcePair scene = reference_scene();
    const DetectionChainSpec chain = reference_chain(1e5);
    const BaselineGeometry geom = BaselineGeometry::from_scene(scene, 0.5);
    const StreamPair streams = generate_events(scene, geom, chain, NoiseModel{}, 1.0, 9);

    const CorrelationHistogram fwd = g2_histogram(streams.a, streams.b, 1e-9, 500e-9);
    const CorrelationHistogram rev = g2_histogram(streams.b, streams.a, 1e-9, 500e-9);
    REQUIRE(fwd.n_bins() == rev.n_bins());
    const std::size_t n = fwd.n_bins();
    for (std::size_t i = 0; i < n; ++i) CHECK(fwd.counts[i] == rev.counts[n - 1 - i]);
}

TEST_CASE("g2 normalization fields") {
    const EventStream a = homogeneous_stream(Channel::A, 1e4, 2.0, 13);
    const EventStream b = homogeneous_stream(Channel::B, 1e4, 2.0, 14);
    const CorrelationHistogram hist = g2_histogram(a, b, 1e-9, 100e-9);
    CHECK(hist.n_a == a.size());
    CHECK(hist.n_b == b.size());
    CHECK(hist.duration == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(hist.n_bins() == 201);
    // Definition check on one bin.
    const std::size_t i = 100;
    if (hist.counts[i] > 0) {
        const double expected = static_cast<double>(hist.counts[i]) * hist.duration /
                                (static_cast<double>(hist.n_a) * static_cast<double>(hist.n_b) *
                                 hist.bin_width());
        CHECK(hist.g2[i] == doctest::Approx(expected).epsilon(1e-12));
        CHECK(hist.g2_err[i] ==
              doctest::Approx(hist.g2[i] / std::sqrt(static_cast<double>(hist.counts[i]))));
    }
    // Zero-count bins carry the NaN marker.
    bool saw_empty = false;
    for (std::size_t k = 0; k < hist.n_bins(); ++k) {
        if (hist.counts[k] == 0) {
            saw_empty = true;
            CHECK(std::isnan(hist.g2_err[k]));
            CHECK(hist.g2[k] == 0.0);
        }
    }
    CHECK(saw_empty);  // at these rates empty bins must occur

    std::uint64_t total = 0;
    for (std::uint64_t c : hist.counts) total += c;
    CHECK(total <= hist.n_a * hist.n_b);
}

TEST_CASE("input validation names the offending stream") {
    const EventStream good = homogeneous_stream(Channel::A, 1e4, 0.5, 1);
    EventStream empty;
    empty.channel = Channel::B;
    CHECK_THROWS_WITH_AS(g2_histogram(good, empty, 1e-9, 100e-9),
                         doctest::Contains("stream B is empty"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(g2_histogram(empty, good, 1e-9, 100e-9),
                         doctest::Contains("stream B is empty"), std::invalid_argument);

    EventStream unsorted = good;
    std::swap(unsorted.times_ps[10], unsorted.times_ps[20]);
    CHECK_THROWS_WITH_AS(g2_histogram(unsorted, good, 1e-9, 100e-9),
                         doctest::Contains("not sorted"), std::invalid_argument);

    CHECK_THROWS_AS(g2_histogram(good, good, 1e-9, 5e-9), std::invalid_argument);
    CHECK_THROWS_AS(g2_histogram(good, good, 0.0, 100e-9), std::invalid_argument);
}

TEST_CASE("merging a single histogram is the identity") {
    const EventStream a = homogeneous_stream(Channel::A, 1e4, 1.0, 3);
    const EventStream b = homogeneous_stream(Channel::B, 1e4, 1.0, 4);
    const CorrelationHistogram hist = g2_histogram(a, b, 1e-9, 100e-9);
    const CorrelationHistogram merged = merge_histograms({hist});
    CHECK(merged.counts == hist.counts);
    CHECK(merged.n_a == hist.n_a);
    CHECK(merged.g2 == hist.g2);
}

TEST_CASE("merging disjoint halves reproduces the whole acquisition's counts") {
    const SourcePair scene = reference_scene();
    const DetectionChainSpec chain = reference_chain(5e4);
    const BaselineGeometry geom = BaselineGeometry::from_scene(scene, 0.3);
    const StreamPair streams = generate_events(scene, geom, chain, NoiseModel{}, 2.0, 77);
    const double window = 100e-9;
    const CorrelationHistogram whole = g2_histogram(streams.a, streams.b, 1e-9, window);

    // Split where both channels are quiet for longer than the window, so no
    // cross-boundary pairs exist.
    const std::uint64_t t_nominal = 1000000000000;  // 1 s in ps
    const std::uint64_t guard = 2 * static_cast<std::uint64_t>(window * 1e12) + 1000;
    std::uint64_t t_split = t_nominal;
    bool found = false;
    for (std::uint64_t probe = t_nominal; probe < t_nominal + 100000000000ULL && !found;
         probe += guard) {
        found = true;
        for (const EventStream* s : {&streams.a, &streams.b}) {
            auto it = std::lower_bound(s->times_ps.begin(), s->times_ps.end(), probe);
            const std::uint64_t next = it == s->times_ps.end() ? probe + 10 * guard : *it;
            const std::uint64_t prev = it == s->times_ps.begin() ? 0 : *(it - 1);
            if (next - prev < guard) found = false;
        }
        if (found) t_split = probe;
    }
    REQUIRE(found);

    const auto split = [&](const EventStream& s) {
        EventStream first, second;
        first.channel = second.channel = s.channel;
        for (std::uint64_t t : s.times_ps) {
            if (t < t_split)
                first.times_ps.push_back(t);
            else
                second.times_ps.push_back(t - t_split);  // rebased acquisition block
        }
        return std::pair{first, second};
    };
    const auto [a1, a2] = split(streams.a);
    const auto [b1, b2] = split(streams.b);
    const CorrelationHistogram h1 = g2_histogram(a1, b1, 1e-9, window);
    const CorrelationHistogram h2 = g2_histogram(a2, b2, 1e-9, window);
    const CorrelationHistogram merged = merge_histograms({h1, h2});

    CHECK(merged.counts == whole.counts);
    CHECK(merged.n_a == whole.n_a);
    CHECK(merged.n_b == whole.n_b);
}

TEST_CASE("merging k identical-config runs shrinks the errors by sqrt(k)") {
    const SourcePair scene = reference_scene();
    const DetectionChainSpec chain = reference_chain(1e5);
    const BaselineGeometry geom = BaselineGeometry::from_scene(scene, 0.4);

    std::vector<CorrelationHistogram> parts;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const StreamPair streams = generate_events(scene, geom, chain, NoiseModel{}, 1.0, 50 + seed);
        parts.push_back(g2_histogram(streams.a, streams.b, 1e-9, 500e-9));
    }
    const CorrelationHistogram merged = merge_histograms(parts);

    const auto mean_err = [](const CorrelationHistogram& h) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < h.n_bins(); ++i) {
            if (h.counts[i] == 0) continue;
            sum += h.g2_err[i];
            ++n;
        }
        return sum / static_cast<double>(n);
    };
    const double ratio = mean_err(merged) / mean_err(parts[0]);
    CHECK(ratio == doctest::Approx(0.5).epsilon(0.1));
}

TEST_CASE("merge rejects mismatched binning and lists the offenders") {
    const EventStream a = homogeneous_stream(Channel::A, 1e4, 1.0, 3);
    const EventStream b = homogeneous_stream(Channel::B, 1e4, 1.0, 4);
    const CorrelationHistogram h1 = g2_histogram(a, b, 1e-9, 100e-9);
    const CorrelationHistogram h2 = g2_histogram(a, b, 2e-9, 100e-9);
    const CorrelationHistogram h3 = g2_histogram(a, b, 1e-9, 200e-9);
    CHECK_THROWS_WITH_AS(merge_histograms({h1, h2, h1, h3}),
                         doctest::Contains("index 1, 3"), std::invalid_argument);
}

TEST_CASE("simulated beat oscillation has the configured period and satisfies the model") {
    const SourcePair scene = reference_scene();
    const DetectionChainSpec chain = reference_chain(1e5);
    const BaselineGeometry geom = BaselineGeometry::from_scene(scene, 0.5);

    // Average over 20 seeded acquisitions by merging their histograms.
    std::vector<CorrelationHistogram> parts;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const StreamPair streams =
            generate_events(scene, geom, chain, NoiseModel{}, 1.0, 400 + seed);
        parts.push_back(g2_histogram(streams.a, streams.b, 1e-9, 500e-9));
    }
    const CorrelationHistogram merged = merge_histograms(parts);

    const double f0 = estimate_beat_frequency(merged);
    const G2Fit fit = fit_g2(merged, f0);
    CHECK(fit.converged);
    // 1 / 15.79 MHz = 63.33 ns
    CHECK(1.0 / fit.f_beat == doctest::Approx(63.33e-9).epsilon(2e-3));
    CHECK(fit.chi2_dof > 0.5);
    CHECK(fit.chi2_dof < 2.0);
    CHECK(fit.epsilon == doctest::Approx(1.0).epsilon(0.05));

    // The fitted oscillation phase matches the spatial phase of the scene.
    const double phi_s = exact_spatial_phase(geom, scene.lambda1, scene.lambda2);
    const double diff = wrap_phase(fit.phi_c - phi_s);
    CHECK(std::abs(diff) < 5.0 * fit.se_phi);
}
