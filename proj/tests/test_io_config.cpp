#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "chbt/config.hpp"
#include "chbt/correlator.hpp"
#include "chbt/pipeline.hpp"
#include "chbt/rng.hpp"
#include "chbt/stream_io.hpp"

using namespace chbt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "chbt_io_test";
    fs::create_directories(dir);
    return dir;
}

EventStream make_stream(Channel ch, std::size_t n, std::uint64_t seed) {
    EventStream stream;
    stream.channel = ch;
    Rng rng(seed);
    double t = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        t += rng.exponential(1e5);
        stream.times_ps.push_back(static_cast<std::uint64_t>(std::llround(t * 1e12)));
    }
    return stream;
}

}  // namespace

TEST_CASE("stream binary round trip is lossless") {
    const fs::path path = temp_dir() / "stream.bin";
    const EventStream stream = make_stream(Channel::B, 5000, 3);
    save_stream(stream, path);
    const EventStream loaded = load_stream(path);
    CHECK(loaded.channel == Channel::B);
    CHECK(loaded.times_ps == stream.times_ps);
}

TEST_CASE("stream loader rejects foreign and mismatched files") {
    const fs::path dir = temp_dir();
    {
        std::ofstream out(dir / "junk.bin", std::ios::binary);
        out << "NOTACHBTFILEATALL";
    }
    CHECK_THROWS_WITH_AS(load_stream(dir / "junk.bin"), doctest::Contains("bad magic"),
                         std::runtime_error);

    // Flip the version halfword and expect both versions in the message.
    save_stream(make_stream(Channel::A, 10, 1), dir / "ver.bin");
    {
        std::fstream f(dir / "ver.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v2[2] = {9, 0};
        f.write(v2, 2);
    }
    CHECK_THROWS_WITH_AS(load_stream(dir / "ver.bin"),
                         doctest::Contains("expected v1, found v9"), std::runtime_error);
}

TEST_CASE("stream debug CSV is one timestamp per line, 12 significant digits") {
    const fs::path path = temp_dir() / "stream.csv";
    EventStream stream;
    stream.channel = Channel::A;
    stream.times_ps = {123456789012, 500000000000};
    save_stream_csv(stream, path);
    std::ifstream in(path);
    std::string line1, line2;
    std::getline(in, line1);
    std::getline(in, line2);
    CHECK(line1 == "0.123456789012");
    CHECK(line2 == "0.5");
}

TEST_CASE("histogram binary round trip is lossless") {
    const EventStream a = make_stream(Channel::A, 20000, 5);
    const EventStream b = make_stream(Channel::B, 20000, 6);
    const CorrelationHistogram hist = g2_histogram(a, b, 1e-9, 200e-9);
    const fs::path path = temp_dir() / "hist.bin";
    save_histogram(hist, path);
    const CorrelationHistogram loaded = load_histogram(path);
    CHECK(loaded.bin_width_ps == hist.bin_width_ps);
    CHECK(loaded.k_max == hist.k_max);
    CHECK(loaded.counts == hist.counts);
    CHECK(loaded.n_a == hist.n_a);
    CHECK(loaded.n_b == hist.n_b);
    CHECK(loaded.duration == hist.duration);
    CHECK(loaded.g2 == hist.g2);  // recomputed normalization must agree exactly
}

TEST_CASE("histogram CSV round trip preserves the fit-facing columns") {
    const EventStream a = make_stream(Channel::A, 20000, 7);
    const EventStream b = make_stream(Channel::B, 20000, 8);
    const CorrelationHistogram hist = g2_histogram(a, b, 1e-9, 200e-9);
    const fs::path path = temp_dir() / "hist.csv";
    save_histogram_csv(hist, path);
    const CorrelationHistogram loaded = load_histogram_csv(path);
    REQUIRE(loaded.n_bins() == hist.n_bins());
    CHECK(loaded.bin_width_ps == hist.bin_width_ps);
    CHECK(loaded.k_max == hist.k_max);
    for (std::size_t i = 0; i < hist.n_bins(); ++i) {
        CHECK(loaded.counts[i] == hist.counts[i]);
        CHECK(loaded.g2[i] == doctest::Approx(hist.g2[i]).epsilon(1e-11));
        if (hist.counts[i] == 0)
            CHECK(std::isnan(loaded.g2_err[i]));
    }
}

TEST_CASE("default config is valid and carries the reference values") {
    const ExperimentConfig cfg = default_config();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.scene.lambda1 == 1063.6e-9);
    CHECK(cfg.scene.lambda2 == 1064.4e-9);
    CHECK(cfg.scene.d == 4.2e-3);
    CHECK(cfg.scene.L == 1430.0);
    CHECK(cfg.chain.beat() == 15.79e6);
    CHECK(visibility_for_amplitudes(cfg.chain.amp1, cfg.chain.amp2) ==
          doctest::Approx(0.274).epsilon(1e-9));
    CHECK(cfg.plan.segments() == 40);
    CHECK(cfg.plan.x_speed == 0.05);
    CHECK(cfg.sigma_alpha == 1e-3);
    CHECK(cfg.n_sweeps == 10);
    CHECK(cfg.dwell_s() == doctest::Approx(0.4));
}

TEST_CASE("config JSON round trip and stable hash") {
    const ExperimentConfig cfg = default_config();
    const nlohmann::json doc = config_to_json(cfg);
    const ExperimentConfig back = config_from_json(doc);
    CHECK(back.scene.lambda1 == doctest::Approx(cfg.scene.lambda1).epsilon(1e-14));
    CHECK(back.chain.amp2 == doctest::Approx(cfg.chain.amp2).epsilon(1e-14));
    CHECK(back.seed == cfg.seed);
    // The same document always parses to the same configuration and hash.
    CHECK(config_hash(back) == config_hash(config_from_json(doc)));

    ExperimentConfig other = cfg;
    other.seed += 1;
    CHECK(config_hash(other) != config_hash(cfg));
}

TEST_CASE("config field validation") {
    nlohmann::json doc = config_to_json(default_config());
    doc["chain"].erase("amp1");
    doc["chain"].erase("amp2");
    doc["chain"]["epsilon_target"] = 0.274;
    CHECK_NOTHROW(config_from_json(doc));

    doc["chain"]["amp1"] = 1.0;  // both given
    CHECK_THROWS_WITH_AS(config_from_json(doc), doctest::Contains("mutually exclusive"),
                         std::invalid_argument);

    doc = config_to_json(default_config());
    doc["scene"].erase("lambda1_nm");
    CHECK_THROWS_WITH_AS(config_from_json(doc), doctest::Contains("lambda1_nm"),
                         std::invalid_argument);

    doc = config_to_json(default_config());
    doc["dwell_s"] = 99.0;  // beyond the segment transit time
    CHECK_THROWS_AS(config_from_json(doc), std::invalid_argument);

    doc = config_to_json(default_config());
    doc["plan"]["segment_width_m"] = 0.3;  // fewer than 8 segments
    CHECK_THROWS_AS(config_from_json(doc), std::invalid_argument);
}

TEST_CASE("config file loading reports parse errors as config errors") {
    const fs::path path = temp_dir() / "broken.json";
    {
        std::ofstream out(path);
        out << "{ not json";
    }
    CHECK_THROWS_AS(load_config(path), std::invalid_argument);
    CHECK_THROWS_AS(load_config(temp_dir() / "missing.json"), std::invalid_argument);
}

TEST_CASE("closed-form reference fixtures all pass") {
    for (const FixtureCheck& check : paper_fixture_checks()) {
        INFO(check.name, ": actual ", check.actual, " expected ", check.expected);
        CHECK(check.pass);
    }
}
