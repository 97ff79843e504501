#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "chbt/config.hpp"
#include "chbt/fitters.hpp"
#include "chbt/geometry.hpp"
#include "chbt/pipeline.hpp"
#include "chbt/stream_io.hpp"

using namespace chbt;
namespace fs = std::filesystem;

namespace {

// Fast variant of the reference setup: 8 wide segments, short dwell, strong
// fringe. Keeps a full pipeline run under a second.
ExperimentConfig fast_config(std::uint64_t seed) {
    ExperimentConfig cfg = default_config();
    cfg.chain.amp1 = 1.0;
    cfg.chain.amp2 = 1.0;
    cfg.chain.rate_scale = 2e5;
    cfg.chain.jitter_sigma = 0.0;
    cfg.noise.phi_n_sigma = 0.0;
    cfg.plan.segment_width = 0.1;
    cfg.dwell = 0.2;
    cfg.n_sweeps = 2;
    cfg.sigma_alpha = 0.0;
    cfg.seed = seed;
    cfg.noise.seed = seed;
    return cfg;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("noiseless pipeline recovers the geometric slope and angle") {
    ExperimentConfig cfg = fast_config(501);
    RunOptions options;
    options.write_outputs = false;
    const PipelineResult result = run_pipeline(cfg, options);

    const DerivedWavelengths dw = derived_wavelengths(cfg.scene.lambda1, cfg.scene.lambda2);
    const double m_true = small_angle_spatial_phase(1.0, cfg.scene.theta(), 0.0, dw).phase;
    for (const SweepResult& sweep : result.sweeps) {
        CHECK(std::abs(sweep.slope.m - m_true) < 3.0 * sweep.slope.se_m);
        CHECK(sweep.slope.r_squared > 0.999);
        // Every fitted segment phase sits on the spatial-phase curve.
        for (const SegmentResult& seg : sweep.segments) {
            REQUIRE(seg.used);
            const BaselineGeometry geom = BaselineGeometry::from_scene(cfg.scene, seg.x_mid);
            const double phi_s = exact_spatial_phase(geom, cfg.scene.lambda1, cfg.scene.lambda2);
            const double delta = wrap_phase(seg.fit.phi_c - phi_s);
            CHECK(std::abs(delta) < 5.0 * seg.fit.se_phi);
        }
    }
    CHECK(std::abs(result.estimate.theta - cfg.scene.theta()) / cfg.scene.theta() < 0.02);
    REQUIRE(result.estimate.z_score.has_value());
}

TEST_CASE("a static fiber phase shifts the intercept but not the slope") {
    ExperimentConfig base = fast_config(611);
    RunOptions options;
    options.write_outputs = false;
    const PipelineResult r0 = run_pipeline(base, options);

    ExperimentConfig shifted = base;
    shifted.noise.phi_f = 1.3;
    const PipelineResult r1 = run_pipeline(shifted, options);

    for (std::size_t i = 0; i < r0.sweeps.size(); ++i) {
        const SlopeFit& s0 = r0.sweeps[i].slope;
        const SlopeFit& s1 = r1.sweeps[i].slope;
        CHECK(std::abs(s1.m - s0.m) < 3.0 * std::hypot(s0.se_m, s1.se_m));
        for (std::size_t k = 0; k < r0.sweeps[i].segments.size(); ++k) {
            const G2Fit& f0 = r0.sweeps[i].segments[k].fit;
            const G2Fit& f1 = r1.sweeps[i].segments[k].fit;
            const double delta = wrap_phase(f1.phi_c - f0.phi_c - 1.3);
            CHECK(std::abs(delta) < 5.0 * std::hypot(f0.se_phi, f1.se_phi));
        }
    }
}

TEST_CASE("staged execution reproduces the pipeline byte for byte") {
    ExperimentConfig cfg = fast_config(777);

    const fs::path dir_run = fresh_dir("chbt_run");
    RunOptions run_options;
    run_options.out_dir = dir_run;
    run_options.jobs = 2;
    run_pipeline(cfg, run_options);

    const fs::path dir_staged = fresh_dir("chbt_staged");
    RunOptions staged_options;
    staged_options.out_dir = dir_staged;
    stage_simulate(cfg, staged_options);
    stage_correlate(cfg, staged_options);
    stage_fit(cfg, staged_options);
    stage_estimate(cfg, staged_options);

    // Every payload the two paths both produce must be identical.
    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir_run)) {
        if (!entry.is_regular_file()) continue;
        const fs::path rel = fs::relative(entry.path(), dir_run);
        if (rel == "manifest.json") continue;  // timing fields differ
        const fs::path other = dir_staged / rel;
        REQUIRE_MESSAGE(fs::exists(other), rel.string(), " missing from staged run");
        CHECK_MESSAGE(slurp(entry.path()) == slurp(other), rel.string(), " differs");
        ++compared;
    }
    // 2 sweeps x 8 segments of histograms and fits, slopes, plots, estimate.
    CHECK(compared >= 39);

    // Streams saved by the simulate stage load back exactly.
    const EventStream a = load_stream(stream_path(dir_staged, 0, 0, Channel::A));
    CHECK(a.channel == Channel::A);
    CHECK_FALSE(a.empty());
}

TEST_CASE("rerunning with the same config and seed is byte-identical") {
    ExperimentConfig cfg = fast_config(888);
    const fs::path dir1 = fresh_dir("chbt_rep1");
    const fs::path dir2 = fresh_dir("chbt_rep2");
    RunOptions options;
    options.out_dir = dir1;
    run_pipeline(cfg, options);
    options.out_dir = dir2;
    run_pipeline(cfg, options);
    CHECK(slurp(dir1 / "estimate.json") == slurp(dir2 / "estimate.json"));
    CHECK(slurp(dir1 / "fits" / "sweep00_seg000.json") ==
          slurp(dir2 / "fits" / "sweep00_seg000.json"));

    // A different seed must change the data payloads.
    cfg.seed += 1;
    const fs::path dir3 = fresh_dir("chbt_rep3");
    options.out_dir = dir3;
    run_pipeline(cfg, options);
    CHECK(slurp(dir1 / "estimate.json") != slurp(dir3 / "estimate.json"));
}

TEST_CASE("estimating a single sweep fails with a clear message and a marker file") {
    ExperimentConfig cfg = fast_config(99);
    cfg.n_sweeps = 1;
    const fs::path dir = fresh_dir("chbt_single");
    RunOptions options;
    options.out_dir = dir;
    CHECK_THROWS_WITH_AS(run_pipeline(cfg, options), doctest::Contains(">= 2 sweeps"),
                         StageError);
    CHECK(fs::exists(dir / "FAILED.json"));
    // Partial outputs are retained alongside the marker.
    CHECK(fs::exists(dir / "fits" / "sweep00_slope.json"));
    CHECK_FALSE(fs::exists(dir / "estimate.json"));
}

TEST_CASE("a zero-visibility source pair fails the fit stage") {
    ExperimentConfig cfg = fast_config(55);
    cfg.chain.amp2 = 0.0;  // no fringe at all
    RunOptions options;
    options.write_outputs = false;
    CHECK_THROWS_AS(run_pipeline(cfg, options), StageError);
    try {
        run_pipeline(cfg, options);
    } catch (const StageError& e) {
        CHECK(e.stage() == "fit");
        CHECK(e.sweep() >= 0);
    }
}

TEST_CASE("stages reject a manifest built from a different config") {
    ExperimentConfig cfg = fast_config(31);
    const fs::path dir = fresh_dir("chbt_mismatch");
    RunOptions options;
    options.out_dir = dir;
    stage_simulate(cfg, options);

    ExperimentConfig other = cfg;
    other.seed += 5;
    CHECK_THROWS_WITH_AS(stage_correlate(other, options), doctest::Contains("hash"),
                         std::invalid_argument);
}

TEST_CASE("stage chain requires the previous stage's outputs") {
    ExperimentConfig cfg = fast_config(32);
    const fs::path dir = fresh_dir("chbt_order");
    RunOptions options;
    options.out_dir = dir;
    CHECK_THROWS_WITH_AS(stage_correlate(cfg, options), doctest::Contains("manifest"),
                         std::invalid_argument);
}

TEST_CASE("estimate report embeds fixtures, benchmark and provenance") {
    ExperimentConfig cfg = fast_config(444);
    const fs::path dir = fresh_dir("chbt_report");
    RunOptions options;
    options.out_dir = dir;
    const PipelineResult result = run_pipeline(cfg, options);

    nlohmann::json doc;
    std::ifstream in(dir / "estimate.json");
    in >> doc;
    CHECK(doc["schema"] == "chbt/estimate/v1");
    CHECK(doc["config_hash"] == result.hash);
    CHECK(doc["slopes"].size() == cfg.n_sweeps);
    CHECK(doc["paper_fixtures"].is_array());
    for (const auto& fixture : doc["paper_fixtures"]) CHECK(fixture["pass"].get<bool>());
    CHECK(doc["benchmark"]["paper_quoted_diffraction_limit_rad"].get<double>() == 1.9e-4);
    CHECK(doc["benchmark"]["gain_separation_basis"].get<double>() ==
          doctest::Approx(40.5).epsilon(0.02));
    CHECK(doc["theta_rad"].get<double>() == result.estimate.theta);

    // Plot-ready CSVs exist with headers.
    CHECK(slurp(dir / "plots" / "fig_g2_sweep00_seg000.csv").rfind("tau_s,g2,g2_err,g2_fit", 0) ==
          0);
    CHECK(slurp(dir / "plots" / "fig_slopes.csv").rfind("sweep,m_rad_per_m", 0) == 0);
    CHECK(slurp(dir / "plots" / "sweep00_phase_vs_x.csv").rfind("x_m,phi_rad", 0) == 0);
}
