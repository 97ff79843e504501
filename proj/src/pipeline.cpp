#include "chbt/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <mutex>
#include <numbers>
#include <thread>

#include "chbt/correlator.hpp"
#include "chbt/log.hpp"
#include "chbt/rng.hpp"
#include "chbt/stream_io.hpp"

namespace chbt {

namespace {

namespace fs = std::filesystem;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::uint64_t kTagSweep = 0x53574550;  // "SWEP"
constexpr const char* kManifestSchema = "chbt/manifest/v1";
constexpr const char* kFitSchema = "chbt/g2fit/v1";
constexpr const char* kSlopeSchema = "chbt/slopefit/v1";
constexpr const char* kEstimateSchema = "chbt/estimate/v1";
// A sweep line fit is rejected when more than this fraction of its segments
// fail the per-segment quality gate.
constexpr double kMaxDropFraction = 0.25;

std::string tag(std::size_t sweep, std::size_t segment) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sweep%02zu_seg%03zu", sweep, segment);
    return buf;
}

std::string tag(std::size_t sweep) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "sweep%02zu", sweep);
    return buf;
}

std::string utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

fs::path resolve_out(const ExperimentConfig& cfg, const RunOptions& options) {
    return options.out_dir.value_or(fs::path(cfg.out_dir));
}

std::uint64_t sweep_seed(const ExperimentConfig& cfg, std::size_t sweep) {
    return derive_seed(cfg.seed, sweep, 0, kTagSweep);
}

// ---------------------------------------------------------------------------
// per-segment fit policy
// ---------------------------------------------------------------------------

// Fits one histogram and applies the quality gate. A failed gate marks the
// segment unused (with the reason) instead of aborting: a single weak segment
// must not kill a 40-point sweep, and the line fit quality is judged
// downstream by r_squared.
//
// The fit starts at the configured beat frequency. With the frequency pinned
// the visibility significance test has no frequency-scan selection effect, so
// 3 standard errors separates a real fringe from an uncorrelated pair
// cleanly.
SegmentResult fit_segment(const ExperimentConfig& cfg, std::size_t sweep, std::size_t segment,
                          double x_mid, double t_start, const CorrelationHistogram& hist) {
    SegmentResult result;
    result.sweep = sweep;
    result.segment = segment;
    result.x_mid = x_mid;
    result.t_start = t_start;

    const double f_init = std::abs(cfg.chain.beat());
    G2FitOptions options;
    options.beat_sign_negative = cfg.chain.beat() < 0.0;
    try {
        result.fit = fit_g2(hist, f_init, options);
    } catch (const std::exception& e) {
        result.used = false;
        result.note = e.what();
        return result;
    }

    if (!result.fit.converged) {
        result.used = false;
        result.note = "fit did not converge";
    } else if (result.fit.epsilon < 3.0 * result.fit.se_epsilon) {
        result.used = false;
        result.note = "no oscillation detected: visibility not significant";
    } else if (std::abs(result.fit.f_beat - f_init) > 0.2 * f_init) {
        result.used = false;
        result.note = "fit frequency drifted from the configured beat";
    }
    return result;
}

struct SweepData {
    SweepResult result;
    std::vector<CorrelationHistogram> hists;  // kept only when outputs are written
};

SweepData process_sweep(const ExperimentConfig& cfg, std::size_t sweep, bool keep_hists) {
    SweepData data;
    data.result.sweep = sweep;
    const std::size_t n_segments = cfg.plan.segments();

    std::vector<SweepSegment> segments;
    try {
        segments = simulate_sweep(cfg.scene, cfg.chain, cfg.noise, cfg.plan, cfg.dwell_s(),
                                  sweep_seed(cfg, sweep));
    } catch (const std::exception& e) {
        throw StageError("simulate", static_cast<int>(sweep), -1, e.what());
    }

    data.result.segments.reserve(n_segments);
    if (keep_hists) data.hists.reserve(n_segments);
    for (SweepSegment& seg : segments) {
        CorrelationHistogram hist;
        try {
            hist = g2_histogram(seg.streams.a, seg.streams.b, cfg.correlator.bin_width,
                                cfg.correlator.tau_max);
        } catch (const std::exception& e) {
            throw StageError("correlate", static_cast<int>(sweep), static_cast<int>(seg.index),
                             e.what());
        }
        seg.streams = {};  // events no longer needed, free early
        data.result.segments.push_back(
            fit_segment(cfg, sweep, seg.index, seg.x_mid, seg.t_start, hist));
        if (keep_hists) data.hists.push_back(std::move(hist));
    }
    return data;
}

// Line fit over the surviving segment phases of one sweep.
void fit_sweep_slope(const ExperimentConfig& cfg, SweepResult& sweep) {
    std::vector<PhasePoint> points;
    std::size_t dropped = 0;
    for (const SegmentResult& seg : sweep.segments) {
        if (!seg.used) {
            ++dropped;
            log::warn("sweep " + std::to_string(seg.sweep) + " segment " +
                      std::to_string(seg.segment) + " dropped: " + seg.note);
            continue;
        }
        points.push_back({seg.x_mid, seg.fit.phi_c, seg.fit.se_phi});
    }
    const auto n_total = static_cast<double>(sweep.segments.size());
    if (points.size() < 3 || static_cast<double>(dropped) > kMaxDropFraction * n_total)
        throw StageError("fit", static_cast<int>(sweep.sweep), -1,
                         std::to_string(dropped) + " of " + std::to_string(sweep.segments.size()) +
                             " segments unusable");
    try {
        sweep.slope = fit_slope(unwrap_phases(std::move(points)), cfg.weighted_slope_fit);
    } catch (const std::exception& e) {
        throw StageError("fit", static_cast<int>(sweep.sweep), -1, e.what());
    }
}

ThetaEstimate build_estimate(const ExperimentConfig& cfg, const std::vector<double>& slopes) {
    SlopeStats stats;
    try {
        stats = aggregate_slopes(slopes);
    } catch (const std::exception& e) {
        throw StageError("estimate", -1, -1,
                         std::string(e.what()) + " (need >= 2 sweeps for sigma_m)");
    }
    const DerivedWavelengths dw = derived_wavelengths(cfg.scene.lambda1, cfg.scene.lambda2);
    ThetaEstimate est = theta_from_slope(stats.m_bar, stats.sigma_m, cfg.sigma_alpha, dw);
    est.true_theta = cfg.scene.theta();
    if (est.sigma_theta > 0.0) est.z_score = (est.theta - *est.true_theta) / est.sigma_theta;
    return est;
}

// ---------------------------------------------------------------------------
// JSON payloads
// ---------------------------------------------------------------------------

nlohmann::json fit_to_json(const SegmentResult& seg, const std::string& hash,
                           std::uint64_t seed) {
    nlohmann::json doc;
    doc["schema"] = kFitSchema;
    doc["config_hash"] = hash;
    doc["seed"] = seed;
    doc["sweep"] = seg.sweep;
    doc["segment"] = seg.segment;
    doc["x_mid_m"] = seg.x_mid;
    doc["t_start_s"] = seg.t_start;
    doc["epsilon"] = seg.fit.epsilon;
    doc["f_beat_hz"] = seg.fit.f_beat;
    doc["phi_c_rad"] = seg.fit.phi_c;
    doc["se_epsilon"] = seg.fit.se_epsilon;
    doc["se_f_hz"] = seg.fit.se_f;
    doc["se_phi_rad"] = seg.fit.se_phi;
    doc["chi2_dof"] = seg.fit.chi2_dof;
    doc["converged"] = seg.fit.converged;
    doc["epsilon_physical"] = seg.fit.epsilon_physical;
    doc["n_bins_used"] = seg.fit.n_bins_used;
    doc["used"] = seg.used;
    doc["note"] = seg.note;
    return doc;
}

nlohmann::json slope_to_json(const SweepResult& sweep, const std::string& hash,
                             std::uint64_t seed) {
    nlohmann::json points = nlohmann::json::array();
    for (const PhasePoint& p : sweep.slope.points)
        points.push_back({{"x_m", p.x}, {"phi_rad", p.phi}, {"se_phi_rad", p.se_phi}});
    return {{"schema", kSlopeSchema},
            {"config_hash", hash},
            {"seed", seed},
            {"sweep", sweep.sweep},
            {"m_rad_per_m", sweep.slope.m},
            {"intercept_rad", sweep.slope.intercept},
            {"se_m_rad_per_m", sweep.slope.se_m},
            {"r_squared", sweep.slope.r_squared},
            {"points", points}};
}

nlohmann::json estimate_to_json(const ExperimentConfig& cfg, const ThetaEstimate& est,
                                const std::vector<nlohmann::json>& slope_docs,
                                const std::string& hash) {
    nlohmann::json fixtures = nlohmann::json::array();
    for (const FixtureCheck& f : paper_fixture_checks())
        fixtures.push_back({{"name", f.name},
                            {"expected", f.expected},
                            {"actual", f.actual},
                            {"tolerance", f.tolerance},
                            {"pass", f.pass}});

    const double diffraction = diffraction_limit(est.dw.lambda_a, 10.9e-3);
    nlohmann::json doc;
    doc["schema"] = kEstimateSchema;
    doc["config_hash"] = hash;
    doc["seed"] = cfg.seed;
    doc["n_sweeps"] = cfg.n_sweeps;
    doc["m_bar_rad_per_m"] = est.m_bar;
    doc["sigma_m_rad_per_m"] = est.sigma_m;
    doc["sigma_alpha_rad"] = est.sigma_alpha;
    doc["theta_rad"] = est.theta;
    doc["sigma_theta_rad"] = est.sigma_theta;
    doc["lambda_a_m"] = est.dw.lambda_a;
    doc["lambda_h_m"] = est.dw.lambda_h;
    doc["delta_lambda_m"] = est.dw.delta_lambda;
    doc["true_theta_rad"] = est.true_theta ? nlohmann::json(*est.true_theta) : nlohmann::json();
    doc["z_score"] = est.z_score ? nlohmann::json(*est.z_score) : nlohmann::json();
    doc["resolution_limit_rad"] = resolution_limit(est.dw, est.sigma_alpha);
    doc["benchmark"] = {
        {"aperture_m", 10.9e-3},
        {"diffraction_limit_rad", diffraction},
        {"paper_quoted_diffraction_limit_rad", kPaperQuotedDiffractionLimit},
        {"gain_vs_sigma_theta",
         est.sigma_theta > 0.0 ? nlohmann::json(resolution_gain(est.sigma_theta, diffraction))
                               : nlohmann::json()},
        {"gain_separation_basis", diffraction * cfg.scene.L / cfg.scene.d}};
    doc["slopes"] = slope_docs;
    doc["paper_fixtures"] = fixtures;
    return doc;
}

// ---------------------------------------------------------------------------
// plot-ready CSVs
// ---------------------------------------------------------------------------

std::string fmtg(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_g2_plot_csv(const fs::path& path, const CorrelationHistogram& hist, const G2Fit& fit) {
    std::string out = "tau_s,g2,g2_err,g2_fit\n";
    for (std::size_t i = 0; i < hist.n_bins(); ++i) {
        const double tau = hist.tau_center(i);
        const double model =
            1.0 + 0.5 * fit.epsilon * std::cos(kTwoPi * fit.f_beat * tau + fit.phi_c);
        out += fmtg(tau);
        out += ',';
        out += fmtg(hist.g2[i]);
        out += ',';
        out += std::isnan(hist.g2_err[i]) ? "nan" : fmtg(hist.g2_err[i]);
        out += ',';
        out += fmtg(model);
        out += '\n';
    }
    write_file_atomic(path, out);
}

void write_phase_plot_csv(const fs::path& path, const SweepResult& sweep) {
    std::string out = "x_m,phi_rad,se_phi_rad,phi_line_rad\n";
    for (const PhasePoint& p : sweep.slope.points) {
        out += fmtg(p.x);
        out += ',';
        out += fmtg(p.phi);
        out += ',';
        out += fmtg(p.se_phi);
        out += ',';
        out += fmtg(sweep.slope.m * p.x + sweep.slope.intercept);
        out += '\n';
    }
    write_file_atomic(path, out);
}

void write_slopes_plot_csv(const fs::path& path, const std::vector<nlohmann::json>& slope_docs,
                           const ThetaEstimate& est) {
    std::string out = "sweep,m_rad_per_m,se_m_rad_per_m,m_bar,m_bar_minus_sigma,m_bar_plus_sigma\n";
    for (const nlohmann::json& s : slope_docs) {
        out += std::to_string(s["sweep"].get<std::size_t>());
        out += ',';
        out += fmtg(s["m_rad_per_m"].get<double>());
        out += ',';
        out += fmtg(s["se_m_rad_per_m"].get<double>());
        out += ',';
        out += fmtg(est.m_bar);
        out += ',';
        out += fmtg(est.m_bar - est.sigma_m);
        out += ',';
        out += fmtg(est.m_bar + est.sigma_m);
        out += '\n';
    }
    write_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

nlohmann::json build_manifest(const ExperimentConfig& cfg, const std::string& hash,
                              const std::string& status, double elapsed_s) {
    nlohmann::json segments = nlohmann::json::array();
    const double transit = cfg.plan.transit_time();
    for (std::size_t sweep = 0; sweep < cfg.n_sweeps; ++sweep)
        for (std::size_t k = 0; k < cfg.plan.segments(); ++k)
            segments.push_back({{"sweep", sweep},
                                {"segment", k},
                                {"x_mid_m", cfg.plan.segment_mid(k)},
                                {"t_start_s", static_cast<double>(k) * transit}});
    return {{"schema", kManifestSchema},
            {"tool", kToolVersion},
            {"config", config_to_json(cfg)},
            {"config_hash", hash},
            {"seed", cfg.seed},
            {"n_sweeps", cfg.n_sweeps},
            {"segments_per_sweep", cfg.plan.segments()},
            {"dwell_s", cfg.dwell_s()},
            {"segments", segments},
            {"status", status},
            {"timing", {{"wall_clock_utc", utc_now()}, {"elapsed_s", elapsed_s}}}};
}

nlohmann::json load_manifest(const ExperimentConfig& cfg, const fs::path& out) {
    std::ifstream in(manifest_path(out));
    if (!in)
        throw std::invalid_argument("missing manifest " + manifest_path(out).string() +
                                    " (run the simulate stage first)");
    nlohmann::json doc;
    in >> doc;
    const std::string schema = doc.value("schema", "");
    if (schema != kManifestSchema)
        throw std::runtime_error(manifest_path(out).string() + ": schema mismatch, expected " +
                                 kManifestSchema + ", found " + (schema.empty() ? "?" : schema));
    const std::string expected = config_hash(cfg);
    const std::string found = doc.value("config_hash", "");
    if (found != expected)
        throw std::invalid_argument("manifest config hash " + found +
                                    " does not match supplied config " + expected);
    return doc;
}

void write_failure_marker(const fs::path& out, const StageError& e) {
    try {
        nlohmann::json doc = {{"schema", "chbt/failure/v1"},
                              {"stage", e.stage()},
                              {"sweep", e.sweep()},
                              {"segment", e.segment()},
                              {"message", e.what()},
                              {"wall_clock_utc", utc_now()}};
        write_file_atomic(out / "FAILED.json", doc.dump(2) + "\n");
    } catch (const std::exception& inner) {
        log::error(std::string("could not write failure marker: ") + inner.what());
    }
}

// Runs fn(sweep_index) over all sweeps on up to `jobs` threads; rethrows the
// error of the lowest-numbered failing sweep.
void for_each_sweep(std::size_t n_sweeps, int jobs, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers =
        std::min<std::size_t>(std::max(jobs, 1), n_sweeps == 0 ? 1 : n_sweeps);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_sweeps; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::pair<std::size_t, std::exception_ptr>> errors;
    std::mutex err_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n_sweeps) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    errors.emplace_back(i, std::current_exception());
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (!errors.empty()) {
        auto first = std::min_element(errors.begin(), errors.end(),
                                      [](const auto& a, const auto& b) { return a.first < b.first; });
        std::rethrow_exception(first->second);
    }
}

}  // namespace

StageError::StageError(std::string stage, int sweep, int segment, const std::string& message)
    : std::runtime_error("stage '" + stage + "'" +
                         (sweep >= 0 ? " sweep " + std::to_string(sweep) : "") +
                         (segment >= 0 ? " segment " + std::to_string(segment) : "") + ": " +
                         message),
      stage_(std::move(stage)),
      sweep_(sweep),
      segment_(segment) {}

std::vector<FixtureCheck> paper_fixture_checks() {
    const double lambda1 = 1063.6e-9;
    const double lambda2 = 1064.4e-9;
    const DerivedWavelengths dw = derived_wavelengths(lambda1, lambda2);

    std::vector<FixtureCheck> checks;
    const auto add = [&checks](const std::string& name, double expected, double actual,
                               double tolerance) {
        checks.push_back(
            {name, expected, actual, tolerance, std::abs(actual - expected) <= tolerance});
    };

    add("lambda_a [m]", 1064.0e-9, dw.lambda_a, 1e-15);
    add("lambda_h [m]", 1063.99985e-9, dw.lambda_h, 5e-15);
    add("delta_lambda [m]", -0.8e-9, dw.delta_lambda, 1e-15);

    const ThetaEstimate published = theta_from_slope(22.0, 4.6, 1e-3, dw);
    add("theta(m_bar = 22.0 rad/m) [rad]", 3.7e-6, published.theta, 0.05e-6);
    add("sigma_theta(sigma_m = 4.6, sigma_alpha = 1e-3) [rad]", 1.1e-6, published.sigma_theta,
        0.05e-6);

    const double limit = resolution_limit(dw, 1e-3);
    add("resolution limit [rad]", 7.52e-7, limit, 0.005e-7);
    const ThetaEstimate slice = theta_from_slope(22.0, 0.0, 1e-3, dw);
    add("limit equals sigma_theta(sigma_m = 0), exact", 0.0, slice.sigma_theta - limit, 0.0);

    const double diffraction = diffraction_limit(dw.lambda_a, 10.9e-3);
    add("diffraction limit, 10.9 mm aperture [rad]", 1.19e-4, diffraction, 0.005e-4);
    add("resolvable separation at 1.43 km [m]", 0.17, diffraction * 1430.0, 0.005);
    return checks;
}

fs::path manifest_path(const fs::path& out) { return out / "manifest.json"; }

fs::path stream_path(const fs::path& out, std::size_t sweep, std::size_t segment,
                     Channel channel) {
    return out / "streams" / (tag(sweep, segment) + "_" + channel_name(channel) + ".bin");
}

fs::path hist_bin_path(const fs::path& out, std::size_t sweep, std::size_t segment) {
    return out / "hist" / (tag(sweep, segment) + ".bin");
}

fs::path hist_csv_path(const fs::path& out, std::size_t sweep, std::size_t segment) {
    return out / "hist" / (tag(sweep, segment) + ".csv");
}

fs::path fit_json_path(const fs::path& out, std::size_t sweep, std::size_t segment) {
    return out / "fits" / (tag(sweep, segment) + ".json");
}

fs::path slope_json_path(const fs::path& out, std::size_t sweep) {
    return out / "fits" / (tag(sweep) + "_slope.json");
}

fs::path estimate_json_path(const fs::path& out) { return out / "estimate.json"; }

PipelineResult run_pipeline(const ExperimentConfig& cfg, const RunOptions& options) {
    cfg.validate();
    const fs::path out = resolve_out(cfg, options);
    const std::string hash = config_hash(cfg);
    const auto t_begin = std::chrono::steady_clock::now();

    try {
        std::vector<SweepData> sweeps(cfg.n_sweeps);
        for_each_sweep(cfg.n_sweeps, options.jobs, [&](std::size_t i) {
            sweeps[i] = process_sweep(cfg, i, options.write_outputs);
            fit_sweep_slope(cfg, sweeps[i].result);
        });

        PipelineResult result;
        result.hash = hash;
        std::vector<double> slopes;
        std::vector<nlohmann::json> slope_docs;
        for (SweepData& s : sweeps) {
            slopes.push_back(s.result.slope.m);
            slope_docs.push_back(slope_to_json(s.result, hash, cfg.seed));
            result.sweeps.push_back(s.result);
        }

        // Per-sweep payloads go to disk before the aggregate step so a failed
        // estimate still leaves the partial outputs behind.
        if (options.write_outputs) {
            for (std::size_t i = 0; i < sweeps.size(); ++i) {
                const SweepData& s = sweeps[i];
                for (std::size_t k = 0; k < s.result.segments.size(); ++k) {
                    save_histogram_csv(s.hists[k], hist_csv_path(out, i, k));
                    write_file_atomic(fit_json_path(out, i, k),
                                      fit_to_json(s.result.segments[k], hash, cfg.seed).dump(2) + "\n");
                }
                write_file_atomic(slope_json_path(out, i),
                                  slope_to_json(s.result, hash, cfg.seed).dump(2) + "\n");
                write_phase_plot_csv(out / "plots" / (tag(i) + "_phase_vs_x.csv"), s.result);
            }
            if (!sweeps.empty() && !sweeps.front().hists.empty())
                write_g2_plot_csv(out / "plots" / "fig_g2_sweep00_seg000.csv",
                                  sweeps.front().hists.front(),
                                  sweeps.front().result.segments.front().fit);
        }

        result.estimate = build_estimate(cfg, slopes);

        if (options.write_outputs) {
            write_file_atomic(estimate_json_path(out),
                              estimate_to_json(cfg, result.estimate, slope_docs, hash).dump(2) + "\n");
            write_slopes_plot_csv(out / "plots" / "fig_slopes.csv", slope_docs, result.estimate);
            const double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
            write_file_atomic(manifest_path(out),
                              build_manifest(cfg, hash, "ok", elapsed).dump(2) + "\n");
        }
        return result;
    } catch (const StageError& e) {
        if (options.write_outputs) write_failure_marker(out, e);
        throw;
    }
}

void stage_simulate(const ExperimentConfig& cfg, const RunOptions& options) {
    cfg.validate();
    const fs::path out = resolve_out(cfg, options);
    const std::string hash = config_hash(cfg);
    const auto t_begin = std::chrono::steady_clock::now();

    try {
        for_each_sweep(cfg.n_sweeps, options.jobs, [&](std::size_t i) {
            std::vector<SweepSegment> segments;
            try {
                segments = simulate_sweep(cfg.scene, cfg.chain, cfg.noise, cfg.plan, cfg.dwell_s(),
                                          sweep_seed(cfg, i));
            } catch (const std::exception& e) {
                throw StageError("simulate", static_cast<int>(i), -1, e.what());
            }
            for (const SweepSegment& seg : segments) {
                save_stream(seg.streams.a, stream_path(out, i, seg.index, Channel::A));
                save_stream(seg.streams.b, stream_path(out, i, seg.index, Channel::B));
            }
        });
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
        write_file_atomic(manifest_path(out),
                          build_manifest(cfg, hash, "simulated", elapsed).dump(2) + "\n");
    } catch (const StageError& e) {
        write_failure_marker(out, e);
        throw;
    }
}

void stage_correlate(const ExperimentConfig& cfg, const RunOptions& options) {
    cfg.validate();
    const fs::path out = resolve_out(cfg, options);
    load_manifest(cfg, out);

    try {
        for (std::size_t i = 0; i < cfg.n_sweeps; ++i) {
            for (std::size_t k = 0; k < cfg.plan.segments(); ++k) {
                try {
                    const EventStream a = load_stream(stream_path(out, i, k, Channel::A));
                    const EventStream b = load_stream(stream_path(out, i, k, Channel::B));
                    const CorrelationHistogram hist =
                        g2_histogram(a, b, cfg.correlator.bin_width, cfg.correlator.tau_max);
                    save_histogram(hist, hist_bin_path(out, i, k));
                    save_histogram_csv(hist, hist_csv_path(out, i, k));
                } catch (const StageError&) {
                    throw;
                } catch (const std::exception& e) {
                    throw StageError("correlate", static_cast<int>(i), static_cast<int>(k),
                                     e.what());
                }
            }
        }
    } catch (const StageError& e) {
        write_failure_marker(out, e);
        throw;
    }
}

void stage_fit(const ExperimentConfig& cfg, const RunOptions& options) {
    cfg.validate();
    const fs::path out = resolve_out(cfg, options);
    const nlohmann::json manifest = load_manifest(cfg, out);
    const std::string hash = config_hash(cfg);

    try {
        const double transit = cfg.plan.transit_time();
        for (std::size_t i = 0; i < cfg.n_sweeps; ++i) {
            SweepResult sweep;
            sweep.sweep = i;
            CorrelationHistogram first_hist;
            for (std::size_t k = 0; k < cfg.plan.segments(); ++k) {
                CorrelationHistogram hist;
                try {
                    hist = load_histogram(hist_bin_path(out, i, k));
                } catch (const std::exception& e) {
                    throw StageError("fit", static_cast<int>(i), static_cast<int>(k), e.what());
                }
                sweep.segments.push_back(fit_segment(cfg, i, k, cfg.plan.segment_mid(k),
                                                     static_cast<double>(k) * transit, hist));
                write_file_atomic(fit_json_path(out, i, k),
                                  fit_to_json(sweep.segments.back(), hash, cfg.seed).dump(2) + "\n");
                if (i == 0 && k == 0) first_hist = std::move(hist);
            }
            fit_sweep_slope(cfg, sweep);
            write_file_atomic(slope_json_path(out, i), slope_to_json(sweep, hash, cfg.seed).dump(2) + "\n");
            write_phase_plot_csv(out / "plots" / (tag(i) + "_phase_vs_x.csv"), sweep);
            if (i == 0)
                write_g2_plot_csv(out / "plots" / "fig_g2_sweep00_seg000.csv", first_hist,
                                  sweep.segments.front().fit);
        }
    } catch (const StageError& e) {
        write_failure_marker(out, e);
        throw;
    }
}

PipelineResult stage_estimate(const ExperimentConfig& cfg, const RunOptions& options) {
    cfg.validate();
    const fs::path out = resolve_out(cfg, options);
    load_manifest(cfg, out);
    const std::string hash = config_hash(cfg);

    try {
        PipelineResult result;
        result.hash = hash;
        std::vector<double> slopes;
        std::vector<nlohmann::json> slope_docs;
        for (std::size_t i = 0; i < cfg.n_sweeps; ++i) {
            std::ifstream in(slope_json_path(out, i));
            if (!in)
                throw StageError("estimate", static_cast<int>(i), -1,
                                 "missing " + slope_json_path(out, i).string() +
                                     " (run the fit stage first)");
            nlohmann::json doc;
            in >> doc;
            const std::string schema = doc.value("schema", "");
            if (schema != kSlopeSchema)
                throw StageError("estimate", static_cast<int>(i), -1,
                                 "schema mismatch, expected " + std::string(kSlopeSchema) +
                                     ", found " + (schema.empty() ? "?" : schema));
            SweepResult sweep;
            sweep.sweep = i;
            sweep.slope.m = doc["m_rad_per_m"].get<double>();
            sweep.slope.intercept = doc["intercept_rad"].get<double>();
            sweep.slope.se_m = doc["se_m_rad_per_m"].get<double>();
            sweep.slope.r_squared = doc["r_squared"].get<double>();
            for (const auto& p : doc["points"])
                sweep.slope.points.push_back({p["x_m"].get<double>(), p["phi_rad"].get<double>(),
                                              p["se_phi_rad"].get<double>()});
            slopes.push_back(sweep.slope.m);
            slope_docs.push_back(slope_to_json(sweep, hash, cfg.seed));
            result.sweeps.push_back(std::move(sweep));
        }
        result.estimate = build_estimate(cfg, slopes);
        write_file_atomic(estimate_json_path(out),
                          estimate_to_json(cfg, result.estimate, slope_docs, hash).dump(2) + "\n");
        write_slopes_plot_csv(out / "plots" / "fig_slopes.csv", slope_docs, result.estimate);
        return result;
    } catch (const StageError& e) {
        write_failure_marker(out, e);
        throw;
    }
}

}  // namespace chbt
