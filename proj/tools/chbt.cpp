// chbt - chromatic intensity interferometry simulator and estimation pipeline.
//
// Subcommands mirror the pipeline stages (simulate | correlate | fit |
// estimate) plus `run` for the whole chain; `--paper-check` runs the
// closed-form reference fixtures without any simulation.
//
// Exit codes: 0 success, 2 configuration error, 3 stage failure,
// 4 fixture-check failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "chbt/config.hpp"
#include "chbt/fitters.hpp"
#include "chbt/log.hpp"
#include "chbt/pipeline.hpp"
#include "chbt/stream_io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitFixture = 4;

struct CliState {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string out_dir;
    std::string format = "json";
};

chbt::ExperimentConfig resolve_config(const CliState& state) {
    chbt::ExperimentConfig cfg =
        state.config_path.empty() ? chbt::default_config() : chbt::load_config(state.config_path);
    if (state.seed) {
        cfg.seed = *state.seed;
        cfg.noise.seed = *state.seed;
    }
    if (!state.out_dir.empty()) cfg.out_dir = state.out_dir;
    cfg.validate();
    return cfg;
}

chbt::RunOptions run_options(const CliState& state) {
    chbt::RunOptions options;
    options.jobs = state.jobs;
    return options;
}

int paper_check() {
    const auto checks = chbt::paper_fixture_checks();
    int failures = 0;
    std::printf("paper fixture check (closed form, no simulation)\n");
    for (const auto& c : checks) {
        if (!c.pass) ++failures;
        std::printf("  %-4s %-52s actual % .6e  expected % .6e  tol %.1e\n",
                    c.pass ? "PASS" : "FAIL", c.name.c_str(), c.actual, c.expected, c.tolerance);
    }
    std::printf("%d/%zu fixtures passed\n", static_cast<int>(checks.size()) - failures,
                checks.size());
    return failures == 0 ? kExitOk : kExitFixture;
}

void print_estimate(const chbt::PipelineResult& result, const std::string& format) {
    const chbt::ThetaEstimate& est = result.estimate;
    if (format == "csv") {
        std::printf("quantity,value\n");
        std::printf("m_bar_rad_per_m,%.9g\n", est.m_bar);
        std::printf("sigma_m_rad_per_m,%.9g\n", est.sigma_m);
        std::printf("theta_rad,%.9g\n", est.theta);
        std::printf("sigma_theta_rad,%.9g\n", est.sigma_theta);
        if (est.true_theta) std::printf("true_theta_rad,%.9g\n", *est.true_theta);
        if (est.z_score) std::printf("z_score,%.9g\n", *est.z_score);
        std::printf("config_hash,%s\n", result.hash.c_str());
    } else {
        nlohmann::json doc = {{"m_bar_rad_per_m", est.m_bar},
                              {"sigma_m_rad_per_m", est.sigma_m},
                              {"theta_rad", est.theta},
                              {"sigma_theta_rad", est.sigma_theta},
                              {"config_hash", result.hash}};
        if (est.true_theta) doc["true_theta_rad"] = *est.true_theta;
        if (est.z_score) doc["z_score"] = *est.z_score;
        std::cout << doc.dump(2) << "\n";
    }
}

// Single-pair correlate: two stream files in, one histogram file out.
int correlate_files(const std::string& a_path, const std::string& b_path,
                    const std::string& out_path, const chbt::ExperimentConfig& cfg) {
    const chbt::EventStream a = chbt::load_stream(a_path);
    const chbt::EventStream b = chbt::load_stream(b_path);
    const chbt::CorrelationHistogram hist =
        chbt::g2_histogram(a, b, cfg.correlator.bin_width, cfg.correlator.tau_max);
    const std::filesystem::path out(out_path);
    if (out.extension() == ".bin") {
        chbt::save_histogram(hist, out);
    } else if (out.extension() == ".csv") {
        chbt::save_histogram_csv(hist, out);
    } else {
        throw std::invalid_argument("correlate: output must end in .csv or .bin, got " + out_path);
    }
    chbt::log::info("wrote " + out_path);
    return kExitOk;
}

// Single-file fit: one histogram (.bin or .csv) in, one fit report out.
int fit_file(const std::string& input, const std::string& out_json,
             const chbt::ExperimentConfig& cfg) {
    const std::filesystem::path in(input);
    const chbt::CorrelationHistogram hist =
        in.extension() == ".csv" ? chbt::load_histogram_csv(in) : chbt::load_histogram(in);

    double f_init = 0.0;
    try {
        f_init = chbt::estimate_beat_frequency(hist);
    } catch (const std::exception& e) {
        throw std::runtime_error(input + ": " + e.what());
    }
    chbt::G2FitOptions options;
    options.beat_sign_negative = cfg.chain.beat() < 0.0;
    const chbt::G2Fit fit = chbt::fit_g2(hist, f_init, options);
    // The frequency came from scanning the file's own periodogram, so the
    // detection threshold carries a selection penalty over the plain 3 sigma.
    if (fit.epsilon < 5.0 * fit.se_epsilon)
        throw std::runtime_error(input + ": no oscillation detected: visibility not significant");

    nlohmann::json doc = {{"schema", "chbt/g2fit/v1"},
                          {"input", input},
                          {"epsilon", fit.epsilon},
                          {"f_beat_hz", fit.f_beat},
                          {"phi_c_rad", fit.phi_c},
                          {"se_epsilon", fit.se_epsilon},
                          {"se_f_hz", fit.se_f},
                          {"se_phi_rad", fit.se_phi},
                          {"chi2_dof", fit.chi2_dof},
                          {"converged", fit.converged},
                          {"n_bins_used", fit.n_bins_used}};
    if (out_json.empty()) {
        std::cout << doc.dump(2) << "\n";
    } else {
        chbt::write_file_atomic(out_json, doc.dump(2) + "\n");
        chbt::log::info("wrote " + out_json);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chromatic intensity interferometry: simulate photon streams, correlate, "
                 "fit the g2 oscillation and estimate the source separation"};
    app.require_subcommand(0, 1);

    CliState state;
    bool want_paper_check = false;
    app.add_option("--config", state.config_path, "experiment config JSON (defaults to the built-in reference setup)");
    app.add_option("--seed", state.seed, "override the config seed");
    app.add_option("--jobs", state.jobs, "max parallel sweeps")->check(CLI::PositiveNumber);
    app.add_option("--out", state.out_dir, "override the output directory");
    app.add_flag("--paper-check", want_paper_check, "run the closed-form reference fixtures and exit");
    app.add_option("--format", state.format, "stdout summary format for run/estimate")
        ->check(CLI::IsMember({"csv", "json"}));

    CLI::App* cmd_run = app.add_subcommand("run", "full pipeline: simulate, correlate, fit, estimate");
    cmd_run->fallthrough();
    CLI::App* cmd_sim = app.add_subcommand("simulate", "generate event streams and the run manifest");
    cmd_sim->fallthrough();
    bool sim_stream_csv = false;
    cmd_sim->add_flag("--stream-csv", sim_stream_csv,
                      "also write debug CSV streams (one timestamp per line, seconds)");

    CLI::App* cmd_corr = app.add_subcommand("correlate", "histogram g2(tau) from event streams");
    cmd_corr->fallthrough();
    std::string corr_a, corr_b, corr_out;
    cmd_corr->add_option("--a", corr_a, "channel A stream file (single-pair mode)");
    cmd_corr->add_option("--b", corr_b, "channel B stream file (single-pair mode)");
    cmd_corr->add_option("--out-hist", corr_out, "histogram output, .csv or .bin (single-pair mode)");

    CLI::App* cmd_fit = app.add_subcommand("fit", "fit the g2 oscillation and the per-sweep slopes");
    cmd_fit->fallthrough();
    std::string fit_input, fit_out;
    cmd_fit->add_option("--input", fit_input, "one histogram file, .bin or .csv (single-file mode)");
    cmd_fit->add_option("--out-json", fit_out, "fit report path (single-file mode; default stdout)");

    CLI::App* cmd_est = app.add_subcommand("estimate", "aggregate slopes into the angular estimate");
    cmd_est->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    if (want_paper_check) return paper_check();
    if (app.get_subcommands().empty()) {
        std::cout << app.help();
        return kExitOk;
    }

    chbt::ExperimentConfig cfg;
    try {
        cfg = resolve_config(state);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    }

    try {
        if (cmd_run->parsed()) {
            const chbt::PipelineResult result = chbt::run_pipeline(cfg, run_options(state));
            print_estimate(result, state.format);
        } else if (cmd_sim->parsed()) {
            chbt::stage_simulate(cfg, run_options(state));
            if (sim_stream_csv) {
                const std::filesystem::path out(cfg.out_dir);
                for (std::size_t i = 0; i < cfg.n_sweeps; ++i) {
                    for (std::size_t k = 0; k < cfg.plan.segments(); ++k) {
                        for (const chbt::Channel ch : {chbt::Channel::A, chbt::Channel::B}) {
                            std::filesystem::path csv = chbt::stream_path(out, i, k, ch);
                            csv.replace_extension(".csv");
                            chbt::save_stream_csv(
                                chbt::load_stream(chbt::stream_path(out, i, k, ch)), csv);
                        }
                    }
                }
            }
        } else if (cmd_corr->parsed()) {
            if (!corr_a.empty() || !corr_b.empty() || !corr_out.empty()) {
                if (corr_a.empty() || corr_b.empty() || corr_out.empty())
                    throw std::invalid_argument(
                        "correlate single-pair mode needs --a, --b and --out-hist together");
                return correlate_files(corr_a, corr_b, corr_out, cfg);
            }
            chbt::stage_correlate(cfg, run_options(state));
        } else if (cmd_fit->parsed()) {
            if (!fit_input.empty()) return fit_file(fit_input, fit_out, cfg);
            chbt::stage_fit(cfg, run_options(state));
        } else if (cmd_est->parsed()) {
            const chbt::PipelineResult result = chbt::stage_estimate(cfg, run_options(state));
            print_estimate(result, state.format);
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitStage;
    }
    return kExitOk;
}
