#include "chbt/config.hpp"

#include <fstream>
#include <stdexcept>

namespace chbt {

namespace {

double require_number(const nlohmann::json& obj, const char* key) {
    if (!obj.contains(key))
        throw std::invalid_argument(std::string("config: missing field '") + key + "'");
    if (!obj[key].is_number())
        throw std::invalid_argument(std::string("config: field '") + key + "' must be a number");
    return obj[key].get<double>();
}

double number_or(const nlohmann::json& obj, const char* key, double fallback) {
    if (!obj.contains(key) || obj[key].is_null()) return fallback;
    if (!obj[key].is_number())
        throw std::invalid_argument(std::string("config: field '") + key + "' must be a number");
    return obj[key].get<double>();
}

const nlohmann::json& require_object(const nlohmann::json& doc, const char* key) {
    if (!doc.contains(key) || !doc[key].is_object())
        throw std::invalid_argument(std::string("config: missing section '") + key + "'");
    return doc[key];
}

}  // namespace

void ExperimentConfig::validate() const {
    scene.validate();
    chain.validate();
    noise.validate();
    plan.validate();
    if (chain.beat() == 0.0)
        throw std::invalid_argument(
            "config: chain.f3_1_hz must differ from chain.f3_2_hz (chromatic beat)");
    if (!(correlator.bin_width > 0.0))
        throw std::invalid_argument("config: correlator.bin_width_ns must be positive");
    if (!(correlator.tau_max >= 10.0 * correlator.bin_width))
        throw std::invalid_argument("config: correlator.tau_max_ns must be at least 10 bins");
    if (sigma_alpha < 0.0)
        throw std::invalid_argument("config: estimator.sigma_alpha_rad must be non-negative");
    if (n_sweeps < 1) throw std::invalid_argument("config: n_sweeps must be >= 1");
    if (dwell && (!(*dwell > 0.0) || *dwell > plan.transit_time() * (1.0 + 1e-9)))
        throw std::invalid_argument("config: dwell_s must be in (0, segment transit time]");
    if (out_dir.empty()) throw std::invalid_argument("config: out_dir must not be empty");
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.scene.lambda1 = 1063.6e-9;
    cfg.scene.lambda2 = 1064.4e-9;
    cfg.scene.d = 4.2e-3;
    cfg.scene.L = 1430.0;
    cfg.scene.alpha = 0.0;

    cfg.chain.f3_1 = 15.79e6;
    cfg.chain.f3_2 = 0.0;
    cfg.chain.amp1 = 1.0;
    cfg.chain.amp2 = amplitude_ratio_for_visibility(0.274);
    // Counts per detector per second; high enough that every 0.4 s segment
    // collects ~20 coincidences per bin and the phase errors stay Gaussian.
    cfg.chain.rate_scale = 2e5;
    cfg.chain.jitter_sigma = 350e-12;

    cfg.noise.phi_f = 0.0;
    // Calibrated so 10 sweeps of the plan below spread the fitted slopes by
    // sigma_m ~ 4.6 rad/m (see tools/calibrate_noise).
    cfg.noise.phi_n_sigma = 4.0;
    cfg.noise.phi_n_tau = 40.0;

    cfg.plan.x_start = 0.16;
    cfg.plan.x_end = 0.96;
    cfg.plan.x_speed = 0.05;
    cfg.plan.segment_width = 0.02;

    cfg.correlator.bin_width = 1e-9;
    cfg.correlator.tau_max = 500e-9;

    cfg.sigma_alpha = 1e-3;
    cfg.n_sweeps = 10;
    cfg.seed = 20201223;
    cfg.out_dir = "chbt_out";
    cfg.weighted_slope_fit = true;
    return cfg;
}

ExperimentConfig config_from_json(const nlohmann::json& doc) {
    ExperimentConfig cfg;

    const auto& scene = require_object(doc, "scene");
    cfg.scene.lambda1 = require_number(scene, "lambda1_nm") * 1e-9;
    cfg.scene.lambda2 = require_number(scene, "lambda2_nm") * 1e-9;
    cfg.scene.d = require_number(scene, "d_mm") * 1e-3;
    cfg.scene.L = require_number(scene, "L_m");
    cfg.scene.alpha = number_or(scene, "alpha_rad", 0.0);

    const auto& chain = require_object(doc, "chain");
    cfg.chain.f3_1 = require_number(chain, "f3_1_hz");
    cfg.chain.f3_2 = require_number(chain, "f3_2_hz");
    const bool has_eps = chain.contains("epsilon_target") && !chain["epsilon_target"].is_null();
    const bool has_amps = (chain.contains("amp1") && !chain["amp1"].is_null()) ||
                          (chain.contains("amp2") && !chain["amp2"].is_null());
    if (has_eps && has_amps)
        throw std::invalid_argument(
            "config: chain.epsilon_target and chain.amp1/amp2 are mutually exclusive");
    if (has_eps) {
        cfg.chain.amp1 = 1.0;
        cfg.chain.amp2 = amplitude_ratio_for_visibility(chain["epsilon_target"].get<double>());
    } else {
        cfg.chain.amp1 = number_or(chain, "amp1", 1.0);
        cfg.chain.amp2 = number_or(chain, "amp2", 1.0);
    }
    cfg.chain.rate_scale = require_number(chain, "rate_scale_cps");
    cfg.chain.jitter_sigma = number_or(chain, "jitter_sigma_ps", 0.0) * 1e-12;
    if (chain.contains("coherence_time_ns") && !chain["coherence_time_ns"].is_null())
        cfg.chain.coherence_time = chain["coherence_time_ns"].get<double>() * 1e-9;

    const auto& noise = require_object(doc, "noise");
    cfg.noise.phi_f = number_or(noise, "phi_f_rad", 0.0);
    cfg.noise.phi_n_sigma = number_or(noise, "phi_n_sigma_rad", 0.0);
    cfg.noise.phi_n_tau = number_or(noise, "phi_n_tau_s", 1.0);

    const auto& plan = require_object(doc, "plan");
    cfg.plan.x_start = require_number(plan, "x_start_m");
    cfg.plan.x_end = require_number(plan, "x_end_m");
    cfg.plan.x_speed = require_number(plan, "x_speed_m_per_s");
    cfg.plan.segment_width = require_number(plan, "segment_width_m");

    const auto& correlator = require_object(doc, "correlator");
    cfg.correlator.bin_width = require_number(correlator, "bin_width_ns") * 1e-9;
    cfg.correlator.tau_max = require_number(correlator, "tau_max_ns") * 1e-9;

    const auto& estimator = require_object(doc, "estimator");
    cfg.sigma_alpha = require_number(estimator, "sigma_alpha_rad");

    if (!doc.contains("n_sweeps") || !doc["n_sweeps"].is_number_unsigned())
        throw std::invalid_argument("config: n_sweeps must be a non-negative integer");
    cfg.n_sweeps = doc["n_sweeps"].get<std::size_t>();
    if (doc.contains("dwell_s") && !doc["dwell_s"].is_null())
        cfg.dwell = doc["dwell_s"].get<double>();
    if (!doc.contains("seed") || !doc["seed"].is_number_unsigned())
        throw std::invalid_argument("config: seed must be a non-negative integer");
    cfg.seed = doc["seed"].get<std::uint64_t>();
    cfg.noise.seed = cfg.seed;
    cfg.out_dir = doc.value("out_dir", std::string("chbt_out"));
    cfg.weighted_slope_fit = doc.value("weighted_slope_fit", true);

    cfg.validate();
    return cfg;
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::json doc;
    doc["scene"] = {{"lambda1_nm", cfg.scene.lambda1 * 1e9},
                    {"lambda2_nm", cfg.scene.lambda2 * 1e9},
                    {"d_mm", cfg.scene.d * 1e3},
                    {"L_m", cfg.scene.L},
                    {"alpha_rad", cfg.scene.alpha}};
    doc["chain"] = {{"f3_1_hz", cfg.chain.f3_1},
                    {"f3_2_hz", cfg.chain.f3_2},
                    {"amp1", cfg.chain.amp1},
                    {"amp2", cfg.chain.amp2},
                    {"rate_scale_cps", cfg.chain.rate_scale},
                    {"jitter_sigma_ps", cfg.chain.jitter_sigma * 1e12}};
    if (cfg.chain.coherence_time)
        doc["chain"]["coherence_time_ns"] = *cfg.chain.coherence_time * 1e9;
    doc["noise"] = {{"phi_f_rad", cfg.noise.phi_f},
                    {"phi_n_sigma_rad", cfg.noise.phi_n_sigma},
                    {"phi_n_tau_s", cfg.noise.phi_n_tau}};
    doc["plan"] = {{"x_start_m", cfg.plan.x_start},
                   {"x_end_m", cfg.plan.x_end},
                   {"x_speed_m_per_s", cfg.plan.x_speed},
                   {"segment_width_m", cfg.plan.segment_width}};
    doc["correlator"] = {{"bin_width_ns", cfg.correlator.bin_width * 1e9},
                         {"tau_max_ns", cfg.correlator.tau_max * 1e9}};
    doc["estimator"] = {{"sigma_alpha_rad", cfg.sigma_alpha}};
    doc["n_sweeps"] = cfg.n_sweeps;
    if (cfg.dwell) doc["dwell_s"] = *cfg.dwell;
    doc["seed"] = cfg.seed;
    doc["out_dir"] = cfg.out_dir;
    doc["weighted_slope_fit"] = cfg.weighted_slope_fit;
    return doc;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config: " + path.string() + ": " + e.what());
    }
    return config_from_json(doc);
}

std::string config_hash(const ExperimentConfig& config) {
    // out_dir routes files and does not affect any data payload.
    nlohmann::json doc = config_to_json(config);
    doc.erase("out_dir");
    const std::string canonical = doc.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace chbt
