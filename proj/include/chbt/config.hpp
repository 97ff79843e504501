#pragma once
// chbt/config.hpp - experiment configuration.
//
// The on-disk form is a single JSON document with units spelled out in the
// field names (lambda1_nm, x_speed_m_per_s, ...); nothing is unit-inferred.
// Internally everything is SI. A stable digest of the canonicalized document
// is stamped on every output file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "chbt/geometry.hpp"
#include "chbt/photon_sim.hpp"

namespace chbt {

struct CorrelatorSettings {
    double bin_width = 1e-9;  ///< [s]
    double tau_max = 500e-9;  ///< [s]
};

struct ExperimentConfig {
    SourcePair scene;
    DetectionChainSpec chain;
    NoiseModel noise;
    SweepPlan plan;
    CorrelatorSettings correlator;
    double sigma_alpha = 1e-3;          ///< rotator angle uncertainty [rad]
    std::size_t n_sweeps = 10;
    std::optional<double> dwell;        ///< acquisition time per segment [s]; default = transit
    std::uint64_t seed = 0;
    std::string out_dir = "chbt_out";
    bool weighted_slope_fit = true;

    double dwell_s() const { return dwell.value_or(plan.transit_time()); }

    /// Throws std::invalid_argument on any violated invariant.
    void validate() const;
};

/// The measured-run parameter set: 1063.6/1064.4 nm sources 4.2 mm apart at
/// 1.43 km, baseline swept 0.16 -> 0.96 m at 0.05 m/s, 15.79 MHz beat,
/// visibility target 0.274, 10 sweeps, sigma_alpha 1e-3 rad. Noise-phase
/// parameters are calibrated so 10 sweeps give sigma_m near 4.6 rad/m.
ExperimentConfig default_config();

ExperimentConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const ExperimentConfig& config);

ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a 64 digest of the canonicalized config document, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace chbt
