#pragma once
// chbt/pipeline.hpp - end-to-end orchestration: simulate -> correlate -> fit
// -> estimate, as one in-memory run or as file-chained stages.
//
// Reproducibility contract: config + seed fully determine every data payload.
// Event timestamps are integer picoseconds, the stream and histogram binaries
// are lossless, and every derived number is computed identically in the
// staged and in-memory paths, so `run` and the stage chain produce
// byte-identical CSV/JSON payloads (manifest timing fields excepted).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "chbt/config.hpp"
#include "chbt/estimator.hpp"
#include "chbt/fitters.hpp"

namespace chbt {

inline constexpr const char* kToolVersion = "chbt 0.1.0";

/// Stage failure with the location that produced it. sweep/segment are -1
/// when not applicable.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, int sweep, int segment, const std::string& message);

    const std::string& stage() const { return stage_; }
    int sweep() const { return sweep_; }
    int segment() const { return segment_; }

private:
    std::string stage_;
    int sweep_;
    int segment_;
};

struct RunOptions {
    std::optional<std::filesystem::path> out_dir;  ///< overrides config.out_dir
    int jobs = 1;                                  ///< sweep-level parallelism
    bool write_outputs = true;                     ///< false: compute only
};

struct SegmentResult {
    std::size_t sweep = 0;
    std::size_t segment = 0;
    double x_mid = 0.0;    ///< [m]
    double t_start = 0.0;  ///< [s]
    G2Fit fit;
    bool used = true;      ///< entered the sweep's line fit
    std::string note;      ///< drop reason when used == false
};

struct SweepResult {
    std::size_t sweep = 0;
    SlopeFit slope;
    std::vector<SegmentResult> segments;
};

struct PipelineResult {
    ThetaEstimate estimate;
    std::vector<SweepResult> sweeps;
    std::string hash;  ///< config hash stamped on the outputs
};

/// One closed-form reference comparison (no simulation involved).
struct FixtureCheck {
    std::string name;
    double expected = 0.0;
    double actual = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// The closed-form reference ledger: derived wavelengths, the angular
/// estimate and uncertainty for the published slope statistics, the
/// infinite-baseline limit and the diffraction benchmark.
std::vector<FixtureCheck> paper_fixture_checks();

/// Full pipeline. Writes per-segment histogram CSVs, per-segment fit JSONs,
/// per-sweep slope JSONs, plot-ready CSVs, estimate.json and manifest.json
/// under the output directory (unless write_outputs is off). Any stage error
/// is rethrown as StageError after a FAILED.json marker is written; partial
/// outputs are retained.
PipelineResult run_pipeline(const ExperimentConfig& config, const RunOptions& options = {});

/// Stage-wise entry points. Each stage reads the previous stage's files from
/// the output directory and writes the same payloads the corresponding slice
/// of run_pipeline writes.
void stage_simulate(const ExperimentConfig& config, const RunOptions& options = {});
void stage_correlate(const ExperimentConfig& config, const RunOptions& options = {});
void stage_fit(const ExperimentConfig& config, const RunOptions& options = {});
PipelineResult stage_estimate(const ExperimentConfig& config, const RunOptions& options = {});

// Output layout helpers (shared by the stages and the tests).
std::filesystem::path manifest_path(const std::filesystem::path& out);
std::filesystem::path stream_path(const std::filesystem::path& out, std::size_t sweep,
                                  std::size_t segment, Channel channel);
std::filesystem::path hist_bin_path(const std::filesystem::path& out, std::size_t sweep,
                                    std::size_t segment);
std::filesystem::path hist_csv_path(const std::filesystem::path& out, std::size_t sweep,
                                    std::size_t segment);
std::filesystem::path fit_json_path(const std::filesystem::path& out, std::size_t sweep,
                                    std::size_t segment);
std::filesystem::path slope_json_path(const std::filesystem::path& out, std::size_t sweep);
std::filesystem::path estimate_json_path(const std::filesystem::path& out);

}  // namespace chbt
