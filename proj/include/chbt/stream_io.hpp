#pragma once
// chbt/stream_io.hpp - on-disk formats.
//
// Event streams: little-endian binary, header {magic "CHBT", version u16,
// channel u8 (0 = A, 1 = B), count u64}, then count timestamps as u64
// picoseconds. A CSV debug format writes one timestamp per line in seconds
// with 12 significant digits.
//
// Histograms: a CSV export (tau_s, counts, g2, g2_err) and a lossless binary
// round-trip format ("CHBH") mirroring the in-memory layout so staged
// pipeline runs chain bit-exactly.
//
// All writers go through write-temp-then-rename, so a crashed or parallel
// run never leaves a partially written file under the final name.

#include <filesystem>
#include <string>

#include "chbt/correlator.hpp"
#include "chbt/photon_sim.hpp"

namespace chbt {

inline constexpr std::uint16_t kStreamFormatVersion = 1;
inline constexpr std::uint16_t kHistogramFormatVersion = 1;

void save_stream(const EventStream& stream, const std::filesystem::path& path);
/// Throws std::runtime_error on bad magic or a version mismatch (the message
/// names the expected and found versions).
EventStream load_stream(const std::filesystem::path& path);

void save_stream_csv(const EventStream& stream, const std::filesystem::path& path);

void save_histogram_csv(const CorrelationHistogram& hist, const std::filesystem::path& path);
/// Reads the CSV export back; bin width and centers are reconstructed from
/// the tau column. Singles counts and duration are not stored in the CSV, so
/// only the fit-facing fields (counts, g2, g2_err) are recovered.
CorrelationHistogram load_histogram_csv(const std::filesystem::path& path);

void save_histogram(const CorrelationHistogram& hist, const std::filesystem::path& path);
CorrelationHistogram load_histogram(const std::filesystem::path& path);

/// Writes content to path atomically (temp file in the same directory, then
/// rename).
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace chbt
