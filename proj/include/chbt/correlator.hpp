#pragma once
// chbt/correlator.hpp - normalized second-order correlation g2(tau) from two
// time-tag streams.
//
// Delay convention: tau = t_B - t_A. Bins are centered on integer multiples
// of the bin width, k in [-k_max, +k_max], so the histogram is symmetric by
// construction: swapping the input streams mirrors the counts bin-exactly.
// The accepted pair window extends half a bin beyond +-tau_max so that every
// bin, including the outermost two, has full coverage (no half-filled edge
// bins to throw away).

#include <cstdint>
#include <vector>

#include "chbt/photon_sim.hpp"

namespace chbt {

struct CorrelationHistogram {
    std::int64_t bin_width_ps = 0;  ///< bin width [ps]
    std::int64_t k_max = 0;         ///< bin centers at k*bin_width, k in [-k_max, k_max]
    std::vector<std::uint64_t> counts;  ///< coincidences per bin, 2*k_max+1 bins
    std::uint64_t n_a = 0;          ///< singles on channel A
    std::uint64_t n_b = 0;          ///< singles on channel B
    double duration = 0.0;          ///< acquisition span [s] (latest timestamp seen)
    std::vector<double> g2;         ///< counts * duration / (n_a * n_b * bin_width)
    std::vector<double> g2_err;     ///< g2/sqrt(counts); NaN marks zero-count bins

    std::size_t n_bins() const { return counts.size(); }
    double bin_width() const { return static_cast<double>(bin_width_ps) * 1e-12; }
    double tau_center(std::size_t i) const {
        return (static_cast<double>(i) - static_cast<double>(k_max)) * bin_width();
    }
    double tau_min() const { return -(static_cast<double>(k_max) + 0.5) * bin_width(); }
    double tau_max() const { return (static_cast<double>(k_max) + 0.5) * bin_width(); }

    /// Recomputes g2 and g2_err from counts and the normalization fields.
    void normalize();
};

/// Correlates two sorted streams with a two-pointer sliding window: for each
/// A event only the B events within the tau window are visited, O(N * k)
/// where k is the mean number of partners per window.
///
/// bin_width and tau_max are in seconds; tau_max must be at least 10 bins.
/// Throws std::invalid_argument on empty or unsorted input (naming the
/// offending channel).
CorrelationHistogram g2_histogram(const EventStream& stream_a, const EventStream& stream_b,
                                  double bin_width, double tau_max);

/// Sums counts, singles and durations over identically binned histograms and
/// renormalizes. Throws std::invalid_argument listing the offending input
/// indices when the binning differs.
CorrelationHistogram merge_histograms(const std::vector<CorrelationHistogram>& parts);

}  // namespace chbt
