#include "chbt/correlator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace chbt {

namespace {

void require_usable(const EventStream& s, char label) {
    if (s.empty())
        throw std::invalid_argument(std::string("g2_histogram: stream ") + label + " is empty");
    if (!std::is_sorted(s.times_ps.begin(), s.times_ps.end()))
        throw std::invalid_argument(std::string("g2_histogram: stream ") + label +
                                    " is not sorted ascending");
}

}  // namespace

void CorrelationHistogram::normalize() {
    const std::size_t n = counts.size();
    g2.assign(n, 0.0);
    g2_err.assign(n, std::numeric_limits<double>::quiet_NaN());
    const double denom =
        static_cast<double>(n_a) * static_cast<double>(n_b) * bin_width();
    if (denom <= 0.0 || duration <= 0.0) return;
    const double scale = duration / denom;
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = static_cast<double>(counts[i]);
        g2[i] = c * scale;
        if (counts[i] > 0) g2_err[i] = g2[i] / std::sqrt(c);
    }
}

CorrelationHistogram g2_histogram(const EventStream& stream_a, const EventStream& stream_b,
                                  double bin_width, double tau_max) {
    require_usable(stream_a, channel_name(stream_a.channel));
    require_usable(stream_b, channel_name(stream_b.channel));
    if (!(bin_width > 0.0))
        throw std::invalid_argument("g2_histogram: bin_width must be positive");
    if (!(tau_max >= 10.0 * bin_width))
        throw std::invalid_argument("g2_histogram: tau_max must be at least 10 bin widths");

    CorrelationHistogram hist;
    hist.bin_width_ps = std::llround(bin_width * 1e12);
    if (hist.bin_width_ps <= 0)
        throw std::invalid_argument("g2_histogram: bin_width below 1 ps resolution");
    hist.k_max = std::llround(tau_max / bin_width);
    hist.counts.assign(static_cast<std::size_t>(2 * hist.k_max + 1), 0);
    hist.n_a = stream_a.size();
    hist.n_b = stream_b.size();
    hist.duration = std::max(stream_a.span_s(), stream_b.span_s());

    const std::int64_t bw = hist.bin_width_ps;
    const std::int64_t half = bw / 2;
    // Largest |tau| that still lands in a bin: center k_max plus half a bin.
    const std::int64_t win = hist.k_max * bw + half;
    const auto& ta = stream_a.times_ps;
    const auto& tb = stream_b.times_ps;
    std::uint64_t* counts = hist.counts.data();
    const std::int64_t k_max = hist.k_max;

    std::size_t lo = 0;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        const auto t_a = static_cast<std::int64_t>(ta[i]);
        while (lo < tb.size() && static_cast<std::int64_t>(tb[lo]) < t_a - win) ++lo;
        for (std::size_t j = lo; j < tb.size(); ++j) {
            const std::int64_t tau = static_cast<std::int64_t>(tb[j]) - t_a;
            if (tau > win) break;
            // Round-half-away-from-zero in integers: odd-symmetric in tau, so
            // stream exchange mirrors the histogram exactly.
            const std::int64_t k =
                tau >= 0 ? (tau + half) / bw : -((-tau + half) / bw);
            if (k >= -k_max && k <= k_max) ++counts[static_cast<std::size_t>(k + k_max)];
        }
    }

    hist.normalize();
    return hist;
}

CorrelationHistogram merge_histograms(const std::vector<CorrelationHistogram>& parts) {
    if (parts.empty()) throw std::invalid_argument("merge_histograms: no inputs");
    CorrelationHistogram merged = parts.front();

    std::string mismatched;
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const CorrelationHistogram& p = parts[i];
        if (p.bin_width_ps != merged.bin_width_ps || p.k_max != merged.k_max) {
            mismatched += (mismatched.empty() ? "" : ", ") + std::to_string(i);
        }
    }
    if (!mismatched.empty())
        throw std::invalid_argument("merge_histograms: binning mismatch at input index " +
                                    mismatched);

    for (std::size_t i = 1; i < parts.size(); ++i) {
        const CorrelationHistogram& p = parts[i];
        for (std::size_t b = 0; b < merged.counts.size(); ++b) merged.counts[b] += p.counts[b];
        merged.n_a += p.n_a;
        merged.n_b += p.n_b;
        merged.duration += p.duration;
    }
    merged.normalize();
    return merged;
}

}  // namespace chbt
