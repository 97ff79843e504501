#include "chbt/stream_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace chbt {

namespace {

constexpr char kStreamMagic[4] = {'C', 'H', 'B', 'T'};
constexpr char kHistMagic[4] = {'C', 'H', 'B', 'H'};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    put_u64(out, bits);
}

class Reader {
public:
    Reader(const std::string& data, const std::filesystem::path& path)
        : data_(data), path_(path) {}

    std::uint16_t u16() {
        need(2);
        const auto b0 = static_cast<std::uint8_t>(data_[pos_]);
        const auto b1 = static_cast<std::uint8_t>(data_[pos_ + 1]);
        pos_ += 2;
        return static_cast<std::uint16_t>(b0 | (b1 << 8));
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        return v;
    }

    void magic(const char expected[4], const char* kind) {
        need(4);
        if (std::memcmp(data_.data() + pos_, expected, 4) != 0)
            throw std::runtime_error(path_.string() + ": not a " + kind + " file (bad magic)");
        pos_ += 4;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            throw std::runtime_error(path_.string() + ": truncated file");
    }

    const std::string& data_;
    std::filesystem::path path_;
    std::size_t pos_ = 0;
};

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void check_version(std::uint16_t found, std::uint16_t expected, const std::filesystem::path& path) {
    if (found != expected)
        throw std::runtime_error(path.string() + ": schema version mismatch, expected v" +
                                 std::to_string(expected) + ", found v" + std::to_string(found));
}

std::string fmt(const char* format, double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_stream(const EventStream& stream, const std::filesystem::path& path) {
    std::string out;
    out.reserve(15 + 8 * stream.size());
    out.append(kStreamMagic, 4);
    put_u16(out, kStreamFormatVersion);
    out.push_back(static_cast<char>(stream.channel));
    put_u64(out, stream.size());
    for (std::uint64_t t : stream.times_ps) put_u64(out, t);
    write_file_atomic(path, out);
}

EventStream load_stream(const std::filesystem::path& path) {
    const std::string data = slurp(path);
    Reader r(data, path);
    r.magic(kStreamMagic, "chbt stream");
    check_version(r.u16(), kStreamFormatVersion, path);
    EventStream stream;
    const std::uint8_t channel = r.u8();
    if (channel > 1)
        throw std::runtime_error(path.string() + ": unknown channel id " + std::to_string(channel));
    stream.channel = static_cast<Channel>(channel);
    const std::uint64_t count = r.u64();
    stream.times_ps.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) stream.times_ps[i] = r.u64();
    return stream;
}

void save_stream_csv(const EventStream& stream, const std::filesystem::path& path) {
    std::string out;
    out.reserve(16 * stream.size());
    for (std::uint64_t t : stream.times_ps) {
        out += fmt("%.12g", static_cast<double>(t) * 1e-12);
        out += '\n';
    }
    write_file_atomic(path, out);
}

void save_histogram_csv(const CorrelationHistogram& hist, const std::filesystem::path& path) {
    std::string out = "tau_s,counts,g2,g2_err\n";
    for (std::size_t i = 0; i < hist.n_bins(); ++i) {
        out += fmt("%.12g", hist.tau_center(i));
        out += ',';
        out += std::to_string(hist.counts[i]);
        out += ',';
        out += fmt("%.12g", hist.g2[i]);
        out += ',';
        out += std::isnan(hist.g2_err[i]) ? "nan" : fmt("%.12g", hist.g2_err[i]);
        out += '\n';
    }
    write_file_atomic(path, out);
}

CorrelationHistogram load_histogram_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("tau_s", 0) != 0)
        throw std::runtime_error(path.string() + ": missing tau_s,counts,g2,g2_err header");

    std::vector<double> tau;
    CorrelationHistogram hist;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        double vals[4];
        for (int i = 0; i < 4; ++i) {
            if (!std::getline(row, field, i < 3 ? ',' : '\n'))
                throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
            vals[i] = field == "nan" ? std::numeric_limits<double>::quiet_NaN()
                                     : std::stod(field);
        }
        tau.push_back(vals[0]);
        hist.counts.push_back(static_cast<std::uint64_t>(vals[1]));
        hist.g2.push_back(vals[2]);
        hist.g2_err.push_back(vals[3]);
    }
    if (tau.size() < 2) throw std::runtime_error(path.string() + ": too few histogram rows");
    const double bin_width = (tau.back() - tau.front()) / static_cast<double>(tau.size() - 1);
    if (!(bin_width > 0.0))
        throw std::runtime_error(path.string() + ": tau column is not increasing");
    hist.bin_width_ps = std::llround(bin_width * 1e12);
    hist.k_max = std::llround(-tau.front() / bin_width);
    return hist;
}

void save_histogram(const CorrelationHistogram& hist, const std::filesystem::path& path) {
    std::string out;
    out.reserve(64 + 8 * hist.n_bins());
    out.append(kHistMagic, 4);
    put_u16(out, kHistogramFormatVersion);
    put_u64(out, static_cast<std::uint64_t>(hist.bin_width_ps));
    put_u64(out, static_cast<std::uint64_t>(hist.k_max));
    put_u64(out, hist.n_a);
    put_u64(out, hist.n_b);
    put_f64(out, hist.duration);
    for (std::uint64_t c : hist.counts) put_u64(out, c);
    write_file_atomic(path, out);
}

CorrelationHistogram load_histogram(const std::filesystem::path& path) {
    const std::string data = slurp(path);
    Reader r(data, path);
    r.magic(kHistMagic, "chbt histogram");
    check_version(r.u16(), kHistogramFormatVersion, path);
    CorrelationHistogram hist;
    hist.bin_width_ps = static_cast<std::int64_t>(r.u64());
    hist.k_max = static_cast<std::int64_t>(r.u64());
    hist.n_a = r.u64();
    hist.n_b = r.u64();
    hist.duration = r.f64();
    const auto n_bins = static_cast<std::size_t>(2 * hist.k_max + 1);
    hist.counts.resize(n_bins);
    for (std::size_t i = 0; i < n_bins; ++i) hist.counts[i] = r.u64();
    hist.normalize();
    return hist;
}

}  // namespace chbt
