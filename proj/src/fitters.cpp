#include "chbt/fitters.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace chbt {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

bool has_se(const PhasePoint& p) { return std::isfinite(p.se_phi) && p.se_phi > 0.0; }

// In-place iterative radix-2 FFT; n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -kTwoPi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

struct Sym3 {
    // Symmetric 3x3 in packed form.
    double aa = 0, ab = 0, af = 0, bb = 0, bf = 0, ff = 0;
};

// Solves M * x = rhs for symmetric positive definite M; returns false when
// the Cholesky factorization breaks down.
bool solve_spd3(const Sym3& m, const double rhs[3], double x[3]) {
    const double l00 = std::sqrt(m.aa);
    if (!(l00 > 0.0) || !std::isfinite(l00)) return false;
    const double l10 = m.ab / l00;
    const double l20 = m.af / l00;
    const double d11 = m.bb - l10 * l10;
    if (!(d11 > 0.0)) return false;
    const double l11 = std::sqrt(d11);
    const double l21 = (m.bf - l20 * l10) / l11;
    const double d22 = m.ff - l20 * l20 - l21 * l21;
    if (!(d22 > 0.0)) return false;
    const double l22 = std::sqrt(d22);

    double y0 = rhs[0] / l00;
    double y1 = (rhs[1] - l10 * y0) / l11;
    double y2 = (rhs[2] - l20 * y0 - l21 * y1) / l22;
    x[2] = y2 / l22;
    x[1] = (y1 - l21 * x[2]) / l11;
    x[0] = (y0 - l10 * x[1] - l20 * x[2]) / l00;
    return true;
}

// Inverse of a symmetric positive definite 3x3 via the adjugate; returns
// false on a numerically singular matrix.
bool invert_spd3(const Sym3& m, double inv[3][3]) {
    const double det = m.aa * (m.bb * m.ff - m.bf * m.bf) -
                       m.ab * (m.ab * m.ff - m.bf * m.af) +
                       m.af * (m.ab * m.bf - m.bb * m.af);
    if (!(std::abs(det) > 0.0) || !std::isfinite(det)) return false;
    inv[0][0] = (m.bb * m.ff - m.bf * m.bf) / det;
    inv[0][1] = (m.af * m.bf - m.ab * m.ff) / det;
    inv[0][2] = (m.ab * m.bf - m.af * m.bb) / det;
    inv[1][1] = (m.aa * m.ff - m.af * m.af) / det;
    inv[1][2] = (m.ab * m.af - m.aa * m.bf) / det;
    inv[2][2] = (m.aa * m.bb - m.ab * m.ab) / det;
    inv[1][0] = inv[0][1];
    inv[2][0] = inv[0][2];
    inv[2][1] = inv[1][2];
    return true;
}

struct UsableBins {
    std::vector<double> tau;
    std::vector<double> value;
    std::vector<double> sigma;
};

UsableBins usable_bins(const CorrelationHistogram& hist) {
    UsableBins u;
    const bool counted = !hist.counts.empty();
    for (std::size_t i = 0; i < hist.n_bins(); ++i) {
        if (counted && hist.counts[i] == 0) continue;
        if (!std::isfinite(hist.g2_err[i]) || hist.g2_err[i] <= 0.0) continue;
        u.tau.push_back(hist.tau_center(i));
        u.value.push_back(hist.g2[i]);
        u.sigma.push_back(hist.g2_err[i]);
    }
    return u;
}

}  // namespace

double wrap_phase(double phi) {
    double y = std::fmod(phi + std::numbers::pi, kTwoPi);
    if (y <= 0.0) y += kTwoPi;
    return y - std::numbers::pi;
}

double estimate_beat_frequency(const CorrelationHistogram& hist) {
    const std::size_t n = hist.n_bins();
    double mean = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (hist.counts[i] == 0) continue;
        mean += hist.g2[i];
        ++used;
    }
    if (used < 16) throw std::runtime_error("estimate_beat_frequency: too few usable bins");
    mean /= static_cast<double>(used);

    std::size_t n_pad = 1;
    while (n_pad < 2 * n) n_pad <<= 1;
    std::vector<std::complex<double>> buf(n_pad, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        if (hist.counts[i] > 0) buf[i] = hist.g2[i] - mean;
    fft_radix2(buf);

    // Skip frequencies with fewer than ~2 cycles across the histogram span;
    // slow baseline wander otherwise masquerades as a peak.
    const std::size_t k_min =
        std::max<std::size_t>(1, (2 * n_pad + n - 1) / n);
    std::vector<double> power;
    power.reserve(n_pad / 2);
    for (std::size_t k = 1; k < n_pad / 2; ++k) power.push_back(std::norm(buf[k]));

    std::size_t best_k = 0;
    double best_power = 0.0;
    for (std::size_t k = k_min; k < n_pad / 2; ++k) {
        const double p = std::norm(buf[k]);
        if (p > best_power) {
            best_power = p;
            best_k = k;
        }
    }

    std::vector<double> sorted = power;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    if (best_k == 0 || !(best_power > 0.0) || best_power < 5.0 * median)
        throw std::runtime_error("estimate_beat_frequency: no oscillation detected");

    const double df = 1.0 / (static_cast<double>(n_pad) * hist.bin_width());
    double k_refined = static_cast<double>(best_k);
    if (best_k + 1 < n_pad / 2 && best_k >= 1) {
        const double pm = std::norm(buf[best_k - 1]);
        const double p0 = best_power;
        const double pp = std::norm(buf[best_k + 1]);
        const double denom = pm - 2.0 * p0 + pp;
        if (denom < 0.0) k_refined += 0.5 * (pm - pp) / denom;
    }
    return k_refined * df;
}

namespace {

// Damped Gauss-Newton on (A, B, f) for model 1 + A cos(2 pi f tau) + B sin(..).
// Converged means the proposed or accepted relative step fell below tol.
struct QuadratureFitState {
    double a = 0.0, b = 0.0, f = 0.0;
    double cost = 0.0;
    bool converged = false;
};

QuadratureFitState run_damped_gauss_newton(const std::vector<double>& tau,
                                           const std::vector<double>& value,
                                           const std::vector<double>& sigma, double a0, double b0,
                                           double f0, double tol, int max_iterations) {
    const std::size_t n = tau.size();
    std::vector<double> c(n), s(n);
    const auto fill_trig = [&](double f) {
        for (std::size_t i = 0; i < n; ++i) {
            const double arg = kTwoPi * f * tau[i];
            c[i] = std::cos(arg);
            s[i] = std::sin(arg);
        }
    };
    const auto cost_at = [&](double a, double b, double f) {
        double cost = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double arg = kTwoPi * f * tau[i];
            const double model = 1.0 + a * std::cos(arg) + b * std::sin(arg);
            const double r = (value[i] - model) / sigma[i];
            cost += r * r;
        }
        return cost;
    };

    QuadratureFitState st;
    st.a = a0;
    st.b = b0;
    st.f = f0;

    // Exact linear solve for the quadrature pair at the start frequency.
    fill_trig(st.f);
    {
        double scc = 0, css = 0, ccs = 0, rc = 0, rs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = 1.0 / (sigma[i] * sigma[i]);
            const double d = value[i] - 1.0;
            scc += w * c[i] * c[i];
            css += w * s[i] * s[i];
            ccs += w * c[i] * s[i];
            rc += w * d * c[i];
            rs += w * d * s[i];
        }
        const double det = scc * css - ccs * ccs;
        if (std::abs(det) > 0.0) {
            st.a = (rc * css - rs * ccs) / det;
            st.b = (rs * scc - rc * ccs) / det;
        }
    }
    st.cost = cost_at(st.a, st.b, st.f);

    double damping = 1e-3;
    for (int iter = 0; iter < max_iterations && !st.converged; ++iter) {
        fill_trig(st.f);
        Sym3 jtj;
        double rhs[3] = {0, 0, 0};
        for (std::size_t i = 0; i < n; ++i) {
            const double w = 1.0 / sigma[i];
            const double model = 1.0 + st.a * c[i] + st.b * s[i];
            const double r = (value[i] - model) * w;
            // Jacobian of the residual wrt (A, B, f).
            const double ja = -c[i] * w;
            const double jb = -s[i] * w;
            const double jf = kTwoPi * tau[i] * (st.a * s[i] - st.b * c[i]) * w;
            jtj.aa += ja * ja;
            jtj.ab += ja * jb;
            jtj.af += ja * jf;
            jtj.bb += jb * jb;
            jtj.bf += jb * jf;
            jtj.ff += jf * jf;
            rhs[0] -= ja * r;
            rhs[1] -= jb * r;
            rhs[2] -= jf * r;
        }

        const double amp_scale = std::max({std::abs(st.a), std::abs(st.b), 1e-12});
        const auto rel_step = [&](const double step[3]) {
            return std::max({std::abs(step[0]) / amp_scale, std::abs(step[1]) / amp_scale,
                             std::abs(step[2]) / std::max(std::abs(st.f), 1e-300)});
        };

        bool accepted = false;
        for (int attempt = 0; attempt < 16 && !accepted; ++attempt) {
            Sym3 damped = jtj;
            damped.aa += damping * jtj.aa;
            damped.bb += damping * jtj.bb;
            damped.ff += damping * jtj.ff;
            if (damped.ff == 0.0) damped.ff = 1.0;  // zero-amplitude state: pin f
            double step[3];
            if (!solve_spd3(damped, rhs, step)) {
                damping *= 10.0;
                continue;
            }
            const double rel = rel_step(step);
            // A vanishing proposed step means the gradient is gone: optimum
            // reached even if the trial point cannot lower the cost further.
            if (attempt == 0 && rel < tol) {
                st.converged = true;
                break;
            }
            const double trial = cost_at(st.a + step[0], st.b + step[1], st.f + step[2]);
            // Cost changes at the rounding floor of the objective mean the
            // remaining step is below what double precision can resolve.
            if (rel < 1e-4 && std::abs(trial - st.cost) <=
                                  16.0 * std::numeric_limits<double>::epsilon() * st.cost) {
                if (trial <= st.cost) {
                    st.a += step[0];
                    st.b += step[1];
                    st.f += step[2];
                    st.cost = trial;
                }
                st.converged = true;
                break;
            }
            if (trial <= st.cost) {
                st.a += step[0];
                st.b += step[1];
                st.f += step[2];
                st.cost = trial;
                damping = std::max(damping * 0.1, 1e-12);
                accepted = true;
                if (rel < tol) st.converged = true;
            } else {
                damping *= 10.0;
            }
        }
        if (!accepted) break;  // damping exhausted; report last iterate
    }
    return st;
}

}  // namespace

G2Fit fit_g2(const CorrelationHistogram& hist, double f_init, const G2FitOptions& options) {
    const UsableBins bins = usable_bins(hist);
    const std::size_t n = bins.tau.size();
    if (n < 6) throw std::invalid_argument("fit_g2: fewer than 6 usable bins");
    if (!(f_init > 0.0)) throw std::invalid_argument("fit_g2: f_init must be positive");

    // Weighting. For counted histograms the per-bin error is derived from the
    // EXPECTED Poisson variance, sqrt(scale * model): weighting by the
    // observed counts ties the weights to the noise and biases the amplitude
    // badly in the few-counts-per-bin regime. First pass runs at the baseline
    // expectation (model = 1), second pass reweights with the fitted model.
    //
    // A histogram is treated as counted Poisson data when its error column
    // satisfies g2_err = g2/sqrt(counts); the count-to-g2 scale then follows
    // from the normalization fields, or from g2/counts of any populated bin
    // when those fields did not survive (the CSV round trip drops them).
    // Anything else (synthetic data, externally assigned errors) is fitted
    // with the g2_err column as Gaussian sigmas.
    double norm_scale = 0.0;
    bool poisson_weights = !hist.counts.empty();
    if (poisson_weights) {
        for (std::size_t i = 0; i < hist.n_bins() && poisson_weights; ++i) {
            if (hist.counts[i] == 0 || !(hist.g2[i] > 0.0)) continue;
            const double expected = hist.g2[i] / std::sqrt(static_cast<double>(hist.counts[i]));
            if (!(std::abs(hist.g2_err[i] - expected) <= 1e-6 * expected)) poisson_weights = false;
        }
    }
    if (poisson_weights) {
        const double denom = static_cast<double>(hist.n_a) * static_cast<double>(hist.n_b) *
                             hist.bin_width();
        if (hist.duration > 0.0 && denom > 0.0) {
            norm_scale = hist.duration / denom;
        } else {
            for (std::size_t i = 0; i < hist.n_bins(); ++i) {
                if (hist.counts[i] == 0 || !(hist.g2[i] > 0.0)) continue;
                norm_scale = hist.g2[i] / static_cast<double>(hist.counts[i]);
                break;
            }
        }
        if (!(norm_scale > 0.0)) poisson_weights = false;
    }

    std::vector<double> sigma(n);
    if (poisson_weights) {
        std::fill(sigma.begin(), sigma.end(), std::sqrt(norm_scale));
    } else {
        sigma = bins.sigma;
    }

    QuadratureFitState st = run_damped_gauss_newton(bins.tau, bins.value, sigma, 0.0, 0.0, f_init,
                                                    options.tolerance, options.max_iterations);
    if (poisson_weights) {
        for (std::size_t i = 0; i < n; ++i) {
            const double arg = kTwoPi * st.f * bins.tau[i];
            const double model = 1.0 + st.a * std::cos(arg) + st.b * std::sin(arg);
            sigma[i] = std::sqrt(norm_scale * std::max(model, 0.05));
        }
        st = run_damped_gauss_newton(bins.tau, bins.value, sigma, st.a, st.b, st.f,
                                     options.tolerance, options.max_iterations);
    }

    double pa = st.a, pb = st.b, pf = st.f;
    // Fold onto the f > 0 branch: (A, B, f) and (A, -B, -f) are the same model.
    if (pf < 0.0) {
        pf = -pf;
        pb = -pb;
    }

    G2Fit fit;
    fit.converged = st.converged;
    fit.n_bins_used = n;
    fit.f_beat = pf;
    const double rho = std::hypot(pa, pb);
    fit.epsilon = 2.0 * rho;
    fit.phi_c = wrap_phase(std::atan2(-pb, pa));
    fit.chi2_dof = n > 3 ? st.cost / static_cast<double>(n - 3) : 0.0;

    // Covariance of (A, B, f) from the curvature at the optimum, then the
    // delta method for (eps, f, phi).
    Sym3 jtj;
    for (std::size_t i = 0; i < n; ++i) {
        const double arg = kTwoPi * pf * bins.tau[i];
        const double ci = std::cos(arg);
        const double si = std::sin(arg);
        const double w = 1.0 / sigma[i];
        const double ja = -ci * w;
        const double jb = -si * w;
        const double jf = kTwoPi * bins.tau[i] * (pa * si - pb * ci) * w;
        jtj.aa += ja * ja;
        jtj.ab += ja * jb;
        jtj.af += ja * jf;
        jtj.bb += jb * jb;
        jtj.bf += jb * jf;
        jtj.ff += jf * jf;
    }
    double cov[3][3];
    if (invert_spd3(jtj, cov)) {
        fit.se_f = std::sqrt(std::max(cov[2][2], 0.0));
        if (rho > 0.0) {
            const double ea = 2.0 * pa / rho;
            const double eb = 2.0 * pb / rho;
            fit.se_epsilon = std::sqrt(std::max(
                ea * ea * cov[0][0] + 2.0 * ea * eb * cov[0][1] + eb * eb * cov[1][1], 0.0));
            const double fa = pb / (rho * rho);
            const double fb = -pa / (rho * rho);
            fit.se_phi = std::sqrt(std::max(
                fa * fa * cov[0][0] + 2.0 * fa * fb * cov[0][1] + fb * fb * cov[1][1], 0.0));
        } else {
            fit.se_epsilon = 2.0 * std::sqrt(std::max(cov[0][0], cov[1][1]));
            fit.se_phi = std::numeric_limits<double>::infinity();
        }
    } else {
        fit.se_epsilon = fit.se_f = fit.se_phi = std::numeric_limits<double>::infinity();
    }

    if (options.beat_sign_negative) fit.phi_c = wrap_phase(-fit.phi_c);
    fit.epsilon_physical = fit.epsilon <= 1.0 + 3.0 * fit.se_epsilon;
    return fit;
}

std::vector<PhasePoint> unwrap_phases(std::vector<PhasePoint> points) {
    // Tracks the cumulative 2*pi correction instead of re-accumulating sums,
    // so inputs that are already smooth come back bit-identical.
    double offset = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        if (points[i].x < points[i - 1].x)
            throw std::invalid_argument("unwrap_phases: points must be sorted by x");
        const double step = points[i].phi + offset - points[i - 1].phi;
        const double wraps = std::ceil((step - std::numbers::pi) / kTwoPi);
        offset -= wraps * kTwoPi;
        points[i].phi += offset;
    }
    return points;
}

SlopeFit fit_slope(const std::vector<PhasePoint>& points, bool weighted) {
    if (points.size() < 3) throw std::invalid_argument("fit_slope: need >= 3 points");
    const bool all_same_x = std::all_of(points.begin(), points.end(), [&](const PhasePoint& p) {
        return p.x == points.front().x;
    });
    if (all_same_x)
        throw std::invalid_argument("fit_slope: degenerate design, all x identical");

    const bool use_weights =
        weighted && std::all_of(points.begin(), points.end(), has_se);

    double sw = 0, swx = 0, swy = 0;
    for (const PhasePoint& p : points) {
        const double w = use_weights ? 1.0 / (p.se_phi * p.se_phi) : 1.0;
        sw += w;
        swx += w * p.x;
        swy += w * p.phi;
    }
    const double xbar = swx / sw;
    const double ybar = swy / sw;

    double sxx = 0, sxy = 0, syy = 0;
    for (const PhasePoint& p : points) {
        const double w = use_weights ? 1.0 / (p.se_phi * p.se_phi) : 1.0;
        const double dx = p.x - xbar;
        const double dy = p.phi - ybar;
        sxx += w * dx * dx;
        sxy += w * dx * dy;
        syy += w * dy * dy;
    }
    if (!(sxx > 0.0))
        throw std::invalid_argument("fit_slope: degenerate design, all x identical");

    SlopeFit fit;
    fit.points = points;
    fit.m = sxy / sxx;
    fit.intercept = ybar - fit.m * xbar;

    double ss_res = 0.0;
    for (const PhasePoint& p : points) {
        const double w = use_weights ? 1.0 / (p.se_phi * p.se_phi) : 1.0;
        const double r = p.phi - (fit.m * p.x + fit.intercept);
        ss_res += w * r * r;
    }
    fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;

    if (use_weights) {
        fit.se_m = std::sqrt(1.0 / sxx);
    } else {
        const auto dof = static_cast<double>(points.size() - 2);
        fit.se_m = std::sqrt(std::max(ss_res / dof, 0.0) / sxx);
    }
    return fit;
}

SlopeStats aggregate_slopes(const std::vector<double>& slopes) {
    if (slopes.size() < 2)
        throw std::invalid_argument("aggregate_slopes: need >= 2 slopes for sigma_m");
    SlopeStats stats;
    for (double m : slopes) stats.m_bar += m;
    stats.m_bar /= static_cast<double>(slopes.size());
    double ss = 0.0;
    for (double m : slopes) ss += (m - stats.m_bar) * (m - stats.m_bar);
    stats.sigma_m = std::sqrt(ss / static_cast<double>(slopes.size() - 1));
    return stats;
}

}  // namespace chbt
