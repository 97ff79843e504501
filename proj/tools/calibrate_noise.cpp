// Sweeps the drifting-phase amplitude and reports the resulting spread of the
// fitted baseline slopes, so the default phi_n_sigma can be pinned to a
// target sigma_m. Runs the full pipeline (no file output) for each candidate.
//
//   calibrate_noise [reps] [tau_s] [sigma...]

#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <vector>

#include "chbt/config.hpp"
#include "chbt/pipeline.hpp"

int main(int argc, char** argv) {
    int reps = 16;
    double tau = 40.0;
    std::vector<double> sigmas = {2.8, 3.2, 3.6, 4.0, 4.4};
    if (argc > 1) reps = std::atoi(argv[1]);
    if (argc > 2) tau = std::atof(argv[2]);
    if (argc > 3) {
        sigmas.clear();
        for (int i = 3; i < argc; ++i) sigmas.push_back(std::atof(argv[i]));
    }

    chbt::RunOptions options;
    options.write_outputs = false;
    options.jobs = 2;

    std::printf("reps=%d tau=%.1f s, target sigma_m = 4.6 rad/m\n", reps, tau);
    for (double sigma : sigmas) {
        chbt::ExperimentConfig cfg = chbt::default_config();
        cfg.noise.phi_n_sigma = sigma;
        cfg.noise.phi_n_tau = tau;

        double sum = 0.0, sum_sq = 0.0;
        double m_sum = 0.0;
        for (int rep = 0; rep < reps; ++rep) {
            cfg.seed = 77000 + static_cast<std::uint64_t>(1000.0 * sigma) +
                       static_cast<std::uint64_t>(rep);
            cfg.noise.seed = cfg.seed;
            const chbt::PipelineResult result = chbt::run_pipeline(cfg, options);
            sum += result.estimate.sigma_m;
            sum_sq += result.estimate.sigma_m * result.estimate.sigma_m;
            m_sum += result.estimate.m_bar;
        }
        const double n = reps;
        const double mean = sum / n;
        const double se = std::sqrt(std::max(sum_sq / n - mean * mean, 0.0) / n);
        std::printf("  phi_n_sigma=%.2f rad -> sigma_m = %.3f +- %.3f rad/m (m_bar %.3f)\n",
                    sigma, mean, se, m_sum / n);
    }
    return 0;
}
