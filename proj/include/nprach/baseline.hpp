#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nprach/detection.hpp"
#include "nprach/frontend.hpp"
#include "nprach/preamble_config.hpp"

namespace nprach {

/// Differential-correlation NPRACH detector.
///
/// Per pattern, the SG averages z[m] are combined into one differential
/// product per signed hop distance d, g_d = sum z*[m] z[m+1] (with the
/// estimated inter-SG CFO rotation removed). The g_d are placed at bin
/// d mod fft_size and inverse-transformed; the peak bin q* over admissible
/// delays gives ToA = q* / (fft_size * delta_f). The detection statistic is
/// the peak magnitude over a noise-power estimate taken from the intra-SG
/// residual after CFO de-rotation, so gamma is dimensionless. CFO comes
/// from the phase of adjacent-symbol correlations inside each SG.
struct BaselineConfig {
    int fft_size = 256;
    double gamma = 1.0;
    double target_fa = 1e-3;
    double toa_max = -1.0;  // [s]; negative selects the CP duration

    void validate(const PreambleConfig& config) const;
    /// Highest IDFT bin searched: delays in [0, toa_max + CP].
    int max_search_bin(const PreambleConfig& config) const;
};

struct BaselinePatternResult {
    double statistic = 0.0;
    int peak_bin = 0;
    double noise_power = 0.0;
    double toa_hat = 0.0;
    double cfo_hat = 0.0;
};

BaselinePatternResult baseline_pattern(const ResourceGrid& grid, const HoppingPattern& pattern, const PreambleConfig& config,
                                       const BaselineConfig& bcfg);

DetectionReport baseline_detect(const ResourceGrid& grid, std::span<const HoppingPattern> patterns, const PreambleConfig& config,
                                 const BaselineConfig& bcfg);

/// Per-pattern detection statistics of noise-only drops, `trials` grids.
std::vector<double> noise_only_statistics(const PreambleConfig& config, const BaselineConfig& bcfg, std::uint64_t seed, int trials,
                                          double noise_var = 1.0, int workers = 0);

/// Empirical (1 - target_fa) quantile: the sorted sample at index
/// n - floor(target_fa * n), so that floor(target_fa * n) samples are >= it.
double upper_quantile(std::vector<double> samples, double target_fa);

/// Empirical (1 - target_fa) quantile of the noise-only per-pattern
/// statistic. Requires trials >= 1e4 and at least 10 expected exceedances.
double calibrate_threshold(const PreambleConfig& config, const BaselineConfig& bcfg, std::uint64_t seed, int trials,
                           double noise_var = 1.0, int workers = 0);

}  // namespace nprach
