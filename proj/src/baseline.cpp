#include "nprach/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>
#include <string>

#include "nprach/channel.hpp"
#include "nprach/parallel.hpp"
#include "nprach/random.hpp"

namespace nprach {
namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

void BaselineConfig::validate(const PreambleConfig& config) const {
    const int max_hop = std::max(1, block_hop_distance(config.n_sc));
    if (fft_size < 2 * max_hop + 1) throw std::invalid_argument("baseline fft_size must be >= 2 * max hop distance + 1");
    if (!(gamma > 0.0)) throw std::invalid_argument("baseline gamma must be positive");
    if (!(target_fa > 0.0 && target_fa < 1.0)) throw std::invalid_argument("baseline target_fa must lie in (0, 1)");
}

int BaselineConfig::max_search_bin(const PreambleConfig& config) const {
    const double span = (toa_max < 0.0 ? config.cp_duration() : toa_max) + config.cp_duration();
    return std::min(fft_size - 1, static_cast<int>(std::ceil(fft_size * config.delta_f * span)));
}

BaselinePatternResult baseline_pattern(const ResourceGrid& grid, const HoppingPattern& pattern, const PreambleConfig& config,
                                       const BaselineConfig& bcfg) {
    constexpr int kSym = PreambleConfig::kSymbolsPerSg;
    const int s = config.num_sg();
    const int n = config.n_fft;
    auto re = [&](int m, int i) { return grid.y(config.sc_offset + pattern.sc_index[static_cast<std::size_t>(m)], kSym * m + i); };

    BaselinePatternResult r;

    // CFO from the phase advance between adjacent symbols of one SG.
    cplx corr{};
    for (int m = 0; m < s; ++m) {
        for (int i = 0; i + 1 < kSym; ++i) corr += std::conj(re(m, i)) * re(m, i + 1);
    }
    r.cfo_hat = std::arg(corr) / (kTwoPi * n);

    // De-rotated SG means and the residual around them.
    std::vector<cplx> z(static_cast<std::size_t>(s));
    double residual = 0.0;
    for (int m = 0; m < s; ++m) {
        cplx vals[kSym];
        cplx mean{};
        for (int i = 0; i < kSym; ++i) {
            vals[i] = re(m, i) * std::polar(1.0, -kTwoPi * r.cfo_hat * n * i);
            mean += vals[i];
        }
        mean /= static_cast<double>(kSym);
        for (int i = 0; i < kSym; ++i) residual += std::norm(vals[i] - mean);
        z[static_cast<std::size_t>(m)] = mean;
    }
    r.noise_power = std::max(residual / (s * (kSym - 1)), kPowerFloor);

    // Differential products per signed hop distance, CFO ramp across SGs removed.
    const cplx ramp = std::polar(1.0, -kTwoPi * r.cfo_hat * config.sg_len());
    std::map<int, cplx> products;
    for (int m = 0; m + 1 < s; ++m) {
        const int d = pattern.sc_index[static_cast<std::size_t>(m + 1)] - pattern.sc_index[static_cast<std::size_t>(m)];
        products[d] += std::conj(z[static_cast<std::size_t>(m)]) * z[static_cast<std::size_t>(m + 1)] * ramp;
    }

    // Inverse DFT of the sparse spectrum, evaluated over the admissible bins only.
    const int f = bcfg.fft_size;
    thread_local std::vector<cplx> twiddle;
    if (static_cast<int>(twiddle.size()) != f) {
        twiddle.resize(static_cast<std::size_t>(f));
        for (int i = 0; i < f; ++i) twiddle[static_cast<std::size_t>(i)] = std::polar(1.0, kTwoPi * i / f);
    }
    double best = -1.0;
    for (int q = 0; q <= bcfg.max_search_bin(config); ++q) {
        cplx acc{};
        for (const auto& [d, g] : products) {
            const long bin = ((d % f) + f) % f;
            acc += g * twiddle[static_cast<std::size_t>((bin * q) % f)];
        }
        const double mag = std::abs(acc);
        if (mag > best) {
            best = mag;
            r.peak_bin = q;
        }
    }
    r.statistic = best / r.noise_power;
    r.toa_hat = r.peak_bin / (f * config.delta_f);
    return r;
}

DetectionReport baseline_detect(const ResourceGrid& grid, std::span<const HoppingPattern> patterns, const PreambleConfig& config,
                                 const BaselineConfig& bcfg) {
    DetectionReport report;
    report.entries.reserve(patterns.size());
    for (const auto& p : patterns) {
        const auto r = baseline_pattern(grid, p, config, bcfg);
        report.entries.push_back(PatternDetection{p.pattern_id, r.statistic, r.toa_hat, r.cfo_hat, r.statistic >= bcfg.gamma});
    }
    return report;
}

std::vector<double> noise_only_statistics(const PreambleConfig& config, const BaselineConfig& bcfg, std::uint64_t seed, int trials,
                                          double noise_var, int workers) {
    config.validate();
    const auto all = build_all_patterns(config);
    const std::span<const HoppingPattern> patterns(all.data(), static_cast<std::size_t>(config.max_users));
    const std::size_t k = patterns.size();
    std::vector<double> stats(static_cast<std::size_t>(trials) * k);
    ScenarioSample empty;
    empty.noise_var = noise_var;
    parallel_for(static_cast<std::size_t>(trials), workers > 0 ? workers : default_workers(), [&](std::size_t t) {
        Rng rng(mix_seed(seed, t));
        const auto rx = synthesize_received(empty, patterns, config, rng);
        const auto grid = demodulate_grid(rx, config);
        for (std::size_t j = 0; j < k; ++j) stats[t * k + j] = baseline_pattern(grid, patterns[j], config, bcfg).statistic;
    });
    return stats;
}

double upper_quantile(std::vector<double> samples, double target_fa) {
    if (samples.empty()) throw std::invalid_argument("upper_quantile: no samples");
    std::sort(samples.begin(), samples.end());
    const std::size_t n = samples.size();
    const auto exceed = static_cast<std::size_t>(std::floor(target_fa * static_cast<double>(n)));
    return samples[std::min(n - 1, n - exceed)];
}

double calibrate_threshold(const PreambleConfig& config, const BaselineConfig& bcfg, std::uint64_t seed, int trials, double noise_var,
                           int workers) {
    bcfg.validate(config);
    if (trials < 10000) throw std::invalid_argument("calibrate_threshold: need >= 1e4 trials, got " + std::to_string(trials));
    const double expected = bcfg.target_fa * trials * config.max_users;
    if (expected < 10.0) {
        throw std::invalid_argument("calibrate_threshold: too few trials for target_fa " + std::to_string(bcfg.target_fa));
    }
    return upper_quantile(noise_only_statistics(config, bcfg, seed, trials, noise_var, workers), bcfg.target_fa);
}

}  // namespace nprach
