#pragma once

#include <span>
#include <vector>

#include "nprach/channel.hpp"
#include "nprach/frontend.hpp"
#include "nprach/preamble_config.hpp"

namespace nprach {

/// Per-pattern detector output. `score` is a probability for the neural
/// detector and the normalized peak statistic for the baseline; in both
/// cases `detected` is `score >= threshold`.
struct PatternDetection {
    int pattern_id = 0;
    double score = 0.0;
    double toa_hat = 0.0;  // [s]
    double cfo_hat = 0.0;  // cycles per sample
    bool detected = false;
};

struct DetectionReport {
    std::vector<PatternDetection> entries;
};

/// Ground truth of one pattern in one drop.
struct UserTruth {
    bool active = false;
    double toa = 0.0;       // earliest arrival [s]
    double cfo_norm = 0.0;  // cycles per sample
    double snr = 0.0;       // linear, averaged over the user's tones
};

std::vector<UserTruth> make_truth(const ScenarioSample& scenario, std::span<const HoppingPattern> patterns,
                                  const PreambleConfig& config);

/// Re-applies a threshold to every entry.
void apply_threshold(DetectionReport& report, double threshold);

/// One simulated drop as seen by the receiver, with its ground truth.
struct Drop {
    ScenarioSample scenario;
    ResourceGrid grid;
    std::vector<UserTruth> truth;
};

/// Samples a scenario from `seed`, synthesizes it with noise from a derived
/// stream, and demodulates the grid.
Drop simulate_drop(std::uint64_t seed, const PreambleConfig& config, const DropParams& params,
                   std::span<const HoppingPattern> patterns);

}  // namespace nprach
