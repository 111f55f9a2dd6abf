#include "nprach/detection.hpp"

namespace nprach {

std::vector<UserTruth> make_truth(const ScenarioSample& scenario, std::span<const HoppingPattern> patterns,
                                  const PreambleConfig& config) {
    std::vector<UserTruth> out;
    out.reserve(scenario.users.size());
    for (const auto& u : scenario.users) {
        UserTruth t;
        t.active = u.active;
        t.toa = toa_of(u);
        t.cfo_norm = u.cfo_norm;
        t.snr = snr_of(u, patterns[static_cast<std::size_t>(u.pattern_id)], scenario.noise_var, config);
        out.push_back(t);
    }
    return out;
}

Drop simulate_drop(std::uint64_t seed, const PreambleConfig& config, const DropParams& params,
                   std::span<const HoppingPattern> patterns) {
    Drop d;
    d.scenario = sample_scenario(seed, config, params);
    Rng noise_rng(mix_seed(seed, 0x6E6F697365ULL));
    const auto rx = synthesize_received(d.scenario, patterns, config, noise_rng);
    d.grid = demodulate_grid(rx, config);
    d.truth = make_truth(d.scenario, patterns, config);
    return d;
}

void apply_threshold(DetectionReport& report, double threshold) {
    for (auto& e : report.entries) e.detected = e.score >= threshold;
}

}  // namespace nprach
