#include "nprach/preamble_config.hpp"

#include <stdexcept>
#include <string>

namespace nprach {

void PreambleConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid preamble config: " + what); };
    if (!(delta_f > 0.0)) fail("delta_f must be positive");
    if (n_fft < 8 || n_fft % 4 != 0) fail("n_fft must be a multiple of 4 and >= 8");
    if (n_sc < 1 || n_sc > 48) fail("n_sc must lie in [1, 48]");
    if (sc_offset < 0) fail("sc_offset must be non-negative");
    if (sc_offset + n_sc > n_fft) fail("sc_offset + n_sc exceeds n_fft");
    // Every NPRACH tone must sit inside the (-W/2, W/2) passband of the
    // sinc pulse, otherwise H(phi/N) is evaluated at an aliased frequency.
    if (2 * (sc_offset + n_sc) > n_fft) fail("NPRACH band must lie below n_fft/2 (passband)");
    if (max_users < 1 || max_users > n_sc) fail("max_users must lie in [1, n_sc]");
    if (n_reps < 1) fail("n_reps must be >= 1");
    if (!(carrier_freq > 0.0)) fail("carrier_freq must be positive");
    if (!(ppm_reference_hz > 0.0)) fail("ppm_reference_hz must be positive");
}

TimingTable derive_timing(const PreambleConfig& config) {
    TimingTable table;
    table.n_fft = config.n_fft;
    table.total_samples = config.total_samples();
    table.window_start.reserve(static_cast<std::size_t>(config.num_symbols()));
    for (int m = 0; m < config.num_sg(); ++m) {
        for (int i = 0; i < PreambleConfig::kSymbolsPerSg; ++i) {
            table.window_start.push_back(m * config.sg_len() + config.cp_len() + i * config.n_fft);
        }
    }
    return table;
}

int block_hop_distance(int n_sc) { return n_sc >= 12 ? 6 : n_sc / 2; }

HoppingPattern build_hopping_pattern(int pattern_id, const PreambleConfig& config) {
    if (pattern_id < 0 || pattern_id >= config.n_sc) {
        throw std::out_of_range("pattern_id " + std::to_string(pattern_id) + " outside [0, " +
                                std::to_string(config.n_sc) + ")");
    }
    if (config.n_reps != 1) {
        throw std::invalid_argument("unsupported configuration: hopping is only defined for n_reps = 1");
    }
    const int half = block_hop_distance(config.n_sc);
    if (config.n_sc % 2 != 0 || half < 1 || config.n_sc % (2 * half) != 0) {
        throw std::invalid_argument("unsupported configuration: n_sc = " + std::to_string(config.n_sc) +
                                    " admits no orthogonal 1/" + std::to_string(half) + "/1 hopping");
    }

    auto parity_swap = [](int n) { return n % 2 == 0 ? n + 1 : n - 1; };
    auto block_swap = [half](int n) { return n % (2 * half) < half ? n + half : n - half; };

    HoppingPattern p;
    p.pattern_id = pattern_id;
    const int n0 = pattern_id;
    const int n1 = parity_swap(n0);
    const int n2 = block_swap(n1);
    const int n3 = parity_swap(n2);
    p.sc_index = {n0, n1, n2, n3};
    return p;
}

std::vector<HoppingPattern> build_all_patterns(const PreambleConfig& config) {
    std::vector<HoppingPattern> out;
    out.reserve(static_cast<std::size_t>(config.n_sc));
    for (int k = 0; k < config.n_sc; ++k) out.push_back(build_hopping_pattern(k, config));
    return out;
}

}  // namespace nprach
