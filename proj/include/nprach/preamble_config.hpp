#pragma once

#include <cstdint>
#include <vector>

namespace nprach {

/// Static NPRACH format-0 numerology.
///
/// A preamble is `num_sg()` symbol groups. Each symbol group is one cyclic
/// prefix of `cp_len()` samples followed by five identical single-tone OFDM
/// symbols of `n_fft` samples. The simulation runs at the natural rate
/// W = n_fft * delta_f.
struct PreambleConfig {
    double delta_f = 3750.0;  // subcarrier spacing [Hz]
    int n_fft = 128;          // subcarriers in the processed band
    int n_sc = 48;            // NPRACH subcarriers
    int sc_offset = 0;        // first NPRACH subcarrier within the band
    int n_reps = 1;
    int max_users = 48;       // K
    double carrier_freq = 3.4e9;
    double ppm_reference_hz = 50e6;  // frequency that CFO ppm values are relative to

    static constexpr int kSymbolsPerSg = 5;

    int cp_len() const { return n_fft / 4; }
    int num_sg() const { return 4 * n_reps; }
    int sg_len() const { return cp_len() + kSymbolsPerSg * n_fft; }
    int num_symbols() const { return kSymbolsPerSg * num_sg(); }
    int total_samples() const { return num_sg() * sg_len(); }
    double sample_rate() const { return n_fft * delta_f; }
    double cp_duration() const { return cp_len() / sample_rate(); }

    /// Normalized CFO (cycles per sample) corresponding to `ppm`.
    double ppm_to_cfo_norm(double ppm) const { return ppm * 1e-6 * ppm_reference_hz / sample_rate(); }
    double cfo_norm_to_ppm(double cfo_norm) const { return cfo_norm * sample_rate() / (1e-6 * ppm_reference_hz); }

    /// Throws std::invalid_argument describing the first violated constraint.
    void validate() const;
};

/// DFT window placement of every (symbol group, symbol) pair. The shared
/// CP is skipped once per symbol group.
struct TimingTable {
    int n_fft = 0;
    int total_samples = 0;
    std::vector<int> window_start;  // indexed by 5*m + i

    int start(int sg, int symbol) const { return window_start[static_cast<std::size_t>(PreambleConfig::kSymbolsPerSg * sg + symbol)]; }
};

TimingTable derive_timing(const PreambleConfig& config);

struct HoppingPattern {
    int pattern_id = 0;
    std::vector<int> sc_index;  // phi[m], relative to sc_offset
};

/// Hop rule within a repetition, starting from n0 = pattern_id:
///   n1 = n0 +/- 1 (parity swap), n2 = n1 +/- 6 (block swap inside 12-blocks),
///   n3 = n2 +/- 1 (parity swap).
/// Bands narrower than 12 subcarriers use a block half-width of n_sc/2.
HoppingPattern build_hopping_pattern(int pattern_id, const PreambleConfig& config);

std::vector<HoppingPattern> build_all_patterns(const PreambleConfig& config);

/// Half-width of the block-swap hop for the given band size.
int block_hop_distance(int n_sc);

}  // namespace nprach
