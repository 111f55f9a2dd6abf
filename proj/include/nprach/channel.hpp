#pragma once

#include <complex>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "nprach/preamble_config.hpp"
#include "nprach/random.hpp"

namespace nprach {

using cplx = std::complex<double>;

struct Ray {
    cplx gain;
    double delay = 0.0;  // [s]
};

/// One (potential) transmitter. Fields are drawn for inactive users too so
/// that the random stream does not depend on activity.
struct UserState {
    bool active = false;
    double power = 0.0;     // beta_k, linear; amplitude is sqrt(beta_k)
    double toa = 0.0;       // offset added to every ray delay [s]
    double cfo_norm = 0.0;  // cycles per sample at the simulation rate
    std::vector<Ray> rays;
    int pattern_id = 0;
};

struct ScenarioSample {
    std::vector<UserState> users;  // users[k].pattern_id == k
    double noise_var = 1.0;        // per-RE variance after the 1/N DFT
    std::uint64_t seed = 0;
};

/// Sampled band-limited channel h_l for l in [l_min, l_max].
struct ChannelTaps {
    int l_min = 0;
    int l_max = -1;
    std::vector<cplx> taps;

    cplx at(int lag) const {
        return (lag < l_min || lag > l_max) ? cplx{} : taps[static_cast<std::size_t>(lag - l_min)];
    }
    double energy() const;
};

struct ChannelProfile {
    double delay_spread = 100e-9;  // scale of the exponential power-delay profile [s]
    int num_rays = 8;
};

/// Parameters of one random drop.
struct DropParams {
    double p_active = 0.5;
    double cfo_max_ppm = 10.0;
    double toa_max = -1.0;  // [s]; negative selects the CP duration
    double snr_min_db = -10.0;
    double snr_max_db = 20.0;
    double noise_var = 1.0;
    ChannelProfile profile;

    double resolved_toa_max(const PreambleConfig& config) const { return toa_max < 0.0 ? config.cp_duration() : toa_max; }
};

/// Sinc tails beyond this many lags on either side of the ray span are
/// dropped; a single ray at a half-sample delay keeps > 99% of its energy.
inline constexpr int kLagMargin = 24;
/// With the automatic margin the window starts at kLagMargin and doubles
/// until the taps hold this fraction of the untruncated energy. Rays that
/// partly cancel can push a fixed window below it.
inline constexpr double kTapEnergyCapture = 0.995;
inline constexpr int kAutoMargin = -1;

ScenarioSample sample_scenario(std::uint64_t seed, const PreambleConfig& config, const DropParams& params);

/// Earliest arrival: toa + min_p tau_p.
double toa_of(const UserState& user);

ChannelTaps compute_taps(const UserState& user, const PreambleConfig& config, int margin = kAutoMargin);

/// Energy of the untruncated tap sequence, sum_p sum_q a_p a_q^* sinc(W (tau_p - tau_q)).
double untruncated_tap_energy(const UserState& user, const PreambleConfig& config);

/// H(f) = sum_p a_p exp(-j 2 pi (tau_p + toa) W f), f in cycles per sample.
cplx freq_response(const UserState& user, double f_norm, const PreambleConfig& config);

/// Average per-RE SNR over the user's hopping tones.
double snr_of(const UserState& user, const HoppingPattern& pattern, double noise_var, const PreambleConfig& config);

/// sqrt(beta) exp(j 2 pi k n / N) on the absolute sample clock n, with the
/// tone k = sc_offset + phi[m] held for the whole symbol group m.
std::vector<cplx> generate_user_waveform(const UserState& user, const HoppingPattern& pattern, const PreambleConfig& config);

/// Noiseless contribution of one user: sum_l h_l s[n-l] exp(j 2 pi f_off (n-l)).
std::vector<cplx> user_received(const UserState& user, const HoppingPattern& pattern, const PreambleConfig& config);

/// Same as user_received, by plain convolution over every lag. Reference path for tests.
std::vector<cplx> user_received_direct(const UserState& user, const HoppingPattern& pattern, const PreambleConfig& config);

/// Sum of active users plus complex AWGN of time-domain variance N * noise_var drawn from `rng`.
std::vector<cplx> synthesize_received(const ScenarioSample& scenario, std::span<const HoppingPattern> patterns,
                                      const PreambleConfig& config, Rng& rng);

/// Binary scenario dump: "NPSC", u32 version, u32 K, u32 S, u32 N, u64 seed,
/// f64 noise_var, per-user records, u64 sample count, complex64 samples.
void write_scenario_dump(std::ostream& os, const ScenarioSample& scenario, const PreambleConfig& config,
                         std::span<const cplx> samples);

struct ScenarioDump {
    int num_users = 0;
    int num_sg = 0;
    int n_fft = 0;
    ScenarioSample scenario;
    std::vector<cplx> samples;
};

ScenarioDump read_scenario_dump(std::istream& is);

}  // namespace nprach
