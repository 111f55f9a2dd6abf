#include "nprach/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nprach/binary_io.hpp"

namespace nprach {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

// exp(j 2 pi (k n / N + f n)) with the integer part of k n / N removed first.
cplx tone(int k, double f, long n, int n_fft) {
    const long kn = (static_cast<long>(k) * n) % n_fft;
    const double cycles = static_cast<double>(kn) / n_fft + std::fmod(f * static_cast<double>(n), 1.0);
    return std::polar(1.0, kTwoPi * cycles);
}

// exp(j 2 pi r / n) for r in [0, n), cached per thread.
const std::vector<cplx>& roots_of_unity(int n) {
    thread_local std::vector<cplx> table;
    if (static_cast<int>(table.size()) != n) {
        table.resize(static_cast<std::size_t>(n));
        for (int r = 0; r < n; ++r) table[static_cast<std::size_t>(r)] = std::polar(1.0, kTwoPi * r / n);
    }
    return table;
}

// exp(j 2 pi f n) for n in [0, count), re-anchored every 64 samples.
std::vector<cplx> phase_ramp(double f, long count) {
    constexpr long kBlock = 64;
    std::vector<cplx> step(static_cast<std::size_t>(kBlock));
    const cplx unit = std::polar(1.0, kTwoPi * f);
    step[0] = 1.0;
    for (long i = 1; i < kBlock; ++i) step[static_cast<std::size_t>(i)] = step[static_cast<std::size_t>(i - 1)] * unit;
    std::vector<cplx> out(static_cast<std::size_t>(count));
    for (long b = 0; b < count; b += kBlock) {
        const cplx anchor = std::polar(1.0, kTwoPi * std::fmod(f * static_cast<double>(b), 1.0));
        for (long i = 0; i < kBlock && b + i < count; ++i) out[static_cast<std::size_t>(b + i)] = anchor * step[static_cast<std::size_t>(i)];
    }
    return out;
}

int tone_index(const HoppingPattern& pattern, int sg, const PreambleConfig& config) {
    return config.sc_offset + pattern.sc_index[static_cast<std::size_t>(sg)];
}

void check_pattern(const HoppingPattern& pattern, const PreambleConfig& config) {
    if (static_cast<int>(pattern.sc_index.size()) != config.num_sg()) {
        throw std::invalid_argument("hopping pattern length does not match the SG count");
    }
}

}  // namespace

double ChannelTaps::energy() const {
    double e = 0.0;
    for (const auto& h : taps) e += std::norm(h);
    return e;
}

ScenarioSample sample_scenario(std::uint64_t seed, const PreambleConfig& config, const DropParams& params) {
    config.validate();
    if (!(params.p_active >= 0.0 && params.p_active <= 1.0)) throw std::invalid_argument("p_active must lie in [0, 1]");
    if (!(params.snr_min_db <= params.snr_max_db)) throw std::invalid_argument("empty SNR interval");
    if (!(params.noise_var > 0.0)) throw std::invalid_argument("noise_var must be positive");
    if (params.cfo_max_ppm < 0.0) throw std::invalid_argument("cfo_max_ppm must be non-negative");
    if (std::abs(config.ppm_to_cfo_norm(params.cfo_max_ppm)) >= 0.5) {
        throw std::invalid_argument("cfo_max_ppm maps to |f_off| >= 0.5 cycles/sample");
    }
    if (params.profile.num_rays < 1) throw std::invalid_argument("channel profile needs at least one ray");
    if (!(params.profile.delay_spread >= 0.0)) throw std::invalid_argument("delay_spread must be non-negative");

    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));

    const double toa_max = params.resolved_toa_max(config);
    const double ds = params.profile.delay_spread;

    ScenarioSample s;
    s.seed = seed;
    s.noise_var = params.noise_var;
    s.users.resize(static_cast<std::size_t>(config.max_users));
    for (int k = 0; k < config.max_users; ++k) {
        UserState& u = s.users[static_cast<std::size_t>(k)];
        u.pattern_id = k;
        u.active = unit(rng) < params.p_active;
        const double snr_db = params.snr_min_db + (params.snr_max_db - params.snr_min_db) * unit(rng);
        u.power = params.noise_var * std::pow(10.0, snr_db / 10.0);
        u.toa = toa_max * unit(rng);
        u.cfo_norm = config.ppm_to_cfo_norm(params.cfo_max_ppm * (2.0 * unit(rng) - 1.0));

        // Exponential power-delay profile; the first ray defines the ToA.
        std::vector<double> delays(static_cast<std::size_t>(params.profile.num_rays), 0.0);
        for (std::size_t p = 1; p < delays.size(); ++p) delays[p] = -ds * std::log(1.0 - unit(rng));
        std::sort(delays.begin(), delays.end());
        std::vector<double> pdp(delays.size());
        double total = 0.0;
        for (std::size_t p = 0; p < delays.size(); ++p) {
            pdp[p] = ds > 0.0 ? std::exp(-delays[p] / ds) : 1.0;
            total += pdp[p];
        }
        u.rays.resize(delays.size());
        for (std::size_t p = 0; p < delays.size(); ++p) {
            const double amp = std::sqrt(pdp[p] / total);
            const double re = gauss(rng);
            const double im = gauss(rng);
            u.rays[p] = Ray{amp * cplx{re, im}, delays[p]};
        }
    }
    return s;
}

double toa_of(const UserState& user) {
    if (user.rays.empty()) throw std::invalid_argument("toa_of: user has no rays");
    double first = user.rays.front().delay;
    for (const auto& r : user.rays) first = std::min(first, r.delay);
    return user.toa + first;
}

namespace {

ChannelTaps taps_with_margin(const UserState& user, const PreambleConfig& config, int margin) {
    const double w = config.sample_rate();
    double lo = user.rays.front().delay, hi = lo;
    for (const auto& r : user.rays) {
        lo = std::min(lo, r.delay);
        hi = std::max(hi, r.delay);
    }
    ChannelTaps t;
    t.l_min = static_cast<int>(std::floor(w * (user.toa + lo))) - margin;
    t.l_max = static_cast<int>(std::ceil(w * (user.toa + hi))) + margin;
    t.taps.assign(static_cast<std::size_t>(t.l_max - t.l_min + 1), cplx{});
    for (const auto& r : user.rays) {
        // sin(pi (l - x)) = (-1)^(l+1) sin(pi x), so one sine serves every lag.
        const double x = w * (r.delay + user.toa);
        const double sx = std::sin(std::numbers::pi * x);
        for (int l = t.l_min; l <= t.l_max; ++l) {
            const double arg = l - x;
            double v;
            if (std::abs(arg) < 1e-9) {
                v = sinc(arg);
            } else {
                v = ((l & 1) ? sx : -sx) / (std::numbers::pi * arg);
            }
            t.taps[static_cast<std::size_t>(l - t.l_min)] += r.gain * v;
        }
    }
    return t;
}

}  // namespace

ChannelTaps compute_taps(const UserState& user, const PreambleConfig& config, int margin) {
    if (user.rays.empty()) throw std::invalid_argument("compute_taps: user has no rays");
    if (margin >= 0) return taps_with_margin(user, config, margin);
    const double target = kTapEnergyCapture * untruncated_tap_energy(user, config);
    ChannelTaps t = taps_with_margin(user, config, kLagMargin);
    for (int m = 2 * kLagMargin; t.energy() < target && m <= 4096; m *= 2) t = taps_with_margin(user, config, m);
    return t;
}

double untruncated_tap_energy(const UserState& user, const PreambleConfig& config) {
    const double w = config.sample_rate();
    double e = 0.0;
    for (const auto& a : user.rays) {
        for (const auto& b : user.rays) e += (a.gain * std::conj(b.gain)).real() * sinc(w * (a.delay - b.delay));
    }
    return e;
}

cplx freq_response(const UserState& user, double f_norm, const PreambleConfig& config) {
    const double w = config.sample_rate();
    cplx h{};
    for (const auto& r : user.rays) h += r.gain * std::polar(1.0, -kTwoPi * (r.delay + user.toa) * w * f_norm);
    return h;
}

double snr_of(const UserState& user, const HoppingPattern& pattern, double noise_var, const PreambleConfig& config) {
    if (!(noise_var > 0.0)) throw std::invalid_argument("snr_of: noise_var must be positive");
    check_pattern(pattern, config);
    double acc = 0.0;
    for (int m = 0; m < config.num_sg(); ++m) {
        const double f = static_cast<double>(tone_index(pattern, m, config)) / config.n_fft;
        acc += std::norm(freq_response(user, f, config));
    }
    return user.power / noise_var * acc / config.num_sg();
}

std::vector<cplx> generate_user_waveform(const UserState& user, const HoppingPattern& pattern, const PreambleConfig& config) {
    check_pattern(pattern, config);
    const int sg_len = config.sg_len();
    const double amp = std::sqrt(user.power);
    std::vector<cplx> s(static_cast<std::size_t>(config.total_samples()));
    for (int m = 0; m < config.num_sg(); ++m) {
        const int k = tone_index(pattern, m, config);
        for (int n = m * sg_len; n < (m + 1) * sg_len; ++n) s[static_cast<std::size_t>(n)] = amp * tone(k, 0.0, n, config.n_fft);
    }
    return s;
}

std::vector<cplx> user_received_direct(const UserState& user, const HoppingPattern& pattern, const PreambleConfig& config) {
    const auto s = generate_user_waveform(user, pattern, config);
    const auto taps = compute_taps(user, config);
    const long total = static_cast<long>(s.size());
    std::vector<cplx> u(s.size());
    for (long n = 0; n < total; ++n) u[static_cast<std::size_t>(n)] = s[static_cast<std::size_t>(n)] * tone(0, user.cfo_norm, n, config.n_fft);
    std::vector<cplx> y(s.size());
    for (long n = 0; n < total; ++n) {
        cplx acc{};
        for (int l = taps.l_min; l <= taps.l_max; ++l) {
            const long src = n - l;
            if (src >= 0 && src < total) acc += taps.at(l) * u[static_cast<std::size_t>(src)];
        }
        y[static_cast<std::size_t>(n)] = acc;
    }
    return y;
}

std::vector<cplx> user_received(const UserState& user, const HoppingPattern& pattern, const PreambleConfig& config) {
    check_pattern(pattern, config);
    const auto taps = compute_taps(user, config);
    const long total = config.total_samples();
    const long sg_len = config.sg_len();
    const int num_sg = config.num_sg();
    const double amp = std::sqrt(user.power);
    const int n_fft = config.n_fft;
    const long n_taps = taps.l_max - taps.l_min + 1;

    const std::vector<cplx>& unit_roots = roots_of_unity(n_fft);
    std::vector<cplx> roots(unit_roots.size());
    for (std::size_t r = 0; r < roots.size(); ++r) roots[r] = amp * unit_roots[r];
    const std::vector<cplx> ramp = phase_ramp(user.cfo_norm, total);
    std::vector<long> tone_of(static_cast<std::size_t>(num_sg));
    for (int m = 0; m < num_sg; ++m) tone_of[static_cast<std::size_t>(m)] = tone_index(pattern, m, config);
    // Symbol group m's tone continued to any sample index n.
    auto cont = [&](int m, long n) { return roots[static_cast<std::size_t>((tone_of[static_cast<std::size_t>(m)] * n) % n_fft)] * ramp[static_cast<std::size_t>(n)]; };

    // Within one symbol group the input is a single exponential, so
    // u[n - l] = u_m(n) exp(-j 2 pi nu_m l). Prefix sums of
    // h_l exp(-j 2 pi nu_m l) give the contribution of any lag range in O(1).
    std::vector<std::vector<cplx>> prefix(static_cast<std::size_t>(num_sg), std::vector<cplx>(static_cast<std::size_t>(n_taps + 1)));
    for (int m = 0; m < num_sg; ++m) {
        const double nu = static_cast<double>(tone_of[static_cast<std::size_t>(m)]) / n_fft + user.cfo_norm;
        auto& pre = prefix[static_cast<std::size_t>(m)];
        const cplx step = std::polar(1.0, -kTwoPi * nu);
        cplx rot = std::polar(1.0, -kTwoPi * std::fmod(nu * taps.l_min, 1.0));
        for (long i = 0; i < n_taps; ++i) {
            pre[static_cast<std::size_t>(i + 1)] = pre[static_cast<std::size_t>(i)] + taps.taps[static_cast<std::size_t>(i)] * rot;
            rot *= step;
        }
    }

    std::vector<cplx> y(static_cast<std::size_t>(total));
    auto boundary = [&](long n) {
        // Symbol groups reached by lags in [l_min, l_max].
        const long first = std::max<long>(0, n - taps.l_max >= 0 ? (n - taps.l_max) / sg_len : 0);
        const long last = std::min<long>(num_sg - 1, n - taps.l_min < 0 ? -1 : (n - taps.l_min) / sg_len);
        cplx acc{};
        for (long m = first; m <= last; ++m) {
            const long lo = std::max<long>(taps.l_min, n - (m + 1) * sg_len + 1);
            const long hi = std::min<long>(taps.l_max, n - m * sg_len);
            if (lo > hi) continue;
            const auto& pre = prefix[static_cast<std::size_t>(m)];
            acc += cont(static_cast<int>(m), n) * (pre[static_cast<std::size_t>(hi - taps.l_min + 1)] - pre[static_cast<std::size_t>(lo - taps.l_min)]);
        }
        return acc;
    };
    for (int m = 0; m < num_sg; ++m) {
        const long sg_start = m * sg_len;
        const long sg_end = sg_start + sg_len;
        const long fast_lo = std::clamp(sg_start + taps.l_max, sg_start, sg_end);
        const long fast_hi = std::clamp(sg_end + taps.l_min, fast_lo, sg_end);  // exclusive
        for (long n = sg_start; n < fast_lo; ++n) y[static_cast<std::size_t>(n)] = boundary(n);
        const cplx gain = prefix[static_cast<std::size_t>(m)][static_cast<std::size_t>(n_taps)];
        const long k = tone_of[static_cast<std::size_t>(m)];
        long r = (k * fast_lo) % n_fft;
        for (long n = fast_lo; n < fast_hi; ++n) {
            y[static_cast<std::size_t>(n)] = gain * roots[static_cast<std::size_t>(r)] * ramp[static_cast<std::size_t>(n)];
            r += k;
            if (r >= n_fft) r -= n_fft;
        }
        for (long n = fast_hi; n < sg_end; ++n) y[static_cast<std::size_t>(n)] = boundary(n);
    }
    return y;
}

std::vector<cplx> synthesize_received(const ScenarioSample& scenario, std::span<const HoppingPattern> patterns,
                                      const PreambleConfig& config, Rng& rng) {
    std::vector<cplx> y(static_cast<std::size_t>(config.total_samples()));
    for (const auto& user : scenario.users) {
        if (!user.active) continue;
        if (user.pattern_id < 0 || static_cast<std::size_t>(user.pattern_id) >= patterns.size()) {
            throw std::out_of_range("user pattern_id has no hopping pattern");
        }
        const auto part = user_received(user, patterns[static_cast<std::size_t>(user.pattern_id)], config);
        for (std::size_t n = 0; n < y.size(); ++n) y[n] += part[n];
    }
    if (scenario.noise_var > 0.0) {
        std::normal_distribution<double> gauss(0.0, std::sqrt(config.n_fft * scenario.noise_var / 2.0));
        for (auto& v : y) {
            const double re = gauss(rng);
            const double im = gauss(rng);
            v += cplx{re, im};
        }
    }
    return y;
}

namespace {
constexpr std::uint32_t kScenarioVersion = 1;
}

void write_scenario_dump(std::ostream& os, const ScenarioSample& scenario, const PreambleConfig& config,
                         std::span<const cplx> samples) {
    io::write_magic(os, "NPSC");
    io::write_pod(os, kScenarioVersion);
    io::write_pod(os, static_cast<std::uint32_t>(scenario.users.size()));
    io::write_pod(os, static_cast<std::uint32_t>(config.num_sg()));
    io::write_pod(os, static_cast<std::uint32_t>(config.n_fft));
    io::write_pod(os, static_cast<std::uint64_t>(scenario.seed));
    io::write_pod(os, scenario.noise_var);
    for (const auto& u : scenario.users) {
        io::write_pod(os, static_cast<std::uint8_t>(u.active ? 1 : 0));
        io::write_pod(os, static_cast<std::uint32_t>(u.pattern_id));
        io::write_pod(os, u.power);
        io::write_pod(os, u.toa);
        io::write_pod(os, u.cfo_norm);
        io::write_pod(os, static_cast<std::uint32_t>(u.rays.size()));
        for (const auto& r : u.rays) {
            io::write_pod(os, r.gain.real());
            io::write_pod(os, r.gain.imag());
            io::write_pod(os, r.delay);
        }
    }
    io::write_pod(os, static_cast<std::uint64_t>(samples.size()));
    io::write_complex64(os, samples);
}

ScenarioDump read_scenario_dump(std::istream& is) {
    io::expect_magic(is, "NPSC");
    if (io::read_pod<std::uint32_t>(is, "version") != kScenarioVersion) throw io::FormatError("unsupported scenario dump version");
    ScenarioDump d;
    d.num_users = static_cast<int>(io::read_pod<std::uint32_t>(is, "K"));
    d.num_sg = static_cast<int>(io::read_pod<std::uint32_t>(is, "S"));
    d.n_fft = static_cast<int>(io::read_pod<std::uint32_t>(is, "N"));
    d.scenario.seed = io::read_pod<std::uint64_t>(is, "seed");
    d.scenario.noise_var = io::read_pod<double>(is, "noise_var");
    d.scenario.users.resize(static_cast<std::size_t>(d.num_users));
    for (auto& u : d.scenario.users) {
        u.active = io::read_pod<std::uint8_t>(is, "active") != 0;
        u.pattern_id = static_cast<int>(io::read_pod<std::uint32_t>(is, "pattern_id"));
        u.power = io::read_pod<double>(is, "power");
        u.toa = io::read_pod<double>(is, "toa");
        u.cfo_norm = io::read_pod<double>(is, "cfo");
        const auto n_rays = io::read_pod<std::uint32_t>(is, "ray count");
        if (n_rays > 4096) throw io::FormatError("implausible ray count");
        u.rays.resize(n_rays);
        for (auto& r : u.rays) {
            const double re = io::read_pod<double>(is, "ray gain");
            const double im = io::read_pod<double>(is, "ray gain");
            r.gain = {re, im};
            r.delay = io::read_pod<double>(is, "ray delay");
        }
    }
    const auto n = io::read_pod<std::uint64_t>(is, "sample count");
    if (n > (1ULL << 28)) throw io::FormatError("implausible sample count");
    d.samples.resize(n);
    io::read_complex64(is, d.samples);
    return d;
}

}  // namespace nprach
