#include "nprach/frontend.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstdint>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>

#include "nprach/binary_io.hpp"

namespace nprach {
namespace {

// Per-thread FFTW plan with its own aligned buffers. Planning is not
// thread-safe in FFTW, so plan creation is serialized.
class DftPlan {
public:
    explicit DftPlan(int n) : n_(n) {
        in_ = fftw_alloc_complex(static_cast<std::size_t>(n));
        out_ = fftw_alloc_complex(static_cast<std::size_t>(n));
        static std::mutex planner_mutex;
        std::lock_guard lock(planner_mutex);
        plan_ = fftw_plan_dft_1d(n, in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
    }
    ~DftPlan() {
        fftw_destroy_plan(plan_);
        fftw_free(in_);
        fftw_free(out_);
    }
    DftPlan(const DftPlan&) = delete;
    DftPlan& operator=(const DftPlan&) = delete;

    int size() const { return n_; }
    cplx* in() { return reinterpret_cast<cplx*>(in_); }
    const cplx* out() const { return reinterpret_cast<const cplx*>(out_); }
    void execute() { fftw_execute(plan_); }

private:
    int n_;
    fftw_complex* in_ = nullptr;
    fftw_complex* out_ = nullptr;
    fftw_plan plan_ = nullptr;
};

DftPlan& plan_for(int n) {
    thread_local std::unique_ptr<DftPlan> plan;
    if (!plan || plan->size() != n) plan = std::make_unique<DftPlan>(n);
    return *plan;
}

}  // namespace

ResourceGrid demodulate_grid(std::span<const cplx> stream, const PreambleConfig& config) {
    if (static_cast<int>(stream.size()) != config.total_samples()) {
        throw std::invalid_argument("demodulate_grid: stream length " + std::to_string(stream.size()) + " != " +
                                    std::to_string(config.total_samples()));
    }
    const int n = config.n_fft;
    const auto timing = derive_timing(config);
    ResourceGrid grid{ComplexMatrix(n, config.num_symbols())};
    DftPlan& dft = plan_for(n);
    const double scale = 1.0 / n;
    for (int col = 0; col < config.num_symbols(); ++col) {
        const int start = timing.window_start[static_cast<std::size_t>(col)];
        for (int t = 0; t < n; ++t) dft.in()[t] = stream[static_cast<std::size_t>(start + t)];
        dft.execute();
        for (int f = 0; f < n; ++f) {
            // Shift the window-local DFT to the absolute sample clock.
            const long phase_idx = (static_cast<long>(f) * start) % n;
            const cplx rot = std::polar(scale, -2.0 * std::numbers::pi * static_cast<double>(phase_idx) / n);
            grid.y(f, col) = dft.out()[f] * rot;
        }
    }
    return grid;
}

ComplexMatrix sg_average(const ResourceGrid& grid, const PreambleConfig& config) {
    const int sym = PreambleConfig::kSymbolsPerSg;
    if (grid.y.cols != config.num_symbols()) throw std::invalid_argument("sg_average: grid column count mismatch");
    ComplexMatrix out(grid.y.rows, config.num_sg());
    for (int f = 0; f < grid.y.rows; ++f) {
        for (int m = 0; m < config.num_sg(); ++m) {
            cplx acc{};
            for (int i = 0; i < sym; ++i) acc += grid.y(f, sym * m + i);
            out(f, m) = acc / static_cast<double>(sym);
        }
    }
    return out;
}

FeatureTensor preprocess_grid(const ResourceGrid& grid, std::span<const HoppingPattern> patterns, const PreambleConfig& config) {
    if (grid.y.rows != config.n_fft) throw std::invalid_argument("preprocess_grid: grid row count mismatch");
    const auto avg = sg_average(grid, config);
    const int s = config.num_sg();
    FeatureTensor out(config.n_sc, s);
    for (const auto& p : patterns) {
        double power = 0.0;
        for (int m = 0; m < s; ++m) power += std::norm(avg(config.sc_offset + p.sc_index[static_cast<std::size_t>(m)], m));
        power = std::max(power / s, kPowerFloor);
        const double inv_rms = 1.0 / std::sqrt(power);
        const auto log_power = static_cast<float>(std::log(power));
        for (int m = 0; m < s; ++m) {
            const int sc = p.sc_index[static_cast<std::size_t>(m)];
            const cplx v = avg(config.sc_offset + sc, m) * inv_rms;
            out.at(sc, m, 0) = static_cast<float>(v.real());
            out.at(sc, m, 1) = static_cast<float>(v.imag());
            out.at(sc, m, 2) = log_power;
        }
    }
    return out;
}

namespace {
constexpr std::uint32_t kGridVersion = 1;
}

void write_grid(std::ostream& os, const ResourceGrid& grid) {
    io::write_magic(os, "NPRG");
    io::write_pod(os, kGridVersion);
    io::write_pod(os, static_cast<std::uint32_t>(grid.y.rows));
    io::write_pod(os, static_cast<std::uint32_t>(grid.y.cols));
    io::write_complex64(os, grid.y.data);
}

ResourceGrid read_grid(std::istream& is) {
    io::expect_magic(is, "NPRG");
    if (io::read_pod<std::uint32_t>(is, "version") != kGridVersion) throw io::FormatError("unsupported grid version");
    const auto rows = io::read_pod<std::uint32_t>(is, "rows");
    const auto cols = io::read_pod<std::uint32_t>(is, "cols");
    if (rows == 0 || cols == 0 || rows > 65536 || cols > 65536) throw io::FormatError("implausible grid shape");
    ResourceGrid g{ComplexMatrix(static_cast<int>(rows), static_cast<int>(cols))};
    io::read_complex64(is, g.y.data);
    return g;
}

}  // namespace nprach
