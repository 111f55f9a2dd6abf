#pragma once

#include <complex>
#include <iosfwd>
#include <span>
#include <vector>

#include "nprach/preamble_config.hpp"

namespace nprach {

using cplx = std::complex<double>;

/// Dense row-major complex matrix.
struct ComplexMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<cplx> data;

    ComplexMatrix() = default;
    ComplexMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c)) {}

    cplx& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
    const cplx& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)]; }
};

/// Post-DFT grid: N subcarriers x 5S symbols.
struct ResourceGrid {
    ComplexMatrix y;
};

/// Preprocessed detector input: n_sc x S x {re, im, log-power}, row-major.
struct FeatureTensor {
    int n_sc = 0;
    int num_sg = 0;
    std::vector<float> x;

    static constexpr int kChannels = 3;

    FeatureTensor() = default;
    FeatureTensor(int sc, int sg) : n_sc(sc), num_sg(sg), x(static_cast<std::size_t>(sc * sg * kChannels), 0.0f) {}

    float& at(int sc, int sg, int ch) { return x[static_cast<std::size_t>((sc * num_sg + sg) * kChannels + ch)]; }
    float at(int sc, int sg, int ch) const { return x[static_cast<std::size_t>((sc * num_sg + sg) * kChannels + ch)]; }
};

/// Floor applied to per-pattern power before normalization and log.
inline constexpr double kPowerFloor = 1e-12;

/// Removes each SG's CP and takes a 1/N-normalized DFT of every symbol,
/// phase-referenced to the absolute sample index:
///   Y[f, 5m+i] = (1/N) sum_n x[N_mi + n] exp(-j 2 pi f (N_mi + n) / N).
ResourceGrid demodulate_grid(std::span<const cplx> stream, const PreambleConfig& config);

/// Mean of the five REs of each SG, per subcarrier: N x S.
ComplexMatrix sg_average(const ResourceGrid& grid, const PreambleConfig& config);

/// Gathers each pattern's S-long sequence, normalizes it to unit RMS, and
/// scatters (re, im, ln power) back to the pattern's cells.
FeatureTensor preprocess_grid(const ResourceGrid& grid, std::span<const HoppingPattern> patterns, const PreambleConfig& config);

/// Grid file: "NPRG", u32 version, u32 rows, u32 cols, complex64 row-major.
void write_grid(std::ostream& os, const ResourceGrid& grid);
ResourceGrid read_grid(std::istream& is);

}  // namespace nprach
