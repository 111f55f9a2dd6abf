#pragma once

#include <bit>
#include <complex>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nprach::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, std::string_view what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("truncated input while reading " + std::string(what));
    return v;
}

inline void write_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), static_cast<std::streamsize>(magic.size())); }

inline void expect_magic(std::istream& is, std::string_view magic) {
    std::string got(magic.size(), '\0');
    is.read(got.data(), static_cast<std::streamsize>(got.size()));
    if (!is || got != magic) throw FormatError("bad magic, expected " + std::string(magic));
}

inline void write_complex64(std::ostream& os, std::span<const std::complex<double>> xs) {
    for (const auto& x : xs) {
        write_pod(os, static_cast<float>(x.real()));
        write_pod(os, static_cast<float>(x.imag()));
    }
}

inline void read_complex64(std::istream& is, std::span<std::complex<double>> xs) {
    for (auto& x : xs) {
        const float re = read_pod<float>(is, "complex64 sample");
        const float im = read_pod<float>(is, "complex64 sample");
        x = {re, im};
    }
}

}  // namespace nprach::io
