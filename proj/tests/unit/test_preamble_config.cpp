#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include "nprach/preamble_config.hpp"

using namespace nprach;

namespace {

PreambleConfig narrow_band() {
    PreambleConfig c;
    c.n_fft = 64;
    c.n_sc = 24;
    c.max_users = 24;
    return c;
}

}  // namespace

TEST_CASE("timing windows skip the shared CP once per symbol group") {
    PreambleConfig c = narrow_band();
    const TimingTable t = derive_timing(c);
    CHECK(c.cp_len() == 16);
    CHECK(c.sg_len() == 336);
    CHECK(t.start(0, 0) == 16);
    CHECK(t.start(1, 0) == 352);
    CHECK(t.total_samples == 1344);
    for (int m = 0; m < c.num_sg(); ++m) {
        for (int i = 0; i < PreambleConfig::kSymbolsPerSg; ++i) CHECK(t.start(m, i) == m * c.sg_len() + c.cp_len() + i * c.n_fft);
    }
}

TEST_CASE("timing windows are disjoint, increasing and inside the preamble") {
    for (int n_fft : {64, 128, 256}) {
        PreambleConfig c;
        c.n_fft = n_fft;
        const TimingTable t = derive_timing(c);
        REQUIRE(t.window_start.size() == static_cast<std::size_t>(c.num_symbols()));
        for (std::size_t j = 1; j < t.window_start.size(); ++j) CHECK(t.window_start[j] >= t.window_start[j - 1] + n_fft);
        CHECK(t.window_start.front() >= 0);
        CHECK(t.window_start.back() + n_fft <= t.total_samples);
    }
}

TEST_CASE("default numerology") {
    PreambleConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.num_sg() == 4);
    CHECK(c.sample_rate() == doctest::Approx(480e3));
    CHECK(c.cp_duration() == doctest::Approx(66.6667e-6).epsilon(1e-4));
    CHECK(c.total_samples() == 4 * (32 + 5 * 128));
}

TEST_CASE("hand-traced hopping patterns") {
    PreambleConfig c;
    CHECK(build_hopping_pattern(0, c).sc_index == std::vector<int>{0, 1, 7, 6});
    CHECK(build_hopping_pattern(1, c).sc_index == std::vector<int>{1, 0, 6, 7});
    CHECK(build_hopping_pattern(47, c).sc_index == std::vector<int>{47, 46, 40, 41});
    CHECK(build_hopping_pattern(6, c).sc_index == std::vector<int>{6, 7, 1, 0});
}

TEST_CASE("hop distances follow 1, 6, 1") {
    PreambleConfig c;
    for (const auto& p : build_all_patterns(c)) {
        REQUIRE(p.sc_index.size() == 4);
        CHECK(std::abs(p.sc_index[1] - p.sc_index[0]) == 1);
        CHECK(std::abs(p.sc_index[2] - p.sc_index[1]) == 6);
        CHECK(std::abs(p.sc_index[3] - p.sc_index[2]) == 1);
        for (int v : p.sc_index) CHECK((v >= 0 && v < c.n_sc));
    }
}

TEST_CASE("per-SG maps are permutations") {
    for (int n_sc : {4, 12, 24, 36, 48}) {
        PreambleConfig c;
        c.n_sc = n_sc;
        c.max_users = n_sc;
        const auto all = build_all_patterns(c);
        REQUIRE(all.size() == static_cast<std::size_t>(n_sc));
        for (int m = 0; m < c.num_sg(); ++m) {
            std::vector<int> col;
            for (const auto& p : all) col.push_back(p.sc_index[static_cast<std::size_t>(m)]);
            if (m == 0) {
                std::vector<int> id(static_cast<std::size_t>(n_sc));
                std::iota(id.begin(), id.end(), 0);
                CHECK(col == id);
            }
            std::sort(col.begin(), col.end());
            CHECK(std::adjacent_find(col.begin(), col.end()) == col.end());
            CHECK(col.front() == 0);
            CHECK(col.back() == n_sc - 1);
        }
    }
}

TEST_CASE("small bands hop by half the band") {
    PreambleConfig c;
    c.n_sc = 4;
    c.max_users = 4;
    CHECK(block_hop_distance(4) == 2);
    CHECK(block_hop_distance(48) == 6);
    CHECK(build_hopping_pattern(0, c).sc_index == std::vector<int>{0, 1, 3, 2});
}

TEST_CASE("hopping errors") {
    PreambleConfig c;
    CHECK_THROWS_AS(build_hopping_pattern(-1, c), std::out_of_range);
    CHECK_THROWS_AS(build_hopping_pattern(48, c), std::out_of_range);
    c.n_reps = 2;
    CHECK_THROWS_AS(build_hopping_pattern(0, c), std::invalid_argument);
}

TEST_CASE("config validation") {
    PreambleConfig c;
    c.n_sc = 49;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PreambleConfig{};
    c.max_users = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = PreambleConfig{};
    c.n_fft = 64;  // the 48-subcarrier block no longer fits below N/2
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("bands without an orthogonal 1/6/1 structure are rejected") {
    PreambleConfig c;
    c.n_sc = 30;
    c.max_users = 30;
    CHECK_NOTHROW(c.validate());
    CHECK_THROWS_AS(build_hopping_pattern(0, c), std::invalid_argument);
}

TEST_CASE("ppm conversions round-trip") {
    PreambleConfig c;
    CHECK(c.ppm_to_cfo_norm(10.0) == doctest::Approx(10e-6 * 50e6 / 480e3));
    CHECK(c.cfo_norm_to_ppm(c.ppm_to_cfo_norm(7.5)) == doctest::Approx(7.5));
}
