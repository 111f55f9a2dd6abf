#include <doctest.h>

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "nprach/bench.hpp"
#include "nprach/config_file.hpp"

using namespace nprach;

namespace {

PatternDetection entry(int id, bool detected, double toa_hat = 0.0, double cfo_hat = 0.0) {
    return PatternDetection{id, detected ? 1.0 : 0.0, toa_hat, cfo_hat, detected};
}

UserTruth active_user(double snr_db, double toa = 0.0, double cfo = 0.0) { return UserTruth{true, toa, cfo, std::pow(10.0, snr_db / 10.0)}; }

const MetricsRecord& all_row(const std::vector<MetricsRecord>& rows) {
    REQUIRE(!rows.empty());
    REQUIRE(rows.back().all_snr);
    return rows.back();
}

ModelConfig small_model() {
    ModelConfig m;
    m.channels = 8;
    m.conv_blocks = 1;
    m.mlp_hidden = {8};
    return m;
}

}  // namespace

TEST_CASE("FNR from 10 active users with 9 detected") {
    PreambleConfig c;
    EvaluatedTrial t;
    for (int k = 0; k < 10; ++k) {
        t.report.entries.push_back(entry(k, k != 3));
        t.truth.push_back(active_user(5.0));
    }
    const auto rows = compute_metrics(std::span(&t, 1), 2.0, c);
    const auto& all = all_row(rows);
    CHECK(all.n_active == 10);
    CHECK(all.n_detected == 9);
    CHECK(all.n_missed == 1);
    CHECK(all.fnr == doctest::Approx(0.1));
    CHECK(all.fnr + static_cast<double>(all.n_detected) / all.n_active == doctest::Approx(1.0));
    REQUIRE(rows.size() == 2u);
    CHECK(rows[0].snr_lo_db == 4.0);
    CHECK(rows[0].snr_hi_db == 6.0);
    CHECK(rows[0].fnr == doctest::Approx(0.1));
}

TEST_CASE("FPR from 38 inactive patterns with one flagged") {
    PreambleConfig c;
    EvaluatedTrial t;
    for (int k = 0; k < 38; ++k) {
        t.report.entries.push_back(entry(k, k == 0));
        t.truth.push_back(UserTruth{});
    }
    t.report.entries.push_back(entry(38, true));
    t.truth.push_back(active_user(-3.0));
    const auto rows = compute_metrics(std::span(&t, 1), 2.0, c);
    CHECK(all_row(rows).n_inactive == 38);
    CHECK(all_row(rows).fpr == doctest::Approx(1.0 / 38.0));
    CHECK(all_row(rows).fpr == doctest::Approx(0.0263).epsilon(1e-3));
    // FPR is not binned: every row carries the aggregate.
    for (const auto& r : rows) CHECK(r.fpr == all_row(rows).fpr);
    CHECK(rows.front().snr_lo_db == -4.0);
}

TEST_CASE("ToA RMSE over active users regardless of detection") {
    PreambleConfig c;
    EvaluatedTrial t;
    t.truth = {active_user(10.0, 20e-6), active_user(10.0, 5e-6), UserTruth{}};
    t.report.entries = {entry(0, true, 23e-6), entry(1, false, 1e-6), entry(2, false, 99e-6)};
    const auto rows = compute_metrics(std::span(&t, 1), 2.0, c);
    CHECK(all_row(rows).toa_rmse_us == doctest::Approx(std::sqrt(12.5)));
    CHECK(all_row(rows).toa_rmse_us == doctest::Approx(3.5355).epsilon(1e-4));
}

TEST_CASE("CFO RMSE is reported in ppm") {
    PreambleConfig c;
    EvaluatedTrial t;
    const double f = c.ppm_to_cfo_norm(2.0);
    t.truth = {active_user(0.0, 0.0, 0.0)};
    t.report.entries = {entry(0, true, 0.0, f)};
    CHECK(all_row(compute_metrics(std::span(&t, 1), 2.0, c)).cfo_rmse_ppm == doctest::Approx(2.0));
}

TEST_CASE("SNR bins are ascending and omit empty bins") {
    PreambleConfig c;
    std::vector<EvaluatedTrial> ts(2);
    ts[0].truth = {active_user(-7.0), active_user(13.0)};
    ts[0].report.entries = {entry(0, false), entry(1, true)};
    ts[1].truth = {active_user(-6.5), UserTruth{}};
    ts[1].report.entries = {entry(0, true), entry(1, false)};
    const auto rows = compute_metrics(ts, 2.0, c);
    REQUIRE(rows.size() == 3u);
    CHECK(rows[0].snr_lo_db == -8.0);
    CHECK(rows[0].n_active == 2);
    CHECK(rows[0].fnr == doctest::Approx(0.5));
    CHECK(rows[1].snr_lo_db == 12.0);
    CHECK(rows[1].fnr == 0.0);
    CHECK(rows[2].trials == 2);
    CHECK(rows[2].n_active == 3);
}

TEST_CASE("compute_metrics errors") {
    PreambleConfig c;
    CHECK_THROWS_AS(compute_metrics(std::span<const EvaluatedTrial>(), 2.0, c), std::invalid_argument);
    EvaluatedTrial t;
    t.truth = {UserTruth{}};
    CHECK_THROWS_AS(compute_metrics(std::span(&t, 1), 2.0, c), std::invalid_argument);
}

TEST_CASE("experiment validation") {
    ExperimentConfig e;
    CHECK_NOTHROW(e.validate());
    e.trials = 0;
    CHECK_THROWS_AS(e.validate(), std::invalid_argument);
    e = ExperimentConfig{};
    e.p_active_points.clear();
    CHECK_THROWS_AS(e.validate(), std::invalid_argument);
    e = ExperimentConfig{};
    e.detectors = {"oracle"};
    CHECK_THROWS_AS(e.validate(), std::invalid_argument);

    PreambleConfig c;
    ExperimentConfig zero;
    zero.trials = 0;
    zero.detectors = {"baseline"};
    CHECK_THROWS_AS(run_experiment(zero, Detectors{nullptr, BaselineConfig{}}, c, DropParams{}), std::invalid_argument);
    ExperimentConfig nn_only;
    nn_only.detectors = {"nn"};
    CHECK_THROWS_AS(run_experiment(nn_only, Detectors{}, c, DropParams{}), std::invalid_argument);
}

TEST_CASE("paired, deterministic experiment") {
    PreambleConfig c;
    SynchModel model(small_model(), c.n_sc, c.num_sg(), 3);
    BaselineConfig b;
    b.gamma = 30.0;
    ExperimentConfig e;
    e.trials = 40;
    e.cfo_max_ppm_points = {0.0, 10.0};
    e.p_active_points = {0.5};
    e.workers = 1;
    const auto both = run_experiment(e, Detectors{&model, b}, c, DropParams{});
    REQUIRE(!both.empty());

    // Identical on re-run and independent of the worker count.
    CHECK(metrics_csv(run_experiment(e, Detectors{&model, b}, c, DropParams{})) == metrics_csv(both));
    ExperimentConfig wide = e;
    wide.workers = 3;
    CHECK(metrics_csv(run_experiment(wide, Detectors{&model, b}, c, DropParams{})) == metrics_csv(both));

    // The baseline sees the same grids whether or not the NN runs alongside it.
    ExperimentConfig base_only = e;
    base_only.detectors = {"baseline"};
    std::vector<MetricsRecord> base_rows;
    for (const auto& r : both) {
        if (r.detector == "baseline") base_rows.push_back(r);
    }
    CHECK(metrics_csv(run_experiment(base_only, Detectors{nullptr, b}, c, DropParams{})) == metrics_csv(base_rows));

    // Same truth for both detectors at every point and bin.
    std::vector<MetricsRecord> nn_rows;
    for (const auto& r : both) {
        if (r.detector == "nn") nn_rows.push_back(r);
    }
    REQUIRE(nn_rows.size() == base_rows.size());
    for (std::size_t i = 0; i < nn_rows.size(); ++i) {
        CHECK(nn_rows[i].cfo_max_ppm == base_rows[i].cfo_max_ppm);
        CHECK(nn_rows[i].snr_lo_db == base_rows[i].snr_lo_db);
        CHECK(nn_rows[i].n_active == base_rows[i].n_active);
        CHECK(nn_rows[i].n_inactive == base_rows[i].n_inactive);
        CHECK(nn_rows[i].fnr >= 0.0);
        CHECK(nn_rows[i].fnr <= 1.0);
        CHECK(nn_rows[i].n_detected + nn_rows[i].n_missed == nn_rows[i].n_active);
    }

    ExperimentConfig other = e;
    other.seed = 8;
    CHECK(metrics_csv(run_experiment(other, Detectors{&model, b}, c, DropParams{})) != metrics_csv(both));
}

TEST_CASE("csv layout and merging") {
    MetricsRecord r;
    r.detector = "baseline";
    r.cfo_max_ppm = 10.0;
    r.p_active = 0.5;
    r.snr_lo_db = -2.0;
    r.snr_hi_db = 0.0;
    r.trials = 5;
    r.n_active = 4;
    r.n_detected = 3;
    r.n_missed = 1;
    r.fnr = 0.25;
    MetricsRecord a = r;
    a.all_snr = true;
    const std::vector<MetricsRecord> rows{r, a};
    const std::string csv = metrics_csv(rows);
    const std::string header =
        "detector,cfo_max_ppm,p_active,snr_lo_db,snr_hi_db,trials,n_active,n_detected,n_missed,n_inactive,n_false_pos,fnr,fpr,toa_rmse_us,"
        "cfo_rmse_ppm\n";
    CHECK(csv == header + "baseline,10,0.5,-2,0,5,4,3,1,0,0,0.25,0,0,0\nbaseline,10,0.5,all,all,5,4,3,1,0,0,0.25,0,0,0\n");

    const std::vector<std::string> tables{csv, csv};
    const std::string merged = merge_tables(tables);
    CHECK(merged.rfind(header, 0) == 0);
    CHECK(merged.size() == 2 * csv.size() - header.size());
    const std::vector<std::string> bad{csv, "other,header\n1,2\n"};
    CHECK_THROWS_AS(merge_tables(bad), std::invalid_argument);
}

TEST_CASE("config file parsing") {
    const std::string text = R"([preamble]
n_sc = 24
n_fft = 64
max_users = 24

[channel]
p_active = 0.25
delay_spread = 2e-7

[model]
channels = 16
mlp_hidden = 32, 16

[baseline]
target_fa = 0.01

[experiment]
detectors = baseline
cfo_max_ppm_points = 0, 10, 20
trials = 50
seed = 9
)";
    const AppConfig c = parse_config(text);
    CHECK(c.preamble.n_sc == 24);
    CHECK(c.preamble.max_users == 24);
    CHECK(c.channel.p_active == 0.25);
    CHECK(c.channel.profile.delay_spread == 2e-7);
    CHECK(c.model.channels == 16);
    CHECK(c.model.mlp_hidden == std::vector<int>{32, 16});
    CHECK(c.baseline.target_fa == 0.01);
    CHECK(c.experiment.detectors == std::vector<std::string>{"baseline"});
    CHECK(c.experiment.cfo_max_ppm_points == std::vector<double>{0.0, 10.0, 20.0});
    CHECK(c.experiment.trials == 50);
    CHECK(c.experiment.seed == 9u);
    CHECK(c.train.steps == TrainConfig{}.steps);
}

TEST_CASE("config file errors") {
    CHECK_THROWS_AS(parse_config("[nope]\na = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\nwidth = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\nchannels = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[experiment]\ntrials = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[preamble]\nn_sc = 49\n"), ConfigError);
    try {
        parse_config("[model]\nwidth = 3\n", "run.ini");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("run.ini") != std::string::npos);
        CHECK(std::string(e.what()).find("model.width") != std::string::npos);
    }
    try {
        load_config("/nonexistent/missing.file");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/missing.file") != std::string::npos);
    }
}
