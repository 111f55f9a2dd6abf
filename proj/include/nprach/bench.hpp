#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nprach/baseline.hpp"
#include "nprach/channel.hpp"
#include "nprach/detection.hpp"
#include "nprach/synchronizer.hpp"

namespace nprach {

struct ExperimentConfig {
    std::vector<std::string> detectors{"nn", "baseline"};
    std::vector<double> cfo_max_ppm_points{10.0};
    std::vector<double> p_active_points{0.5};
    double snr_bin_db = 2.0;
    int trials = 1000;
    std::uint64_t seed = 7;
    std::string output;
    int workers = 0;  // 0 selects default_workers()

    void validate() const;
};

/// One table row. Binned rows carry the FNR and RMSEs of active users whose
/// SNR falls in [snr_lo_db, snr_hi_db); the `all_snr` row aggregates every
/// user. FPR is always aggregated over all SNRs.
struct MetricsRecord {
    std::string detector;
    double cfo_max_ppm = 0.0;
    double p_active = 0.0;
    bool all_snr = false;
    double snr_lo_db = 0.0;
    double snr_hi_db = 0.0;
    long trials = 0;
    long n_active = 0;
    long n_detected = 0;  // active and detected
    long n_missed = 0;
    long n_inactive = 0;
    long n_false_pos = 0;
    double fnr = 0.0;
    double fpr = 0.0;
    double toa_rmse_us = 0.0;
    double cfo_rmse_ppm = 0.0;
};

struct EvaluatedTrial {
    DetectionReport report;
    std::vector<UserTruth> truth;
};

/// Binned metrics (ascending SNR, empty bins omitted) followed by the
/// all-SNR row. RMSEs cover every active user regardless of detection.
std::vector<MetricsRecord> compute_metrics(std::span<const EvaluatedTrial> trials, double snr_bin_db, const PreambleConfig& config);

struct Detectors {
    const SynchModel* model = nullptr;
    std::optional<BaselineConfig> baseline;
};

/// Sweeps the CFO x p_active grid. At each point every detector sees the
/// same simulated grids.
std::vector<MetricsRecord> run_experiment(const ExperimentConfig& experiment, const Detectors& detectors, const PreambleConfig& config,
                                          const DropParams& channel);

void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> records);
std::string metrics_csv(std::span<const MetricsRecord> records);

/// Concatenates metric tables that share one header.
std::string merge_tables(std::span<const std::string> tables);

}  // namespace nprach
