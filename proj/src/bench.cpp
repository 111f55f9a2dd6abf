#include "nprach/bench.hpp"

#include <cmath>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "nprach/parallel.hpp"
#include "nprach/random.hpp"

namespace nprach {

void ExperimentConfig::validate() const {
    if (trials < 1) throw std::invalid_argument("experiment trials must be >= 1");
    if (detectors.empty() || cfo_max_ppm_points.empty() || p_active_points.empty()) {
        throw std::invalid_argument("experiment axes and detector list must be non-empty");
    }
    if (!(snr_bin_db > 0.0)) throw std::invalid_argument("snr_bin_db must be positive");
    for (const auto& d : detectors) {
        if (d != "nn" && d != "baseline") throw std::invalid_argument("unknown detector '" + d + "'");
    }
}

namespace {

struct Accumulator {
    long active = 0, detected = 0, inactive = 0, false_pos = 0;
    double toa_sq = 0.0, cfo_sq = 0.0;
};

MetricsRecord finish(const Accumulator& a, long trials) {
    MetricsRecord r;
    r.trials = trials;
    r.n_active = a.active;
    r.n_detected = a.detected;
    r.n_missed = a.active - a.detected;
    r.fnr = a.active > 0 ? static_cast<double>(r.n_missed) / a.active : 0.0;
    r.toa_rmse_us = a.active > 0 ? std::sqrt(a.toa_sq / a.active) : 0.0;
    r.cfo_rmse_ppm = a.active > 0 ? std::sqrt(a.cfo_sq / a.active) : 0.0;
    return r;
}

}  // namespace

std::vector<MetricsRecord> compute_metrics(std::span<const EvaluatedTrial> trials, double snr_bin_db, const PreambleConfig& config) {
    if (trials.empty()) throw std::invalid_argument("compute_metrics: no trials");
    std::map<long, Accumulator> bins;
    Accumulator all;
    for (const auto& t : trials) {
        if (t.report.entries.size() != t.truth.size()) throw std::invalid_argument("compute_metrics: report/truth size mismatch");
        for (std::size_t k = 0; k < t.truth.size(); ++k) {
            const UserTruth& u = t.truth[k];
            const PatternDetection& e = t.report.entries[k];
            if (!u.active) {
                ++all.inactive;
                if (e.detected) ++all.false_pos;
                continue;
            }
            const double toa_err_us = (e.toa_hat - u.toa) * 1e6;
            const double cfo_err_ppm = config.cfo_norm_to_ppm(e.cfo_hat - u.cfo_norm);
            for (Accumulator* a : {&all, u.snr > 0.0 ? &bins[static_cast<long>(std::floor(10.0 * std::log10(u.snr) / snr_bin_db))] : nullptr}) {
                if (!a) continue;
                ++a->active;
                if (e.detected) ++a->detected;
                a->toa_sq += toa_err_us * toa_err_us;
                a->cfo_sq += cfo_err_ppm * cfo_err_ppm;
            }
        }
    }
    const long n = static_cast<long>(trials.size());
    const double fpr = all.inactive > 0 ? static_cast<double>(all.false_pos) / all.inactive : 0.0;
    std::vector<MetricsRecord> out;
    for (const auto& [idx, acc] : bins) {
        MetricsRecord r = finish(acc, n);
        r.snr_lo_db = idx * snr_bin_db;
        r.snr_hi_db = (idx + 1) * snr_bin_db;
        out.push_back(r);
    }
    MetricsRecord total = finish(all, n);
    total.all_snr = true;
    out.push_back(total);
    for (auto& r : out) {
        r.n_inactive = all.inactive;
        r.n_false_pos = all.false_pos;
        r.fpr = fpr;
    }
    return out;
}

std::vector<MetricsRecord> run_experiment(const ExperimentConfig& experiment, const Detectors& detectors, const PreambleConfig& config,
                                          const DropParams& channel) {
    experiment.validate();
    config.validate();
    for (const auto& d : experiment.detectors) {
        if (d == "nn" && !detectors.model) throw std::invalid_argument("run_experiment: detector 'nn' requested without a model");
        if (d == "baseline" && !detectors.baseline) throw std::invalid_argument("run_experiment: detector 'baseline' requested without a threshold");
    }
    const auto all_patterns = build_all_patterns(config);
    const std::span<const HoppingPattern> patterns(all_patterns.data(), static_cast<std::size_t>(config.max_users));
    const int workers = experiment.workers > 0 ? experiment.workers : default_workers();
    constexpr std::size_t kChunk = 256;
    constexpr std::size_t kInferBatch = 64;

    std::vector<MetricsRecord> records;
    std::uint64_t point = 0;
    for (double cfo_max : experiment.cfo_max_ppm_points) {
        for (double p_active : experiment.p_active_points) {
            DropParams params = channel;
            params.cfo_max_ppm = cfo_max;
            params.p_active = p_active;
            const std::uint64_t point_seed = mix_seed(experiment.seed, point++);
            const auto n = static_cast<std::size_t>(experiment.trials);
            std::map<std::string, std::vector<EvaluatedTrial>> results;
            for (const auto& d : experiment.detectors) results[d].resize(n);

            for (std::size_t lo = 0; lo < n; lo += kChunk) {
                const std::size_t hi = std::min(n, lo + kChunk);
                std::vector<Drop> drops(hi - lo);
                parallel_for(drops.size(), workers, [&](std::size_t i) {
                    drops[i] = simulate_drop(mix_seed(point_seed, lo + i), config, params, patterns);
                });
                if (results.count("baseline")) {
                    auto& out = results["baseline"];
                    parallel_for(drops.size(), workers, [&](std::size_t i) {
                        out[lo + i] = EvaluatedTrial{baseline_detect(drops[i].grid, patterns, config, *detectors.baseline), drops[i].truth};
                    });
                }
                if (results.count("nn")) {
                    auto& out = results["nn"];
                    const std::size_t batches = (drops.size() + kInferBatch - 1) / kInferBatch;
                    parallel_for(batches, workers, [&](std::size_t b) {
                        const std::size_t b_lo = b * kInferBatch;
                        const std::size_t b_hi = std::min(drops.size(), b_lo + kInferBatch);
                        std::vector<ResourceGrid> grids;
                        for (std::size_t i = b_lo; i < b_hi; ++i) grids.push_back(drops[i].grid);
                        auto reports = infer_batch(*detectors.model, grids, patterns, config);
                        for (std::size_t i = b_lo; i < b_hi; ++i) out[lo + i] = EvaluatedTrial{std::move(reports[i - b_lo]), drops[i].truth};
                    });
                }
            }

            for (const auto& d : experiment.detectors) {
                auto recs = compute_metrics(results[d], experiment.snr_bin_db, config);
                bool finite = true;
                for (const auto& r : recs) finite = finite && std::isfinite(r.fnr) && std::isfinite(r.fpr) && std::isfinite(r.toa_rmse_us) && std::isfinite(r.cfo_rmse_ppm);
                if (!finite) {
                    std::cerr << "run_experiment: non-finite metric for detector " << d << " at cfo_max_ppm=" << cfo_max
                              << " p_active=" << p_active << "; point skipped\n";
                    continue;
                }
                for (auto& r : recs) {
                    r.detector = d;
                    r.cfo_max_ppm = cfo_max;
                    r.p_active = p_active;
                    records.push_back(r);
                }
            }
        }
    }
    return records;
}

void write_metrics_csv(std::ostream& os, std::span<const MetricsRecord> records) {
    os << "detector,cfo_max_ppm,p_active,snr_lo_db,snr_hi_db,trials,n_active,n_detected,n_missed,n_inactive,n_false_pos,fnr,fpr,"
          "toa_rmse_us,cfo_rmse_ppm\n";
    std::ostringstream row;
    row << std::setprecision(10);
    for (const auto& r : records) {
        row.str("");
        row << r.detector << ',' << r.cfo_max_ppm << ',' << r.p_active << ',';
        if (r.all_snr) {
            row << "all,all,";
        } else {
            row << r.snr_lo_db << ',' << r.snr_hi_db << ',';
        }
        row << r.trials << ',' << r.n_active << ',' << r.n_detected << ',' << r.n_missed << ',' << r.n_inactive << ',' << r.n_false_pos
            << ',' << r.fnr << ',' << r.fpr << ',' << r.toa_rmse_us << ',' << r.cfo_rmse_ppm << '\n';
        os << row.str();
    }
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
    std::ostringstream os;
    write_metrics_csv(os, records);
    return os.str();
}

std::string merge_tables(std::span<const std::string> tables) {
    std::string header;
    std::ostringstream out;
    for (const auto& t : tables) {
        std::istringstream is(t);
        std::string line;
        if (!std::getline(is, line)) continue;
        if (header.empty()) {
            header = line;
            out << header << '\n';
        } else if (line != header) {
            throw std::invalid_argument("merge_tables: header mismatch");
        }
        while (std::getline(is, line)) {
            if (!line.empty()) out << line << '\n';
        }
    }
    return out.str();
}

}  // namespace nprach
