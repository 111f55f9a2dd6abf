// Command line front end: simulate, calibrate, train, eval, report.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nprach/baseline.hpp"
#include "nprach/bench.hpp"
#include "nprach/config_file.hpp"
#include "nprach/detection.hpp"
#include "nprach/parallel.hpp"
#include "nprach/random.hpp"
#include "nprach/synchronizer.hpp"

namespace fs = std::filesystem;
using namespace nprach;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> workers;
    std::optional<int> steps;
    std::optional<int> trials;
    std::string model;
    std::optional<double> gamma;
    std::vector<std::string> detectors;
    std::vector<std::string> inputs;
};

AppConfig load(const Options& o) { return o.config_path.empty() ? AppConfig{} : load_config(o.config_path); }

int workers_of(const Options& o) { return o.workers ? *o.workers : default_workers(); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

int cmd_simulate(const Options& o) {
    const AppConfig c = load(o);
    if (o.out.empty()) throw std::runtime_error("simulate needs --out <directory>");
    const int n = o.trials.value_or(1);
    if (n < 1) throw std::runtime_error("--trials must be >= 1");
    const std::uint64_t seed = o.seed.value_or(c.experiment.seed);
    fs::create_directories(o.out);
    const auto all = build_all_patterns(c.preamble);
    const std::span<const HoppingPattern> patterns(all.data(), static_cast<std::size_t>(c.preamble.max_users));
    for (int i = 0; i < n; ++i) {
        const std::uint64_t drop_seed = mix_seed(seed, static_cast<std::uint64_t>(i));
        const ScenarioSample scenario = sample_scenario(drop_seed, c.preamble, c.channel);
        Rng rng(mix_seed(drop_seed, 0x6E6F697365));
        const auto samples = synthesize_received(scenario, patterns, c.preamble, rng);
        const ResourceGrid grid = demodulate_grid(samples, c.preamble);
        std::ostringstream name;
        name << "drop_" << std::setw(5) << std::setfill('0') << i;
        std::ofstream sc(fs::path(o.out) / (name.str() + ".npsc"), std::ios::binary);
        std::ofstream gr(fs::path(o.out) / (name.str() + ".nprg"), std::ios::binary);
        if (!sc || !gr) throw std::runtime_error("cannot write into '" + o.out + "'");
        write_scenario_dump(sc, scenario, c.preamble, samples);
        write_grid(gr, grid);
    }
    std::cout << "wrote " << n << " drops to " << o.out << "\n";
    return 0;
}

int cmd_calibrate(const Options& o) {
    const AppConfig c = load(o);
    const int trials = o.trials.value_or(100000);
    const double gamma =
        calibrate_threshold(c.preamble, c.baseline, o.seed.value_or(c.experiment.seed), trials, c.channel.noise_var, workers_of(o));
    std::ostringstream text;
    text << std::setprecision(17) << "[baseline]\ngamma = " << gamma << "\ntarget_fa = " << c.baseline.target_fa << "\n";
    if (o.out.empty()) {
        std::cout << text.str();
    } else {
        write_text(o.out, text.str());
        std::cout << "gamma = " << std::setprecision(17) << gamma << "\n";
    }
    return 0;
}

int cmd_train(const Options& o) {
    AppConfig c = load(o);
    if (o.out.empty()) throw std::runtime_error("train needs --out <checkpoint>");
    if (o.steps) c.train.steps = *o.steps;
    if (o.seed) c.train.seed = *o.seed;
    c.train.workers = workers_of(o);
    c.train.validate();
    SynchModel model = o.model.empty() ? SynchModel(c.model, c.preamble.n_sc, c.preamble.num_sg(), c.train.seed)
                                       : load_checkpoint(o.model, c.model, c.preamble.n_sc, c.preamble.num_sg());
    train(model, c.train, c.preamble, c.channel, [](const LossRecord& r) {
        std::cerr << "step " << r.step << " L1 " << r.losses.detection << " L2 " << r.losses.estimation << " L " << r.losses.total << "\n";
    });
    save_checkpoint(model, o.out);
    std::cout << "saved " << o.out << " after " << c.train.steps << " steps\n";
    return 0;
}

int cmd_eval(const Options& o) {
    AppConfig c = load(o);
    if (o.seed) c.experiment.seed = *o.seed;
    if (o.trials) c.experiment.trials = *o.trials;
    if (!o.detectors.empty()) c.experiment.detectors = o.detectors;
    if (o.gamma) c.baseline.gamma = *o.gamma;
    c.experiment.workers = workers_of(o);
    c.experiment.validate();

    Detectors dets;
    std::optional<SynchModel> model;
    for (const auto& d : c.experiment.detectors) {
        if (d == "nn") {
            if (o.model.empty()) throw std::runtime_error("detector 'nn' needs --model <checkpoint>");
            model.emplace(load_checkpoint(o.model, c.model, c.preamble.n_sc, c.preamble.num_sg()));
            dets.model = &*model;
        } else {
            c.baseline.validate(c.preamble);
            dets.baseline = c.baseline;
        }
    }
    const auto records = run_experiment(c.experiment, dets, c.preamble, c.channel);
    const std::string table = metrics_csv(records);
    const std::string out = o.out.empty() ? c.experiment.output : o.out;
    if (out.empty()) {
        std::cout << table;
    } else {
        write_text(out, table);
    }
    return 0;
}

int cmd_report(const Options& o) {
    if (o.inputs.empty()) throw std::runtime_error("report needs at least one input table");
    std::vector<std::string> tables;
    for (const auto& path : o.inputs) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        tables.push_back(ss.str());
    }
    const std::string merged = merge_tables(tables);
    if (o.out.empty()) {
        std::cout << merged;
    } else {
        write_text(o.out, merged);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    nprach::retain_freed_memory();
    CLI::App app{"NB-IoT NPRACH link-level simulator"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub, bool config = true) {
        if (config) sub->add_option("--config", o.config_path, "INI configuration file");
        sub->add_option("--seed", o.seed, "Base seed");
        sub->add_option("--out", o.out, "Output path");
        sub->add_option("--workers", o.workers, "Worker threads (default: NPRACH_WORKERS or all cores)")->check(CLI::PositiveNumber);
    };

    auto* simulate = app.add_subcommand("simulate", "Dump random drops (scenario + resource grid)");
    common(simulate);
    simulate->add_option("--trials", o.trials, "Number of drops");

    auto* calibrate = app.add_subcommand("calibrate", "Calibrate the baseline threshold on noise-only grids");
    common(calibrate);
    calibrate->add_option("--trials", o.trials, "Noise-only grids (default 100000)");

    auto* train_cmd = app.add_subcommand("train", "Train the neural synchronizer");
    common(train_cmd);
    train_cmd->add_option("--steps", o.steps, "Override train.steps");
    train_cmd->add_option("--model", o.model, "Initial checkpoint");

    auto* eval = app.add_subcommand("eval", "Run the configured sweep and write a metrics table");
    common(eval);
    eval->add_option("--trials", o.trials, "Override experiment.trials");
    eval->add_option("--model", o.model, "Checkpoint for the nn detector");
    eval->add_option("--gamma", o.gamma, "Override baseline.gamma");
    eval->add_option("--detectors", o.detectors, "Detectors to run (nn, baseline)")->delimiter(',');

    auto* report = app.add_subcommand("report", "Merge metrics tables");
    common(report, false);
    report->add_option("inputs", o.inputs, "Tables to merge")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*simulate) return cmd_simulate(o);
        if (*calibrate) return cmd_calibrate(o);
        if (*train_cmd) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*report) return cmd_report(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
