#include "nprach/config_file.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace nprach {

namespace {

namespace pt = boost::property_tree;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_scalar(const std::string& raw, const std::string& key) {
    std::istringstream is(trim(raw));
    T v{};
    is >> v;
    if (is.fail() || !is.eof()) throw ConfigError("invalid value '" + raw + "' for " + key);
    return v;
}

template <class T>
std::vector<T> parse_list(const std::string& raw, const std::string& key) {
    std::vector<T> out;
    std::istringstream is(raw);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(parse_scalar<T>(item, key));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::vector<std::string> parse_words(const std::string& raw) {
    std::vector<std::string> out;
    std::istringstream is(raw);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

using Setter = std::function<void(const std::string&, const std::string&)>;

template <class T>
Setter scalar(T& field) {
    return [&field](const std::string& raw, const std::string& key) { field = parse_scalar<T>(raw, key); };
}

}  // namespace

AppConfig parse_config(const std::string& text, const std::string& origin) {
    pt::ptree tree;
    try {
        std::istringstream is(text);
        pt::read_ini(is, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(origin + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }

    AppConfig c;
    std::map<std::string, std::map<std::string, Setter>> table;
    auto& p = table["preamble"];
    p["delta_f"] = scalar(c.preamble.delta_f);
    p["n_fft"] = scalar(c.preamble.n_fft);
    p["n_sc"] = scalar(c.preamble.n_sc);
    p["sc_offset"] = scalar(c.preamble.sc_offset);
    p["n_reps"] = scalar(c.preamble.n_reps);
    p["max_users"] = scalar(c.preamble.max_users);
    p["carrier_freq"] = scalar(c.preamble.carrier_freq);
    p["ppm_reference_hz"] = scalar(c.preamble.ppm_reference_hz);

    auto& ch = table["channel"];
    ch["p_active"] = scalar(c.channel.p_active);
    ch["cfo_max_ppm"] = scalar(c.channel.cfo_max_ppm);
    ch["toa_max"] = scalar(c.channel.toa_max);
    ch["snr_min_db"] = scalar(c.channel.snr_min_db);
    ch["snr_max_db"] = scalar(c.channel.snr_max_db);
    ch["noise_var"] = scalar(c.channel.noise_var);
    ch["delay_spread"] = scalar(c.channel.profile.delay_spread);
    ch["num_rays"] = scalar(c.channel.profile.num_rays);

    auto& m = table["model"];
    m["conv_blocks"] = scalar(c.model.conv_blocks);
    m["channels"] = scalar(c.model.channels);
    m["kernel"] = scalar(c.model.kernel);
    m["mlp_hidden"] = [&](const std::string& raw, const std::string& key) { c.model.mlp_hidden = parse_list<int>(raw, key); };
    m["detection_threshold"] = scalar(c.model.detection_threshold);

    auto& t = table["train"];
    t["batch"] = scalar(c.train.batch);
    t["lr"] = scalar(c.train.lr);
    t["steps"] = scalar(c.train.steps);
    t["p_active_min"] = scalar(c.train.p_active_min);
    t["p_active_max"] = scalar(c.train.p_active_max);
    t["cfo_max_ppm"] = scalar(c.train.cfo_max_ppm);
    t["toa_max"] = scalar(c.train.toa_max);
    t["seed"] = scalar(c.train.seed);
    t["log_every"] = scalar(c.train.log_every);

    auto& b = table["baseline"];
    b["fft_size"] = scalar(c.baseline.fft_size);
    b["gamma"] = scalar(c.baseline.gamma);
    b["target_fa"] = scalar(c.baseline.target_fa);
    b["toa_max"] = scalar(c.baseline.toa_max);

    auto& e = table["experiment"];
    e["detectors"] = [&](const std::string& raw, const std::string&) { c.experiment.detectors = parse_words(raw); };
    e["cfo_max_ppm_points"] = [&](const std::string& raw, const std::string& key) {
        c.experiment.cfo_max_ppm_points = parse_list<double>(raw, key);
    };
    e["p_active_points"] = [&](const std::string& raw, const std::string& key) { c.experiment.p_active_points = parse_list<double>(raw, key); };
    e["snr_bin_db"] = scalar(c.experiment.snr_bin_db);
    e["trials"] = scalar(c.experiment.trials);
    e["seed"] = scalar(c.experiment.seed);
    e["output"] = [&](const std::string& raw, const std::string&) { c.experiment.output = trim(raw); };

    for (const auto& [section, entries] : tree) {
        auto sec = table.find(section);
        if (sec == table.end()) throw ConfigError(origin + ": unknown section [" + section + "]");
        for (const auto& [key, node] : entries) {
            auto it = sec->second.find(key);
            const std::string full = section + "." + key;
            if (it == sec->second.end()) throw ConfigError(origin + ": unknown key " + full);
            try {
                it->second(node.data(), full);
            } catch (const ConfigError& err) {
                throw ConfigError(origin + ": " + err.what());
            }
        }
    }

    try {
        c.preamble.validate();
        c.model.validate();
        c.train.validate();
        c.baseline.validate(c.preamble);
        c.experiment.validate();
    } catch (const std::invalid_argument& err) {
        throw ConfigError(origin + ": " + err.what());
    }
    return c;
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

}  // namespace nprach
