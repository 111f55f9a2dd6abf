#pragma once

#include <stdexcept>
#include <string>

#include "nprach/baseline.hpp"
#include "nprach/bench.hpp"
#include "nprach/channel.hpp"
#include "nprach/preamble_config.hpp"
#include "nprach/synchronizer.hpp"

namespace nprach {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Everything a CLI run needs. Missing keys keep their defaults.
struct AppConfig {
    PreambleConfig preamble;
    DropParams channel;
    ModelConfig model;
    TrainConfig train;
    BaselineConfig baseline;
    ExperimentConfig experiment;
};

/// INI text with sections [preamble] [channel] [model] [train] [baseline]
/// [experiment]. Lists are comma separated. Unknown sections or keys are
/// rejected.
AppConfig parse_config(const std::string& text, const std::string& origin = "<string>");

/// Reads and parses `path`; errors name the path.
AppConfig load_config(const std::string& path);

}  // namespace nprach
