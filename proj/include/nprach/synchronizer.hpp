#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nprach/autodiff.hpp"
#include "nprach/channel.hpp"
#include "nprach/detection.hpp"
#include "nprach/frontend.hpp"
#include "nprach/preamble_config.hpp"

namespace nprach {

struct ModelConfig {
    int conv_blocks = 3;
    int channels = 128;
    int kernel = 3;
    std::vector<int> mlp_hidden{128, 128};
    double detection_threshold = 0.5;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
    int batch = 64;
    double lr = 1e-3;
    int steps = 20000;
    double p_active_min = 0.0;  // per-example activity probability ~ U(min, max)
    double p_active_max = 1.0;
    double cfo_max_ppm = 10.0;
    double toa_max = -1.0;      // [s]; negative selects the CP duration
    std::uint64_t seed = 1;
    int log_every = 100;
    int workers = 0;            // 0 selects default_workers()

    void validate() const;
};

/// Two networks with the same trunk: a pointwise 3 -> C projection, then
/// residual blocks z += relu(sepconv(z)) along the subcarrier axis. Each
/// pattern's S x C rows are gathered and fed to MLPs whose weights are
/// shared across patterns: one sigmoid head for detection on the first
/// trunk, separate linear ToA and CFO heads on the second.
class SynchModel {
public:
    SynchModel(ModelConfig config, int n_sc, int num_sg, std::uint64_t seed);

    SynchModel(SynchModel&&) noexcept = default;
    SynchModel& operator=(SynchModel&&) noexcept = default;
    SynchModel(const SynchModel&) = delete;
    SynchModel& operator=(const SynchModel&) = delete;

    /// Deep copy with independent parameter storage.
    SynchModel clone() const;

    const ModelConfig& config() const { return config_; }
    int n_sc() const { return n_sc_; }
    int num_sg() const { return num_sg_; }

    struct Outputs {
        ad::Var prob;  // [B, K, 1]
        ad::Var toa;   // [B, K, 1], CP-duration units
        ad::Var cfo;   // [B, K, 1], subcarrier-spacing units
    };

    /// features: [B, n_sc, S, 3].
    Outputs forward(const ad::Tensor& features, std::span<const HoppingPattern> patterns) const;

    std::vector<ad::Parameter*> parameters();
    std::vector<ad::Parameter*> detection_parameters();
    std::vector<ad::Parameter*> estimation_parameters();
    const std::vector<ad::Parameter>& all_parameters() const { return params_; }
    std::vector<ad::Parameter>& all_parameters() { return params_; }

private:
    struct Block {
        std::size_t dw, pw, b;
    };
    struct Trunk {
        std::size_t in_w = 0, in_b = 0;
        std::vector<Block> blocks;
    };
    struct Mlp {
        std::vector<std::size_t> w, b;
    };

    SynchModel() = default;
    std::size_t add_param(std::string name, ad::Tensor init);
    Trunk make_trunk(const std::string& prefix, std::uint64_t seed);
    Mlp make_mlp(const std::string& prefix, int in, std::uint64_t seed);
    ad::Var run_trunk(const Trunk& t, const ad::Var& x) const;
    ad::Var run_mlp(const Mlp& m, ad::Var x) const;

    ModelConfig config_;
    int n_sc_ = 0;
    int num_sg_ = 0;
    std::vector<ad::Parameter> params_;
    std::size_t detection_end_ = 0;  // params_[0, detection_end_) belong to the detection net
    Trunk det_trunk_, est_trunk_;
    Mlp det_head_, toa_head_, cfo_head_;
};

/// Stacks feature tensors into [B, n_sc, S, 3].
ad::Tensor stack_features(std::span<const FeatureTensor> features);

/// Training targets in network units, each [B, K].
struct BatchTruth {
    ad::Tensor active;
    ad::Tensor toa;     // CP-duration units
    ad::Tensor cfo;     // subcarrier-spacing units
    ad::Tensor weight;  // A_k * SNR_k
};

BatchTruth make_batch_truth(std::span<const std::vector<UserTruth>> truth, const PreambleConfig& config);

/// Batch-mean binary cross-entropy over all patterns.
ad::Var loss_detection(const ad::Var& probs, const ad::Tensor& active);

/// Batch-mean of sum_k A_k SNR_k [(D_k - D^_k)^2 + (f_k - f^_k)^2].
ad::Var loss_estimation(const ad::Var& toa_hat, const ad::Var& cfo_hat, const BatchTruth& truth);

struct StepLosses {
    double detection = 0.0;
    double estimation = 0.0;
    double total = 0.0;
};

struct LabeledBatch {
    ad::Tensor features;
    BatchTruth truth;
};

LabeledBatch make_batch(std::span<const FeatureTensor> features, std::span<const std::vector<UserTruth>> truth,
                        const PreambleConfig& config);

/// One Adam update of both networks on L = L_detection + L_estimation.
/// Throws std::runtime_error on a non-finite loss.
StepLosses train_step(SynchModel& model, ad::Adam& optimizer, const LabeledBatch& batch,
                      std::span<const HoppingPattern> patterns);

struct LossRecord {
    int step = 0;
    StepLosses losses;
};

struct TrainResult {
    std::vector<LossRecord> trace;  // one record per step
};

/// Online training on fresh random drops. `channel` supplies everything
/// except p_active, cfo_max_ppm and toa_max, which come from `train_config`.
TrainResult train(SynchModel& model, const TrainConfig& train_config, const PreambleConfig& config, const DropParams& channel,
                  const std::function<void(const LossRecord&)>& on_log = {});

/// Preprocess, forward, threshold.
DetectionReport infer(const SynchModel& model, const ResourceGrid& grid, std::span<const HoppingPattern> patterns,
                      const PreambleConfig& config);

std::vector<DetectionReport> infer_batch(const SynchModel& model, std::span<const ResourceGrid> grids,
                                         std::span<const HoppingPattern> patterns, const PreambleConfig& config);

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class CorruptCheckpoint : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};
class ShapeMismatch : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

/// "NPCK", u32 version, model config, u32 n_sc, u32 S, u32 parameter count,
/// then per parameter: u32 name length, name, u32 rank, u32 dims, float32 data.
void save_checkpoint(const SynchModel& model, const std::string& path);
SynchModel load_checkpoint(const std::string& path);
/// Rejects files whose configuration or shapes differ from the expectation.
SynchModel load_checkpoint(const std::string& path, const ModelConfig& expected, int n_sc, int num_sg);

}  // namespace nprach
