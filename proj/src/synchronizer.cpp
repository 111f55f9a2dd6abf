#include "nprach/synchronizer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nprach/binary_io.hpp"
#include "nprach/parallel.hpp"
#include "nprach/random.hpp"

namespace nprach {

void ModelConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model config: " + what); };
    if (conv_blocks < 0) fail("conv_blocks must be non-negative");
    if (channels < 1) fail("channels must be positive");
    if (kernel < 1 || kernel % 2 == 0) fail("kernel must be odd");
    for (int w : mlp_hidden) {
        if (w < 1) fail("mlp_hidden widths must be positive");
    }
    if (!(detection_threshold > 0.0 && detection_threshold < 1.0)) fail("detection_threshold must lie in (0, 1)");
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("invalid train config: " + what); };
    if (batch < 1) fail("batch must be >= 1");
    if (!(lr > 0.0)) fail("lr must be positive");
    if (steps < 0) fail("steps must be non-negative");
    if (!(p_active_min >= 0.0 && p_active_min <= p_active_max && p_active_max <= 1.0)) fail("p_active range must lie in [0, 1]");
    if (cfo_max_ppm < 0.0) fail("cfo_max_ppm must be non-negative");
    if (log_every < 1) fail("log_every must be >= 1");
}

// ---- model -------------------------------------------------------------------

namespace {

ad::Tensor glorot(std::vector<int> shape, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    ad::Tensor t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<float>(u(rng));
    return t;
}

}  // namespace

std::size_t SynchModel::add_param(std::string name, ad::Tensor init) {
    params_.emplace_back(std::move(name), std::move(init));
    return params_.size() - 1;
}

SynchModel::Trunk SynchModel::make_trunk(const std::string& prefix, std::uint64_t seed) {
    Rng rng(seed);
    const int c = config_.channels;
    const int k = config_.kernel;
    Trunk t;
    t.in_w = add_param(prefix + ".in.w", glorot({FeatureTensor::kChannels, c}, FeatureTensor::kChannels, c, rng));
    t.in_b = add_param(prefix + ".in.b", ad::Tensor({c}));
    for (int i = 0; i < config_.conv_blocks; ++i) {
        const std::string p = prefix + ".block" + std::to_string(i);
        Block b{};
        b.dw = add_param(p + ".dw", glorot({k, c}, k, k, rng));
        b.pw = add_param(p + ".pw", glorot({c, c}, c, c, rng));
        b.b = add_param(p + ".b", ad::Tensor({c}));
        t.blocks.push_back(b);
    }
    return t;
}

SynchModel::Mlp SynchModel::make_mlp(const std::string& prefix, int in, std::uint64_t seed) {
    Rng rng(seed);
    Mlp m;
    int width = in;
    std::vector<int> widths = config_.mlp_hidden;
    widths.push_back(1);
    for (std::size_t i = 0; i < widths.size(); ++i) {
        const std::string p = prefix + ".dense" + std::to_string(i);
        m.w.push_back(add_param(p + ".w", glorot({width, widths[i]}, width, widths[i], rng)));
        m.b.push_back(add_param(p + ".b", ad::Tensor({widths[i]})));
        width = widths[i];
    }
    return m;
}

SynchModel::SynchModel(ModelConfig config, int n_sc, int num_sg, std::uint64_t seed)
    : config_(std::move(config)), n_sc_(n_sc), num_sg_(num_sg) {
    config_.validate();
    if (n_sc < 1 || num_sg < 1) throw std::invalid_argument("SynchModel: n_sc and num_sg must be positive");
    const int flat = num_sg * config_.channels;
    det_trunk_ = make_trunk("detection.trunk", mix_seed(seed, 1));
    det_head_ = make_mlp("detection.prob", flat, mix_seed(seed, 2));
    detection_end_ = params_.size();
    est_trunk_ = make_trunk("estimation.trunk", mix_seed(seed, 3));
    toa_head_ = make_mlp("estimation.toa", flat, mix_seed(seed, 4));
    cfo_head_ = make_mlp("estimation.cfo", flat, mix_seed(seed, 5));
}

SynchModel SynchModel::clone() const {
    SynchModel m;
    m.config_ = config_;
    m.n_sc_ = n_sc_;
    m.num_sg_ = num_sg_;
    m.detection_end_ = detection_end_;
    m.det_trunk_ = det_trunk_;
    m.est_trunk_ = est_trunk_;
    m.det_head_ = det_head_;
    m.toa_head_ = toa_head_;
    m.cfo_head_ = cfo_head_;
    for (const auto& p : params_) m.params_.emplace_back(p.name, p.value(), p.trainable());
    return m;
}

ad::Var SynchModel::run_trunk(const Trunk& t, const ad::Var& x) const {
    ad::Var z = ad::dense(x, params_[t.in_w].var, params_[t.in_b].var);
    for (const auto& b : t.blocks) {
        const ad::Var h = ad::depthwise_separable_conv1d(z, params_[b.dw].var, params_[b.pw].var, params_[b.b].var);
        z = ad::add(z, ad::relu(h));
    }
    return z;
}

ad::Var SynchModel::run_mlp(const Mlp& m, ad::Var x) const {
    for (std::size_t i = 0; i < m.w.size(); ++i) {
        x = ad::dense(x, params_[m.w[i]].var, params_[m.b[i]].var);
        if (i + 1 < m.w.size()) x = ad::relu(x);
    }
    return x;
}

SynchModel::Outputs SynchModel::forward(const ad::Tensor& features, std::span<const HoppingPattern> patterns) const {
    const auto& s = features.shape();
    if (s.size() != 4 || s[1] != n_sc_ || s[2] != num_sg_ || s[3] != FeatureTensor::kChannels) {
        throw std::invalid_argument("SynchModel::forward: expected features [B, " + std::to_string(n_sc_) + ", " +
                                    std::to_string(num_sg_) + ", 3], got " + ad::shape_string(s));
    }
    const int batch = s[0];
    const int k = static_cast<int>(patterns.size());
    const int flat = num_sg_ * config_.channels;
    const ad::Var x = ad::constant(features);

    const ad::Var z1 = ad::reshape(ad::gather_patterns(run_trunk(det_trunk_, x), patterns), {batch, k, flat});
    const ad::Var z2 = ad::reshape(ad::gather_patterns(run_trunk(est_trunk_, x), patterns), {batch, k, flat});
    Outputs out;
    out.prob = ad::sigmoid(run_mlp(det_head_, z1));
    out.toa = run_mlp(toa_head_, z2);
    out.cfo = run_mlp(cfo_head_, z2);
    return out;
}

std::vector<ad::Parameter*> SynchModel::parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<ad::Parameter*> SynchModel::detection_parameters() {
    std::vector<ad::Parameter*> out;
    for (std::size_t i = 0; i < detection_end_; ++i) out.push_back(&params_[i]);
    return out;
}

std::vector<ad::Parameter*> SynchModel::estimation_parameters() {
    std::vector<ad::Parameter*> out;
    for (std::size_t i = detection_end_; i < params_.size(); ++i) out.push_back(&params_[i]);
    return out;
}

// ---- losses and training -------------------------------------------------------

ad::Tensor stack_features(std::span<const FeatureTensor> features) {
    if (features.empty()) throw std::invalid_argument("stack_features: empty batch");
    const int n_sc = features.front().n_sc;
    const int sgs = features.front().num_sg;
    ad::Tensor t({static_cast<int>(features.size()), n_sc, sgs, FeatureTensor::kChannels});
    std::size_t off = 0;
    for (const auto& f : features) {
        if (f.n_sc != n_sc || f.num_sg != sgs) throw std::invalid_argument("stack_features: inconsistent feature shapes");
        std::copy(f.x.begin(), f.x.end(), t.data() + off);
        off += f.x.size();
    }
    return t;
}

BatchTruth make_batch_truth(std::span<const std::vector<UserTruth>> truth, const PreambleConfig& config) {
    if (truth.empty()) throw std::invalid_argument("make_batch_truth: empty batch");
    const int b = static_cast<int>(truth.size());
    const int k = static_cast<int>(truth.front().size());
    BatchTruth t{ad::Tensor({b, k}), ad::Tensor({b, k}), ad::Tensor({b, k}), ad::Tensor({b, k})};
    const double cp = config.cp_duration();
    for (int i = 0; i < b; ++i) {
        if (static_cast<int>(truth[static_cast<std::size_t>(i)].size()) != k) throw std::invalid_argument("make_batch_truth: ragged batch");
        for (int j = 0; j < k; ++j) {
            const UserTruth& u = truth[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            const std::size_t idx = static_cast<std::size_t>(i * k + j);
            t.active[idx] = u.active ? 1.0f : 0.0f;
            t.toa[idx] = static_cast<float>(u.toa / cp);
            t.cfo[idx] = static_cast<float>(u.cfo_norm * config.n_fft);
            t.weight[idx] = u.active ? static_cast<float>(u.snr) : 0.0f;
        }
    }
    return t;
}

ad::Var loss_detection(const ad::Var& probs, const ad::Tensor& active) { return ad::binary_cross_entropy(probs, active, 1e-7); }

ad::Var loss_estimation(const ad::Var& toa_hat, const ad::Var& cfo_hat, const BatchTruth& truth) {
    return ad::add(ad::weighted_squared_error(toa_hat, truth.toa, truth.weight),
                   ad::weighted_squared_error(cfo_hat, truth.cfo, truth.weight));
}

LabeledBatch make_batch(std::span<const FeatureTensor> features, std::span<const std::vector<UserTruth>> truth,
                        const PreambleConfig& config) {
    if (features.size() != truth.size()) throw std::invalid_argument("make_batch: feature/truth count mismatch");
    return LabeledBatch{stack_features(features), make_batch_truth(truth, config)};
}

StepLosses train_step(SynchModel& model, ad::Adam& optimizer, const LabeledBatch& batch, std::span<const HoppingPattern> patterns) {
    const auto out = model.forward(batch.features, patterns);
    const ad::Var l1 = loss_detection(out.prob, batch.truth.active);
    const ad::Var l2 = loss_estimation(out.toa, out.cfo, batch.truth);
    const ad::Var total = ad::add(l1, l2);
    StepLosses losses{ad::scalar_value(l1), ad::scalar_value(l2), ad::scalar_value(total)};
    if (!std::isfinite(losses.total)) {
        std::ostringstream os;
        os << "train_step: non-finite loss (detection " << losses.detection << ", estimation " << losses.estimation
           << ") at optimizer step " << optimizer.step_count() + 1;
        throw std::runtime_error(os.str());
    }
    ad::backward(total);
    optimizer.step();
    return losses;
}

TrainResult train(SynchModel& model, const TrainConfig& tc, const PreambleConfig& config, const DropParams& channel,
                  const std::function<void(const LossRecord&)>& on_log) {
    tc.validate();
    config.validate();
    const auto all_patterns = build_all_patterns(config);
    const std::span<const HoppingPattern> patterns(all_patterns.data(), static_cast<std::size_t>(config.max_users));
    ad::Adam optimizer(model.parameters(), ad::AdamConfig{tc.lr, 0.9, 0.999, 1e-7});
    const int workers = tc.workers > 0 ? tc.workers : default_workers();

    TrainResult result;
    result.trace.reserve(static_cast<std::size_t>(tc.steps));
    std::vector<FeatureTensor> features(static_cast<std::size_t>(tc.batch));
    std::vector<std::vector<UserTruth>> truth(static_cast<std::size_t>(tc.batch));
    for (int step = 0; step < tc.steps; ++step) {
        const std::uint64_t step_seed = mix_seed(tc.seed, static_cast<std::uint64_t>(step));
        parallel_for(static_cast<std::size_t>(tc.batch), workers, [&](std::size_t b) {
            const std::uint64_t seed = mix_seed(step_seed, b);
            Rng rng(mix_seed(seed, 0x7061ULL));
            DropParams p = channel;
            p.p_active = std::uniform_real_distribution<double>(tc.p_active_min, tc.p_active_max)(rng);
            p.cfo_max_ppm = tc.cfo_max_ppm;
            p.toa_max = tc.toa_max;
            Drop d = simulate_drop(seed, config, p, patterns);
            features[b] = preprocess_grid(d.grid, patterns, config);
            truth[b] = std::move(d.truth);
        });
        const LabeledBatch batch = make_batch(features, truth, config);
        LossRecord rec{step + 1, train_step(model, optimizer, batch, patterns)};
        result.trace.push_back(rec);
        if (on_log && (rec.step % tc.log_every == 0 || rec.step == tc.steps)) on_log(rec);
    }
    return result;
}

std::vector<DetectionReport> infer_batch(const SynchModel& model, std::span<const ResourceGrid> grids,
                                         std::span<const HoppingPattern> patterns, const PreambleConfig& config) {
    if (grids.empty()) return {};
    std::vector<FeatureTensor> features;
    features.reserve(grids.size());
    for (const auto& g : grids) features.push_back(preprocess_grid(g, patterns, config));
    const auto out = model.forward(stack_features(features), patterns);
    const std::size_t k = patterns.size();
    std::vector<DetectionReport> reports(grids.size());
    for (std::size_t b = 0; b < grids.size(); ++b) {
        auto& entries = reports[b].entries;
        entries.resize(k);
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t idx = b * k + j;
            PatternDetection& e = entries[j];
            e.pattern_id = patterns[j].pattern_id;
            e.score = out.prob->value[idx];
            e.toa_hat = out.toa->value[idx] * config.cp_duration();
            e.cfo_hat = out.cfo->value[idx] / config.n_fft;
            e.detected = e.score >= model.config().detection_threshold;
        }
    }
    return reports;
}

DetectionReport infer(const SynchModel& model, const ResourceGrid& grid, std::span<const HoppingPattern> patterns,
                      const PreambleConfig& config) {
    return infer_batch(model, std::span<const ResourceGrid>(&grid, 1), patterns, config).front();
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void write_config(std::ostream& os, const ModelConfig& c) {
    io::write_pod(os, static_cast<std::uint32_t>(c.conv_blocks));
    io::write_pod(os, static_cast<std::uint32_t>(c.channels));
    io::write_pod(os, static_cast<std::uint32_t>(c.kernel));
    io::write_pod(os, static_cast<std::uint32_t>(c.mlp_hidden.size()));
    for (int w : c.mlp_hidden) io::write_pod(os, static_cast<std::uint32_t>(w));
    io::write_pod(os, c.detection_threshold);
}

ModelConfig read_config(std::istream& is) {
    ModelConfig c;
    c.conv_blocks = static_cast<int>(io::read_pod<std::uint32_t>(is, "conv_blocks"));
    c.channels = static_cast<int>(io::read_pod<std::uint32_t>(is, "channels"));
    c.kernel = static_cast<int>(io::read_pod<std::uint32_t>(is, "kernel"));
    const auto n = io::read_pod<std::uint32_t>(is, "mlp depth");
    if (n > 64) throw io::FormatError("implausible MLP depth");
    c.mlp_hidden.clear();
    for (std::uint32_t i = 0; i < n; ++i) c.mlp_hidden.push_back(static_cast<int>(io::read_pod<std::uint32_t>(is, "mlp width")));
    c.detection_threshold = io::read_pod<double>(is, "detection_threshold");
    return c;
}

struct RawCheckpoint {
    ModelConfig config;
    int n_sc = 0;
    int num_sg = 0;
    std::vector<std::pair<std::string, ad::Tensor>> params;
};

RawCheckpoint read_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint " + path);
    try {
        io::expect_magic(is, "NPCK");
        const auto version = io::read_pod<std::uint32_t>(is, "version");
        if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
        RawCheckpoint raw;
        raw.config = read_config(is);
        raw.n_sc = static_cast<int>(io::read_pod<std::uint32_t>(is, "n_sc"));
        raw.num_sg = static_cast<int>(io::read_pod<std::uint32_t>(is, "num_sg"));
        const auto count = io::read_pod<std::uint32_t>(is, "parameter count");
        if (count > 100000) throw io::FormatError("implausible parameter count");
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto len = io::read_pod<std::uint32_t>(is, "name length");
            if (len > 4096) throw io::FormatError("implausible name length");
            std::string name(len, '\0');
            is.read(name.data(), len);
            if (!is) throw io::FormatError("truncated parameter name");
            const auto rank = io::read_pod<std::uint32_t>(is, "rank");
            if (rank > 8) throw io::FormatError("implausible rank");
            std::vector<int> shape;
            for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(io::read_pod<std::uint32_t>(is, "dim")));
            const std::size_t n = ad::Tensor::count(shape);
            if (n > (1u << 28)) throw io::FormatError("implausible tensor size");
            std::vector<float> data(n);
            is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(float)));
            if (!is) throw io::FormatError("truncated data of " + name);
            raw.params.emplace_back(std::move(name), ad::Tensor(std::move(shape), std::move(data)));
        }
        if (is.peek() != std::char_traits<char>::eof()) throw io::FormatError("trailing bytes");
        return raw;
    } catch (const io::FormatError& e) {
        throw CorruptCheckpoint("corrupt checkpoint " + path + ": " + e.what());
    }
}

SynchModel materialize(RawCheckpoint raw, const std::string& path) {
    SynchModel model(raw.config, raw.n_sc, raw.num_sg, 0);
    auto& params = model.all_parameters();
    if (params.size() != raw.params.size()) throw ShapeMismatch("checkpoint " + path + " has the wrong parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != raw.params[i].first || params[i].value().shape() != raw.params[i].second.shape()) {
            throw ShapeMismatch("checkpoint " + path + ": parameter " + raw.params[i].first + " " +
                                ad::shape_string(raw.params[i].second.shape()) + " does not match " + params[i].name + " " +
                                ad::shape_string(params[i].value().shape()));
        }
        params[i].value() = std::move(raw.params[i].second);
    }
    return model;
}

}  // namespace

void save_checkpoint(const SynchModel& model, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write checkpoint " + path);
    io::write_magic(os, "NPCK");
    io::write_pod(os, kCheckpointVersion);
    write_config(os, model.config());
    io::write_pod(os, static_cast<std::uint32_t>(model.n_sc()));
    io::write_pod(os, static_cast<std::uint32_t>(model.num_sg()));
    const auto& params = model.all_parameters();
    io::write_pod(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        io::write_pod(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        io::write_pod(os, static_cast<std::uint32_t>(p.value().rank()));
        for (int d : p.value().shape()) io::write_pod(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(p.value().data()), static_cast<std::streamsize>(p.value().size() * sizeof(float)));
    }
    if (!os) throw CheckpointError("failed writing checkpoint " + path);
}

SynchModel load_checkpoint(const std::string& path) {
    RawCheckpoint raw = read_raw(path);
    try {
        raw.config.validate();
    } catch (const std::invalid_argument& e) {
        throw CorruptCheckpoint("corrupt checkpoint " + path + ": " + e.what());
    }
    return materialize(std::move(raw), path);
}

SynchModel load_checkpoint(const std::string& path, const ModelConfig& expected, int n_sc, int num_sg) {
    RawCheckpoint raw = read_raw(path);
    if (!(raw.config == expected) || raw.n_sc != n_sc || raw.num_sg != num_sg) {
        std::ostringstream os;
        os << "checkpoint " << path << " was saved with channels=" << raw.config.channels << " conv_blocks=" << raw.config.conv_blocks
           << " n_sc=" << raw.n_sc << " S=" << raw.num_sg << ", expected channels=" << expected.channels
           << " conv_blocks=" << expected.conv_blocks << " n_sc=" << n_sc << " S=" << num_sg;
        throw ShapeMismatch(os.str());
    }
    return materialize(std::move(raw), path);
}

}  // namespace nprach
