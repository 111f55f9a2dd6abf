#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "nprach/detection.hpp"
#include "nprach/synchronizer.hpp"

using namespace nprach;

namespace {

PreambleConfig tiny_band() {
    PreambleConfig c;
    c.n_fft = 16;
    c.n_sc = 4;
    c.max_users = 4;
    return c;
}

ModelConfig tiny_model() {
    ModelConfig m;
    m.channels = 4;
    m.conv_blocks = 2;
    m.mlp_hidden = {6};
    return m;
}

LabeledBatch random_batch(const PreambleConfig& c, int size, std::uint64_t seed, double p_active = 0.5) {
    const auto patterns = build_all_patterns(c);
    DropParams p;
    p.p_active = p_active;
    std::vector<FeatureTensor> f;
    std::vector<std::vector<UserTruth>> t;
    for (int i = 0; i < size; ++i) {
        const Drop d = simulate_drop(mix_seed(seed, static_cast<std::uint64_t>(i)), c, p, patterns);
        f.push_back(preprocess_grid(d.grid, patterns, c));
        t.push_back(d.truth);
    }
    return make_batch(f, t, c);
}

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST_CASE("output shapes and probability range") {
    PreambleConfig c;
    SynchModel m(ModelConfig{}, 48, 4, 1);
    const auto patterns = build_all_patterns(c);
    const auto batch = random_batch(c, 2, 1);
    const auto out = m.forward(batch.features, patterns);
    CHECK(out.prob->value.shape() == std::vector<int>{2, 48, 1});
    CHECK(out.toa->value.shape() == std::vector<int>{2, 48, 1});
    CHECK(out.cfo->value.shape() == std::vector<int>{2, 48, 1});
    for (std::size_t i = 0; i < out.prob->value.size(); ++i) {
        CHECK(out.prob->value[i] > 0.0f);
        CHECK(out.prob->value[i] < 1.0f);
    }
    CHECK_THROWS_AS(m.forward(ad::Tensor({1, 47, 4, 3}), patterns), std::invalid_argument);
}

TEST_CASE("permuting pattern identities permutes the outputs") {
    PreambleConfig c;
    SynchModel m(ModelConfig{}, 48, 4, 2);
    const auto patterns = build_all_patterns(c);
    std::vector<HoppingPattern> shuffled = patterns;
    Rng rng(3);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto batch = random_batch(c, 1, 2);
    const auto a = m.forward(batch.features, patterns);
    const auto b = m.forward(batch.features, shuffled);
    for (std::size_t j = 0; j < shuffled.size(); ++j) {
        const auto id = static_cast<std::size_t>(shuffled[j].pattern_id);
        CHECK(b.prob->value[j] == a.prob->value[id]);
        CHECK(b.toa->value[j] == a.toa->value[id]);
        CHECK(b.cfo->value[j] == a.cfo->value[id]);
    }
}

TEST_CASE("detection loss values") {
    const auto half = ad::constant(ad::Tensor({1, 2}, {0.5f, 0.5f}));
    CHECK(ad::scalar_value(loss_detection(half, ad::Tensor({1, 2}, {1.0f, 0.0f}))) == doctest::Approx(2.0 * std::log(2.0)));
    const auto sure = ad::constant(ad::Tensor({1, 2}, {1.0f, 0.0f}));
    CHECK(ad::scalar_value(loss_detection(sure, ad::Tensor({1, 2}, {1.0f, 0.0f}))) <= 2.0 * 1e-7 * 2 + 1e-12);
    CHECK(ad::scalar_value(loss_detection(sure, ad::Tensor({1, 2}, {0.0f, 1.0f}))) == doctest::Approx(2.0 * std::log(1e7)).epsilon(1e-6));
}

TEST_CASE("estimation loss values") {
    BatchTruth t{ad::Tensor({1, 2}, {1.0f, 0.0f}), ad::Tensor({1, 2}, {0.5f, 0.2f}), ad::Tensor({1, 2}, {0.1f, 0.3f}),
                 ad::Tensor({1, 2}, {10.0f, 0.0f})};
    const auto toa = ad::constant(ad::Tensor({1, 2}, {0.6f, 99.0f}));
    const auto cfo = ad::constant(ad::Tensor({1, 2}, {0.1f, -50.0f}));
    CHECK(ad::scalar_value(loss_estimation(toa, cfo, t)) == doctest::Approx(0.1).epsilon(1e-5));
    t.weight[0] = 20.0f;
    CHECK(ad::scalar_value(loss_estimation(toa, cfo, t)) == doctest::Approx(0.2).epsilon(1e-5));
}

TEST_CASE("batch truth units") {
    PreambleConfig c;
    std::vector<std::vector<UserTruth>> truth{{UserTruth{true, c.cp_duration() / 2.0, 1.0 / 256.0, 7.0}, UserTruth{false, 1e-6, 0.0, 3.0}}};
    const auto t = make_batch_truth(truth, c);
    CHECK(t.active[0] == 1.0f);
    CHECK(t.toa[0] == doctest::Approx(0.5));
    CHECK(t.cfo[0] == doctest::Approx(0.5));
    CHECK(t.weight[0] == doctest::Approx(7.0));
    CHECK(t.weight[1] == 0.0f);
}

TEST_CASE("detection and estimation gradients are disjoint") {
    PreambleConfig c = tiny_band();
    SynchModel m(tiny_model(), 4, 4, 4);
    const auto patterns = build_all_patterns(c);
    const auto batch = random_batch(c, 3, 4, 1.0);

    const auto out = m.forward(batch.features, patterns);
    ad::backward(loss_detection(out.prob, batch.truth.active));
    for (auto* p : m.estimation_parameters()) {
        for (std::size_t i = 0; i < p->var->grad.size(); ++i) CHECK(p->var->grad[i] == 0.0f);
    }
    bool any = false;
    for (auto* p : m.detection_parameters()) {
        for (std::size_t i = 0; i < p->var->grad.size(); ++i) any = any || p->var->grad[i] != 0.0f;
        p->zero_grad();
    }
    CHECK(any);

    const auto out2 = m.forward(batch.features, patterns);
    ad::backward(loss_estimation(out2.toa, out2.cfo, batch.truth));
    for (auto* p : m.detection_parameters()) {
        for (std::size_t i = 0; i < p->var->grad.size(); ++i) CHECK(p->var->grad[i] == 0.0f);
    }
}

TEST_CASE("full-model gradient check on a tiny configuration") {
    PreambleConfig c = tiny_band();
    const auto patterns = build_all_patterns(c);
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        SynchModel m(tiny_model(), 4, 4, seed);
        const auto batch = random_batch(c, 2, 50 + seed);
        std::vector<ad::Var> inputs;
        for (auto* p : m.parameters()) inputs.push_back(p->var);
        auto loss = [&] {
            const auto out = m.forward(batch.features, patterns);
            return ad::add(loss_detection(out.prob, batch.truth.active), loss_estimation(out.toa, out.cfo, batch.truth));
        };
        ad::GradCheckOptions opt;
        opt.tol = 1e-2;
        opt.skip_kinks = true;
        opt.normwise = true;
        const auto r = ad::grad_check(loss, inputs, opt);
        INFO(r.worst);
        CHECK(r.passed);
    }
}

TEST_CASE("overfitting a fixed batch lowers the loss") {
    PreambleConfig c = tiny_band();
    const auto patterns = build_all_patterns(c);
    SynchModel m(tiny_model(), 4, 4, 9);
    ad::Adam opt(m.parameters(), ad::AdamConfig{1e-2});
    const auto batch = random_batch(c, 8, 9);
    const double first = train_step(m, opt, batch, patterns).total;
    double last = first;
    for (int s = 1; s < 200; ++s) last = train_step(m, opt, batch, patterns).total;
    CHECK(last < first);
}

TEST_CASE("training replay and zero steps") {
    PreambleConfig c = tiny_band();
    TrainConfig tc;
    tc.batch = 4;
    tc.steps = 5;
    tc.seed = 13;
    DropParams ch;
    SynchModel a(tiny_model(), 4, 4, 1);
    SynchModel b(tiny_model(), 4, 4, 1);
    const auto ra = train(a, tc, c, ch);
    const auto rb = train(b, tc, c, ch);
    REQUIRE(ra.trace.size() == 5);
    for (std::size_t i = 0; i < ra.trace.size(); ++i) {
        CHECK(ra.trace[i].step == static_cast<int>(i + 1));
        CHECK(ra.trace[i].losses.total == rb.trace[i].losses.total);
    }
    for (std::size_t i = 0; i < a.all_parameters().size(); ++i) CHECK(a.all_parameters()[i].value().values() == b.all_parameters()[i].value().values());

    SynchModel z(tiny_model(), 4, 4, 1);
    SynchModel ref = z.clone();
    tc.steps = 0;
    CHECK(train(z, tc, c, ch).trace.empty());
    for (std::size_t i = 0; i < z.all_parameters().size(); ++i) CHECK(z.all_parameters()[i].value().values() == ref.all_parameters()[i].value().values());
}

TEST_CASE("non-finite loss aborts the step") {
    PreambleConfig c = tiny_band();
    const auto patterns = build_all_patterns(c);
    SynchModel m(tiny_model(), 4, 4, 2);
    ad::Adam opt(m.parameters());
    auto batch = random_batch(c, 2, 2);
    batch.features[0] = std::nanf("");
    CHECK_THROWS_AS(train_step(m, opt, batch, patterns), std::runtime_error);
}

TEST_CASE("thresholding and unit conversion") {
    DetectionReport r;
    r.entries = {PatternDetection{0, 0.7}, PatternDetection{1, 0.5}, PatternDetection{2, 0.49}};
    apply_threshold(r, 0.5);
    CHECK(r.entries[0].detected);
    CHECK(r.entries[1].detected);
    CHECK_FALSE(r.entries[2].detected);

    // A head output of 1.0 in CP units is one CP duration.
    PreambleConfig c;
    CHECK(1.0 * c.cp_duration() == doctest::Approx(66.67e-6).epsilon(1e-3));
}

TEST_CASE("inference converts head units") {
    PreambleConfig c;
    const auto patterns = build_all_patterns(c);
    SynchModel m(ModelConfig{}, 48, 4, 5);
    DropParams p;
    const Drop d = simulate_drop(5, c, p, patterns);
    const auto report = infer(m, d.grid, patterns, c);
    const auto out = m.forward(stack_features(std::vector<FeatureTensor>{preprocess_grid(d.grid, patterns, c)}), patterns);
    REQUIRE(report.entries.size() == 48);
    for (std::size_t k = 0; k < 48; ++k) {
        CHECK(report.entries[k].score == out.prob->value[k]);
        CHECK(report.entries[k].toa_hat == doctest::Approx(out.toa->value[k] * c.cp_duration()));
        CHECK(report.entries[k].cfo_hat == doctest::Approx(out.cfo->value[k] / 128.0));
        CHECK(report.entries[k].detected == (out.prob->value[k] >= 0.5f));
    }
}

TEST_CASE("raising the threshold trades false positives for misses") {
    PreambleConfig c;
    const auto patterns = build_all_patterns(c);
    SynchModel m(ModelConfig{}, 48, 4, 6);
    DropParams p;
    std::vector<Drop> drops;
    for (int i = 0; i < 6; ++i) drops.push_back(simulate_drop(100 + i, c, p, patterns));
    long prev_fp = -1, prev_miss = -1;
    for (double th : {0.99, 0.7, 0.5, 0.3, 0.01}) {
        long fp = 0, miss = 0;
        for (const auto& d : drops) {
            auto r = infer(m, d.grid, patterns, c);
            apply_threshold(r, th);
            for (std::size_t k = 0; k < 48; ++k) {
                fp += !d.truth[k].active && r.entries[k].detected;
                miss += d.truth[k].active && !r.entries[k].detected;
            }
        }
        if (prev_fp >= 0) {
            CHECK(fp >= prev_fp);
            CHECK(miss <= prev_miss);
        }
        prev_fp = fp;
        prev_miss = miss;
    }
}

TEST_CASE("zeroing the log-power weights makes detection scale-invariant") {
    PreambleConfig c;
    const auto patterns = build_all_patterns(c);
    SynchModel m(ModelConfig{}, 48, 4, 7);
    for (auto& p : m.all_parameters()) {
        if (p.name.ends_with(".trunk.in.w")) {
            for (int ch = 0; ch < 128; ++ch) p.value()[static_cast<std::size_t>(2 * 128 + ch)] = 0.0f;
        }
    }
    DropParams dp;
    Drop d = simulate_drop(7, c, dp, patterns);
    const auto a = infer(m, d.grid, patterns, c);
    for (auto& v : d.grid.y.data) v *= 37.0;
    const auto b = infer(m, d.grid, patterns, c);
    for (std::size_t k = 0; k < 48; ++k) CHECK(a.entries[k].score == doctest::Approx(b.entries[k].score).epsilon(1e-4));
}

TEST_CASE("checkpoint round trip and errors") {
    PreambleConfig c;
    const auto patterns = build_all_patterns(c);
    SynchModel m(ModelConfig{}, 48, 4, 8);
    const std::string path = temp_path("nprach_ckpt_test.bin");
    save_checkpoint(m, path);
    const SynchModel r = load_checkpoint(path, ModelConfig{}, 48, 4);
    const auto batch = random_batch(c, 1, 8);
    const auto a = m.forward(batch.features, patterns);
    const auto b = r.forward(batch.features, patterns);
    CHECK(a.prob->value.values() == b.prob->value.values());
    CHECK(a.toa->value.values() == b.toa->value.values());
    CHECK(a.cfo->value.values() == b.cfo->value.values());

    ModelConfig wide;
    wide.channels = 64;
    CHECK_THROWS_AS(load_checkpoint(path, wide, 48, 4), ShapeMismatch);
    CHECK_THROWS_AS(load_checkpoint(path, ModelConfig{}, 24, 4), ShapeMismatch);

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpoint);
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "not a checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpoint);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
}
