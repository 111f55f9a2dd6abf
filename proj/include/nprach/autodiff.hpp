#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nprach/preamble_config.hpp"

// Minimal reverse-mode engine: a tape of shared nodes, one closure per
// operator, and only the operators the synchronizer uses. Values are
// float32; reductions accumulate in double.
namespace nprach::ad {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, float fill = 0.0f);
    Tensor(std::vector<int> shape, std::vector<float> data);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int axis) const { return shape_[static_cast<std::size_t>(axis < 0 ? rank() + axis : axis)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    void fill(float v);
    void reshape(std::vector<int> shape);

    static std::size_t count(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<float> data_;
};

std::string shape_string(const std::vector<int>& shape);

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // empty until some gradient reaches this node
    bool requires_grad = false;
    double exact = std::numeric_limits<double>::quiet_NaN();  // double-precision value of scalar reductions
    std::vector<Var> parents;
    std::function<void(Node&)> backward;

    /// Gradient buffer, zero-initialized on first use.
    Tensor& grad_buffer();
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);

/// Scalar value of a one-element node, in double when the producing op kept one.
double scalar_value(const Var& v);

/// Accumulates d(root)/d(node) into every reachable node with requires_grad.
void backward(const Var& root);

struct Parameter {
    std::string name;
    Var var;

    Parameter() = default;
    Parameter(std::string n, Tensor init, bool trainable = true) : name(std::move(n)), var(leaf(std::move(init), trainable)) {}

    Tensor& value() { return var->value; }
    const Tensor& value() const { return var->value; }
    bool trainable() const { return var->requires_grad; }
    void zero_grad() { var->grad = Tensor(); }
};

// ---- operators -------------------------------------------------------------

/// Affine map over the last axis: x[..., in] * w[in, out] + b[out].
Var dense(const Var& x, const Var& w, const Var& b);

/// Per-channel convolution along axis 1 of x[B, L, M, C] (or axis 0 of
/// x[L, C]) with kernel[k, C], k odd, zero padding, same length.
Var depthwise_conv1d(const Var& x, const Var& kernel);

/// depthwise_conv1d followed by a pointwise dense(pw[C_in, C_out], b[C_out]).
Var depthwise_separable_conv1d(const Var& x, const Var& dw, const Var& pw, const Var& b);

enum class Elementwise { Relu, Sigmoid, AddSkip };

Var relu(const Var& x);
/// Output clamped into the open interval (0, 1) in float32.
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var elementwise(Elementwise kind, const Var& x, const Var& y = nullptr);

/// out[b, k, m, :] = x[b, phi_k[m], m, :] for x[B, n_sc, S, C].
Var gather_patterns(const Var& x, std::span<const HoppingPattern> patterns);

/// Single-pattern form on x[n_sc, S, C]: out[m, :] = x[phi[m], m, :].
Var gather_rows(const Var& x, const HoppingPattern& pattern);

Var reshape(const Var& x, std::vector<int> shape);

/// -(1/B) sum [t ln p + (1-t) ln(1-p)] with p clamped to [clamp, 1-clamp];
/// B is the leading dimension. The clamp passes gradients straight through.
Var binary_cross_entropy(const Var& probs, const Tensor& targets, double clamp = 1e-7);

/// (1/B) sum w (t - p)^2; B is the leading dimension.
Var weighted_squared_error(const Var& pred, const Tensor& target, const Tensor& weights);

/// sum w x, a scalar probe for gradient checks.
Var weighted_sum(const Var& x, const Tensor& weights);

// ---- optimizer ---------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-7;
};

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig config = {});

    /// One bias-corrected update from the accumulated gradients, which are then cleared.
    void step();
    std::int64_t step_count() const { return steps_; }
    const AdamConfig& config() const { return config_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> first_;
    std::vector<Tensor> second_;
    AdamConfig config_;
    std::int64_t steps_ = 0;
};

// ---- finite differences -------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose perturbation straddles a kink
    double max_coord_error = 0.0;  // coordinate-wise error, reported even when `normwise` is set
    bool passed = false;
    std::string worst;
};

struct GradCheckOptions {
    double h = 1e-3;
    double tol = 1e-3;
    // The error of one coordinate is |a - n| / max(|a|, |n|, floor) where
    // floor = max(floor_fraction * largest |gradient| of that input, abs_floor).
    double floor_fraction = 0.1;
    double abs_floor = 1e-4;
    std::size_t max_coords_per_input = std::numeric_limits<std::size_t>::max();
    // Skip a coordinate when its forward and backward one-sided differences
    // disagree by more than tol (relative, same floor): the loss is not
    // differentiable inside [x - h, x + h] there.
    bool skip_kinks = false;
    // Judge each input tensor by ||a - n|| / max(||a||, ||n||) instead of
    // coordinate by coordinate. Float32 rounding noise in a large loss
    // swamps the smallest individual gradients.
    bool normwise = false;
};

/// Compares reverse-mode gradients of loss_fn() w.r.t. `inputs` against
/// central differences. loss_fn must rebuild the graph on every call.
GradCheckReport grad_check(const std::function<Var()>& loss_fn, const std::vector<Var>& inputs, const GradCheckOptions& options);

}  // namespace nprach::ad
