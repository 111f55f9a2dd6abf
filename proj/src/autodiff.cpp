#include "nprach/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace nprach::ad {
namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
    throw std::invalid_argument(op + ": shape mismatch (" + detail + ")");
}

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Var& p) { return p && p->requires_grad; });
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward = std::move(bw);
    }
    return n;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

std::size_t Tensor::count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape, float fill) : shape_(std::move(shape)), data_(count(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw std::invalid_argument("tensor data length does not match shape " + shape_string(shape_));
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::reshape(std::vector<int> shape) {
    if (count(shape) != data_.size()) throw std::invalid_argument("reshape to " + shape_string(shape) + " changes element count");
    shape_ = std::move(shape);
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor& Node::grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor(value.shape(), 0.0f);
    return grad;
}

Var constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return n;
}

Var leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

double scalar_value(const Var& v) {
    if (v->value.size() != 1) throw std::invalid_argument("scalar_value: node is not a scalar");
    return std::isnan(v->exact) ? static_cast<double>(v->value[0]) : v->exact;
}

void backward(const Var& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be a scalar");
    if (!root->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
    }
}

// ---- operators -------------------------------------------------------------

Var dense(const Var& x, const Var& w, const Var& b) {
    const auto& xs = x->value.shape();
    if (xs.empty() || w->value.rank() != 2 || b->value.rank() != 1) shape_error("dense", "rank");
    const int in = xs.back();
    const int out = w->value.dim(1);
    if (w->value.dim(0) != in || b->value.dim(0) != out) {
        shape_error("dense", "x " + shape_string(xs) + " w " + shape_string(w->value.shape()) + " b " + shape_string(b->value.shape()));
    }
    const auto rows = static_cast<Eigen::Index>(x->value.size() / static_cast<std::size_t>(in));
    std::vector<int> ys = xs;
    ys.back() = out;
    Tensor y(ys);
    MapR ym(y.data(), rows, out);
    ym.noalias() = CMapR(x->value.data(), rows, in) * CMapR(w->value.data(), in, out);
    ym.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b->value.data(), out);

    return make_node(std::move(y), {x, w, b}, [x, w, b, rows, in, out](Node& self) {
        CMapR dy(self.grad.data(), rows, out);
        if (x->requires_grad) MapR(x->grad_buffer().data(), rows, in).noalias() += dy * CMapR(w->value.data(), in, out).transpose();
        if (w->requires_grad) MapR(w->grad_buffer().data(), in, out).noalias() += CMapR(x->value.data(), rows, in).transpose() * dy;
        if (b->requires_grad) {
            std::vector<double> acc(static_cast<std::size_t>(out), 0.0);
            for (Eigen::Index r = 0; r < rows; ++r) {
                const float* row = self.grad.data() + r * out;
                for (int c = 0; c < out; ++c) acc[static_cast<std::size_t>(c)] += row[c];
            }
            float* db = b->grad_buffer().data();
            for (int c = 0; c < out; ++c) db[c] += static_cast<float>(acc[static_cast<std::size_t>(c)]);
        }
    });
}

Var depthwise_conv1d(const Var& x, const Var& kernel) {
    const auto& xs = x->value.shape();
    int batch = 1, len = 0, inner = 1, ch = 0;
    if (xs.size() == 2) {
        len = xs[0];
        ch = xs[1];
    } else if (xs.size() == 4) {
        batch = xs[0];
        len = xs[1];
        inner = xs[2];
        ch = xs[3];
    } else {
        shape_error("depthwise_conv1d", "x must be [L, C] or [B, L, M, C], got " + shape_string(xs));
    }
    if (kernel->value.rank() != 2 || kernel->value.dim(1) != ch || kernel->value.dim(0) % 2 == 0) {
        shape_error("depthwise_conv1d", "kernel " + shape_string(kernel->value.shape()) + " for " + std::to_string(ch) + " channels");
    }
    const int k = kernel->value.dim(0);
    const int pad = k / 2;
    const std::size_t row = static_cast<std::size_t>(inner) * static_cast<std::size_t>(ch);  // one position along L

    Tensor y(xs);
    const float* xd = x->value.data();
    const float* kd = kernel->value.data();
    float* yd = y.data();
    for (int b = 0; b < batch; ++b) {
        for (int l = 0; l < len; ++l) {
            float* yrow = yd + (static_cast<std::size_t>(b) * len + l) * row;
            for (int t = 0; t < k; ++t) {
                const int src = l + t - pad;
                if (src < 0 || src >= len) continue;
                const float* xrow = xd + (static_cast<std::size_t>(b) * len + src) * row;
                const float* kt = kd + static_cast<std::size_t>(t) * ch;
                for (int m = 0; m < inner; ++m) {
                    const std::size_t off = static_cast<std::size_t>(m) * ch;
                    for (int c = 0; c < ch; ++c) yrow[off + c] += kt[c] * xrow[off + c];
                }
            }
        }
    }

    return make_node(std::move(y), {x, kernel}, [x, kernel, batch, len, inner, ch, k, pad, row](Node& self) {
        const float* dy = self.grad.data();
        const float* xd = x->value.data();
        const float* kd = kernel->value.data();
        float* dx = x->requires_grad ? x->grad_buffer().data() : nullptr;
        std::vector<double> dk(kernel->requires_grad ? static_cast<std::size_t>(k) * ch : 0, 0.0);
        std::vector<float> partial(static_cast<std::size_t>(ch));
        for (int b = 0; b < batch; ++b) {
            for (int l = 0; l < len; ++l) {
                const float* dyrow = dy + (static_cast<std::size_t>(b) * len + l) * row;
                for (int t = 0; t < k; ++t) {
                    const int src = l + t - pad;
                    if (src < 0 || src >= len) continue;
                    const std::size_t src_off = (static_cast<std::size_t>(b) * len + src) * row;
                    const float* kt = kd + static_cast<std::size_t>(t) * ch;
                    if (dx) {
                        float* dxrow = dx + src_off;
                        for (int m = 0; m < inner; ++m) {
                            const std::size_t off = static_cast<std::size_t>(m) * ch;
                            for (int c = 0; c < ch; ++c) dxrow[off + c] += kt[c] * dyrow[off + c];
                        }
                    }
                    if (!dk.empty()) {
                        const float* xrow = xd + src_off;
                        std::fill(partial.begin(), partial.end(), 0.0f);
                        for (int m = 0; m < inner; ++m) {
                            const std::size_t off = static_cast<std::size_t>(m) * ch;
                            for (int c = 0; c < ch; ++c) partial[static_cast<std::size_t>(c)] += xrow[off + c] * dyrow[off + c];
                        }
                        double* dkt = dk.data() + static_cast<std::size_t>(t) * ch;
                        for (int c = 0; c < ch; ++c) dkt[c] += partial[static_cast<std::size_t>(c)];
                    }
                }
            }
        }
        if (!dk.empty()) {
            float* g = kernel->grad_buffer().data();
            for (std::size_t i = 0; i < dk.size(); ++i) g[i] += static_cast<float>(dk[i]);
        }
    });
}

Var depthwise_separable_conv1d(const Var& x, const Var& dw, const Var& pw, const Var& b) {
    return dense(depthwise_conv1d(x, dw), pw, b);
}

Var relu(const Var& x) {
    Tensor y(x->value.shape());
    const float* xd = x->value.data();
    float* yd = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) yd[i] = xd[i] < 0.0f ? 0.0f : xd[i];  // NaN passes through
    return make_node(std::move(y), {x}, [x](Node& self) {
        float* dx = x->grad_buffer().data();
        const float* xd = x->value.data();
        const float* dy = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            if (xd[i] > 0.0f) dx[i] += dy[i];
        }
    });
}

Var sigmoid(const Var& x) {
    constexpr float lo = std::numeric_limits<float>::min();
    const float hi = std::nextafter(1.0f, 0.0f);
    Tensor y(x->value.shape());
    const float* xd = x->value.data();
    float* yd = y.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(xd[i])));
        yd[i] = std::clamp(static_cast<float>(s), lo, hi);
    }
    return make_node(std::move(y), {x}, [x](Node& self) {
        float* dx = x->grad_buffer().data();
        const float* yd = self.value.data();
        const float* dy = self.grad.data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += dy[i] * yd[i] * (1.0f - yd[i]);
    });
}

Var add(const Var& a, const Var& b) {
    if (a->value.shape() != b->value.shape()) {
        shape_error("add", shape_string(a->value.shape()) + " vs " + shape_string(b->value.shape()));
    }
    Tensor y(a->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = a->value[i] + b->value[i];
    auto node = make_node(std::move(y), {a, b}, [a, b](Node& self) {
        for (const Var* v : {&a, &b}) {
            if (!(*v)->requires_grad) continue;
            float* g = (*v)->grad_buffer().data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
    if (node->value.size() == 1) node->exact = scalar_value(a) + scalar_value(b);
    return node;
}

Var elementwise(Elementwise kind, const Var& x, const Var& y) {
    switch (kind) {
        case Elementwise::Relu: return relu(x);
        case Elementwise::Sigmoid: return sigmoid(x);
        case Elementwise::AddSkip:
            if (!y) throw std::invalid_argument("add-skip needs two operands");
            return add(x, y);
    }
    throw std::invalid_argument("unknown elementwise kind");
}

Var gather_patterns(const Var& x, std::span<const HoppingPattern> patterns) {
    const auto& xs = x->value.shape();
    if (xs.size() != 4) shape_error("gather_patterns", "x must be [B, n_sc, S, C], got " + shape_string(xs));
    const int batch = xs[0], n_sc = xs[1], sgs = xs[2], ch = xs[3];
    const int np = static_cast<int>(patterns.size());
    for (const auto& p : patterns) {
        if (static_cast<int>(p.sc_index.size()) != sgs) shape_error("gather_patterns", "pattern length != S");
        for (int sc : p.sc_index) {
            if (sc < 0 || sc >= n_sc) throw std::out_of_range("gather_patterns: subcarrier index " + std::to_string(sc) + " out of range");
        }
    }
    // Flat source offsets (within one batch example) of every gathered row.
    std::vector<std::size_t> src;
    src.reserve(static_cast<std::size_t>(np) * sgs);
    for (const auto& p : patterns) {
        for (int m = 0; m < sgs; ++m) src.push_back((static_cast<std::size_t>(p.sc_index[static_cast<std::size_t>(m)]) * sgs + m) * ch);
    }
    const std::size_t in_ex = static_cast<std::size_t>(n_sc) * sgs * ch;
    const std::size_t out_ex = static_cast<std::size_t>(np) * sgs * ch;
    Tensor y({batch, np, sgs, ch});
    for (int b = 0; b < batch; ++b) {
        for (std::size_t r = 0; r < src.size(); ++r) {
            std::copy_n(x->value.data() + b * in_ex + src[r], ch, y.data() + b * out_ex + r * ch);
        }
    }
    return make_node(std::move(y), {x}, [x, src = std::move(src), batch, in_ex, out_ex, ch](Node& self) {
        float* dx = x->grad_buffer().data();
        for (int b = 0; b < batch; ++b) {
            for (std::size_t r = 0; r < src.size(); ++r) {
                const float* g = self.grad.data() + b * out_ex + r * ch;
                float* d = dx + b * in_ex + src[r];
                for (int c = 0; c < ch; ++c) d[c] += g[c];
            }
        }
    });
}

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor y = x->value;
    y.reshape(std::move(shape));
    return make_node(std::move(y), {x}, [x](Node& self) {
        float* dx = x->grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i];
    });
}

Var gather_rows(const Var& x, const HoppingPattern& pattern) {
    const auto& xs = x->value.shape();
    if (xs.size() != 3) shape_error("gather_rows", "x must be [n_sc, S, C], got " + shape_string(xs));
    const auto g = gather_patterns(reshape(x, {1, xs[0], xs[1], xs[2]}), std::span<const HoppingPattern>(&pattern, 1));
    return reshape(g, {xs[1], xs[2]});
}

Var binary_cross_entropy(const Var& probs, const Tensor& targets, double clamp) {
    if (probs->value.size() != targets.size() || probs->value.rank() < 1) {
        shape_error("binary_cross_entropy", shape_string(probs->value.shape()) + " vs " + shape_string(targets.shape()));
    }
    const double batch = probs->value.dim(0);
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double p = std::clamp(static_cast<double>(probs->value[i]), clamp, 1.0 - clamp);
        const double t = targets[i];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    const double loss = acc / batch;
    auto node = make_node(Tensor({1}, {static_cast<float>(loss)}), {probs}, [probs, targets, clamp, batch](Node& self) {
        const double g = self.grad[0] / batch;
        float* dp = probs->grad_buffer().data();
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const double p = std::clamp(static_cast<double>(probs->value[i]), clamp, 1.0 - clamp);
            const double t = targets[i];
            dp[i] += static_cast<float>(-g * (t / p - (1.0 - t) / (1.0 - p)));
        }
    });
    node->exact = loss;
    return node;
}

Var weighted_squared_error(const Var& pred, const Tensor& target, const Tensor& weights) {
    if (pred->value.size() != target.size() || target.size() != weights.size() || pred->value.rank() < 1) {
        shape_error("weighted_squared_error", shape_string(pred->value.shape()) + " vs " + shape_string(target.shape()));
    }
    const double batch = pred->value.dim(0);
    double acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double e = static_cast<double>(target[i]) - pred->value[i];
        acc += static_cast<double>(weights[i]) * e * e;
    }
    const double loss = acc / batch;
    auto node = make_node(Tensor({1}, {static_cast<float>(loss)}), {pred}, [pred, target, weights, batch](Node& self) {
        const double g = self.grad[0] / batch;
        float* dp = pred->grad_buffer().data();
        for (std::size_t i = 0; i < target.size(); ++i) {
            const double e = static_cast<double>(target[i]) - pred->value[i];
            dp[i] += static_cast<float>(-2.0 * g * weights[i] * e);
        }
    });
    node->exact = loss;
    return node;
}

Var weighted_sum(const Var& x, const Tensor& weights) {
    if (x->value.size() != weights.size()) shape_error("weighted_sum", shape_string(x->value.shape()) + " vs " + shape_string(weights.shape()));
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) acc += static_cast<double>(weights[i]) * x->value[i];
    auto node = make_node(Tensor({1}, {static_cast<float>(acc)}), {x}, [x, weights](Node& self) {
        float* dx = x->grad_buffer().data();
        for (std::size_t i = 0; i < weights.size(); ++i) dx[i] += self.grad[0] * weights[i];
    });
    node->exact = acc;
    return node;
}

// ---- Adam --------------------------------------------------------------------

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const Parameter* p : params_) {
        first_.emplace_back(p->value().shape(), 0.0f);
        second_.emplace_back(p->value().shape(), 0.0f);
    }
}

void Adam::step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<float>(config_.beta1);
    const auto b2 = static_cast<float>(config_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (p.trainable() && p.var->grad.size() == p.value().size()) {
            float* w = p.value().data();
            const float* g = p.var->grad.data();
            float* m = first_[k].data();
            float* v = second_[k].data();
            for (std::size_t i = 0; i < p.value().size(); ++i) {
                m[i] = b1 * m[i] + (1.0f - b1) * g[i];
                v[i] = b2 * v[i] + (1.0f - b2) * g[i] * g[i];
                const double m_hat = m[i] / bc1;
                const double v_hat = v[i] / bc2;
                w[i] -= static_cast<float>(config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps));
            }
        }
        p.zero_grad();
    }
}

// ---- grad_check ----------------------------------------------------------------

GradCheckReport grad_check(const std::function<Var()>& loss_fn, const std::vector<Var>& inputs, const GradCheckOptions& options) {
    for (const Var& in : inputs) in->grad = Tensor();
    {
        const Var loss = loss_fn();
        backward(loss);
    }
    std::vector<Tensor> analytic;
    analytic.reserve(inputs.size());
    for (const Var& in : inputs) {
        analytic.push_back(in->grad.size() == in->value.size() ? in->grad : Tensor(in->value.shape(), 0.0f));
        in->grad = Tensor();
    }

    const double base = options.skip_kinks ? scalar_value(loss_fn()) : 0.0;
    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& value = inputs[k]->value;
        const std::size_t n = value.size();
        const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, options.max_coords_per_input));
        struct Sample {
            std::size_t i;
            double central, forward, backward;
        };
        std::vector<Sample> numeric;
        double scale = 0.0;
        for (std::size_t i = 0; i < n; i += stride) {
            const float saved = value[i];
            value[i] = saved + static_cast<float>(options.h);
            const double plus = scalar_value(loss_fn());
            value[i] = saved - static_cast<float>(options.h);
            const double minus = scalar_value(loss_fn());
            value[i] = saved;
            // Use the actually representable step.
            const double up = static_cast<double>(saved + static_cast<float>(options.h)) - static_cast<double>(saved);
            const double down = static_cast<double>(saved) - static_cast<double>(saved - static_cast<float>(options.h));
            const double d = (plus - minus) / (up + down);
            numeric.push_back({i, d, (plus - base) / up, (base - minus) / down});
            scale = std::max({scale, std::abs(d), std::abs(static_cast<double>(analytic[k][i]))});
        }
        const double floor = std::max(options.floor_fraction * scale, options.abs_floor);
        double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
        for (const auto& [i, d, fwd, bwd] : numeric) {
            if (options.skip_kinks && std::abs(fwd - bwd) / std::max({std::abs(fwd), std::abs(bwd), floor}) > options.tol) {
                ++report.skipped;
                continue;
            }
            const double a = analytic[k][i];
            const double err = std::abs(a - d) / std::max({std::abs(a), std::abs(d), floor});
            ++report.checked;
            diff_sq += (a - d) * (a - d);
            a_sq += a * a;
            n_sq += d * d;
            report.max_coord_error = std::max(report.max_coord_error, err);
            if (!options.normwise && err > report.max_rel_error) {
                report.max_rel_error = err;
                std::ostringstream os;
                os << "input " << k << " coord " << i << ": analytic " << a << " numeric " << d;
                report.worst = os.str();
            }
        }
        if (options.normwise) {
            const double denom = std::max({std::sqrt(a_sq), std::sqrt(n_sq), options.abs_floor});
            const double err = std::sqrt(diff_sq) / denom;
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                std::ostringstream os;
                os << "input " << k << ": |analytic - numeric| " << std::sqrt(diff_sq) << " vs |analytic| " << std::sqrt(a_sq);
                report.worst = os.str();
            }
        }
    }
    report.passed = report.max_rel_error < options.tol;
    return report;
}

}  // namespace nprach::ad
