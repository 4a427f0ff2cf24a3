// Copyright 2026 The vqclab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
/**
 * @file
 * A small reverse-mode tape with exactly the layers the hybrid models need,
 * plus AdamW with a milestone learning-rate schedule.
 *
 * Layout conventions: dense activations are [batch, features]; sequence
 * activations are [batch, channels, length]; all row-major.
 */
#pragma once

#include "dataset.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vqclab {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s, double fill = 0.0)
        : shape(std::move(s)), data(count(shape), fill) {}
    Tensor(std::vector<std::size_t> s, std::vector<double> values)
        : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != count(shape)) {
            throw std::invalid_argument("tensor data does not match shape " +
                                        shape_string(shape));
        }
    }

    static std::size_t count(const std::vector<std::size_t> &s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1},
                               std::multiplies<>());
    }

    static std::string shape_string(const std::vector<std::size_t> &s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            out += (i ? ", " : "") + std::to_string(s[i]);
        }
        return out + "]";
    }

    [[nodiscard]] std::size_t numel() const { return data.size(); }
    [[nodiscard]] std::size_t rank() const { return shape.size(); }
    double &operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

/// Records one forward pass; `backward` replays it in reverse.
class Tape {
  public:
    struct Var {
        std::size_t id = 0;
    };
    using BackwardFn = std::function<void(Tape &, std::size_t self)>;

    Var constant(Tensor value) { return push(std::move(value), nullptr, {}); }

    /// Gradients reaching this node are added to `p.grad` by backward().
    Var parameter(Parameter &p) {
        auto v = push(p.value, nullptr, {});
        nodes_[v.id].param = &p;
        return v;
    }

    Var record(Tensor value, BackwardFn backward) {
        return push(std::move(value), std::move(backward), {});
    }

    [[nodiscard]] const Tensor &value(Var v) const { return nodes_[v.id].value; }
    [[nodiscard]] const Tensor &value(std::size_t id) const {
        return nodes_[id].value;
    }

    /// Gradient buffer of a node, zero-initialized on first use.
    Tensor &grad(std::size_t id) {
        auto &n = nodes_[id];
        if (n.grad.shape.empty() && n.grad.data.empty()) {
            n.grad = Tensor(n.value.shape);
        }
        return n.grad;
    }
    Tensor &grad(Var v) { return grad(v.id); }

    [[nodiscard]] bool has_grad(std::size_t id) const {
        return !nodes_[id].grad.data.empty();
    }

    /// Seeds d(loss)/d(loss) = 1 for a scalar node and sweeps backwards.
    void backward(Var loss) {
        if (nodes_[loss.id].value.numel() != 1) {
            throw std::invalid_argument("backward() needs a scalar loss, got " +
                                        Tensor::shape_string(
                                            nodes_[loss.id].value.shape));
        }
        grad(loss.id).data[0] = 1.0;
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            auto &n = nodes_[i];
            if (!has_grad(i)) {
                continue;
            }
            if (n.backward) {
                n.backward(*this, i);
            }
            if (n.param != nullptr) {
                for (std::size_t k = 0; k < n.grad.numel(); ++k) {
                    n.param->grad.data[k] += n.grad.data[k];
                }
            }
        }
    }

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        Parameter *param = nullptr;
    };

    Var push(Tensor value, BackwardFn backward, Tensor grad) {
        nodes_.push_back({std::move(value), std::move(grad),
                          std::move(backward), nullptr});
        return {nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

using Var = Tape::Var;

namespace nn {

[[noreturn]] inline void shape_error(const std::string &op,
                                     const std::vector<std::size_t> &a,
                                     const std::vector<std::size_t> &b) {
    throw std::invalid_argument(op + ": incompatible shapes " +
                                Tensor::shape_string(a) + " and " +
                                Tensor::shape_string(b));
}

inline double sigmoid_scalar(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// x[B, in] W[out, in]^T + b[out] -> [B, out].
inline Var linear(Tape &t, Var x, Var weight, Var bias) {
    const auto &X = t.value(x);
    const auto &W = t.value(weight);
    const auto &b = t.value(bias);
    if (X.rank() != 2 || W.rank() != 2 || X.shape[1] != W.shape[1]) {
        shape_error("linear", X.shape, W.shape);
    }
    if (b.rank() != 1 || b.shape[0] != W.shape[0]) {
        shape_error("linear bias", W.shape, b.shape);
    }
    const std::size_t B = X.shape[0], in = W.shape[1], out = W.shape[0];
    Tensor Y({B, out});
    for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t o = 0; o < out; ++o) {
            double s = b[o];
            for (std::size_t i = 0; i < in; ++i) {
                s += X[n * in + i] * W[o * in + i];
            }
            Y[n * out + o] = s;
        }
    }
    return t.record(std::move(Y), [x, weight, bias, B, in, out](Tape &tp,
                                                                std::size_t self) {
        const auto &G = tp.grad(self);
        const auto &Xv = tp.value(x);
        const auto &Wv = tp.value(weight);
        auto &dX = tp.grad(x);
        auto &dW = tp.grad(weight);
        auto &db = tp.grad(bias);
        for (std::size_t n = 0; n < B; ++n) {
            for (std::size_t o = 0; o < out; ++o) {
                const double g = G[n * out + o];
                db[o] += g;
                for (std::size_t i = 0; i < in; ++i) {
                    dX[n * in + i] += g * Wv[o * in + i];
                    dW[o * in + i] += g * Xv[n * in + i];
                }
            }
        }
    });
}

/// Elementwise map with derivative expressed through input and output.
template <class F, class DF>
Var elementwise(Tape &t, Var x, F f, DF df) {
    const auto &X = t.value(x);
    Tensor Y(X.shape);
    for (std::size_t i = 0; i < X.numel(); ++i) {
        Y[i] = f(X[i]);
    }
    return t.record(std::move(Y), [x, df](Tape &tp, std::size_t self) {
        const auto &G = tp.grad(self);
        const auto &Xv = tp.value(x);
        const auto &Yv = tp.value(self);
        auto &dX = tp.grad(x);
        for (std::size_t i = 0; i < Xv.numel(); ++i) {
            dX[i] += G[i] * df(Xv[i], Yv[i]);
        }
    });
}

inline Var sigmoid(Tape &t, Var x) {
    return elementwise(
        t, x, [](double v) { return sigmoid_scalar(v); },
        [](double, double y) { return y * (1.0 - y); });
}

inline Var leaky_relu(Tape &t, Var x, double slope = 0.01) {
    return elementwise(
        t, x, [slope](double v) { return v >= 0 ? v : slope * v; },
        [slope](double v, double) { return v >= 0 ? 1.0 : slope; });
}

/// x -> pi * sigmoid(x); bounded, smooth map onto (0, pi).
inline Var scale_to_0_pi(Tape &t, Var x) {
    return elementwise(
        t, x, [](double v) { return std::numbers::pi * sigmoid_scalar(v); },
        [](double, double y) {
            const double s = y / std::numbers::pi;
            return std::numbers::pi * s * (1.0 - s);
        });
}

inline Var scale(Tape &t, Var x, double factor) {
    return elementwise(
        t, x, [factor](double v) { return factor * v; },
        [factor](double, double) { return factor; });
}

inline Var add(Tape &t, Var a, Var b) {
    const auto &A = t.value(a);
    const auto &B = t.value(b);
    if (A.shape != B.shape) {
        shape_error("add", A.shape, B.shape);
    }
    Tensor Y(A.shape);
    for (std::size_t i = 0; i < A.numel(); ++i) {
        Y[i] = A[i] + B[i];
    }
    return t.record(std::move(Y), [a, b](Tape &tp, std::size_t self) {
        const auto &G = tp.grad(self);
        auto &dA = tp.grad(a);
        for (std::size_t i = 0; i < G.numel(); ++i) {
            dA[i] += G[i];
        }
        auto &dB = tp.grad(b);
        for (std::size_t i = 0; i < G.numel(); ++i) {
            dB[i] += G[i];
        }
    });
}

/// 1-D convolution, x[B, Ci, L] with W[Co, Ci, K], zero padding `pad`,
/// stride 1 -> [B, Co, L + 2 pad - K + 1].
inline Var conv1d(Tape &t, Var x, Var weight, Var bias, std::size_t pad) {
    const auto &X = t.value(x);
    const auto &W = t.value(weight);
    const auto &b = t.value(bias);
    if (X.rank() != 3 || W.rank() != 3 || X.shape[1] != W.shape[1]) {
        shape_error("conv1d", X.shape, W.shape);
    }
    if (b.rank() != 1 || b.shape[0] != W.shape[0]) {
        shape_error("conv1d bias", W.shape, b.shape);
    }
    const std::size_t B = X.shape[0], Ci = X.shape[1], L = X.shape[2];
    const std::size_t Co = W.shape[0], K = W.shape[2];
    if (L + 2 * pad < K) {
        shape_error("conv1d", X.shape, W.shape);
    }
    const std::size_t Lo = L + 2 * pad - K + 1;
    Tensor Y({B, Co, Lo});
    auto in_at = [&](std::size_t pos) -> std::ptrdiff_t {
        return static_cast<std::ptrdiff_t>(pos) - static_cast<std::ptrdiff_t>(pad);
    };
    for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t o = 0; o < Co; ++o) {
            for (std::size_t p = 0; p < Lo; ++p) {
                double s = b[o];
                for (std::size_t c = 0; c < Ci; ++c) {
                    for (std::size_t k = 0; k < K; ++k) {
                        const auto q = in_at(p + k);
                        if (q < 0 || q >= static_cast<std::ptrdiff_t>(L)) {
                            continue;
                        }
                        s += W[(o * Ci + c) * K + k] *
                             X[(n * Ci + c) * L + static_cast<std::size_t>(q)];
                    }
                }
                Y[(n * Co + o) * Lo + p] = s;
            }
        }
    }
    return t.record(std::move(Y), [=](Tape &tp, std::size_t self) {
        const auto &G = tp.grad(self);
        const auto &Xv = tp.value(x);
        const auto &Wv = tp.value(weight);
        auto &dX = tp.grad(x);
        auto &dW = tp.grad(weight);
        auto &db = tp.grad(bias);
        for (std::size_t n = 0; n < B; ++n) {
            for (std::size_t o = 0; o < Co; ++o) {
                for (std::size_t p = 0; p < Lo; ++p) {
                    const double g = G[(n * Co + o) * Lo + p];
                    db[o] += g;
                    for (std::size_t c = 0; c < Ci; ++c) {
                        for (std::size_t k = 0; k < K; ++k) {
                            const auto q = static_cast<std::ptrdiff_t>(p + k) -
                                           static_cast<std::ptrdiff_t>(pad);
                            if (q < 0 || q >= static_cast<std::ptrdiff_t>(L)) {
                                continue;
                            }
                            const auto xi =
                                (n * Ci + c) * L + static_cast<std::size_t>(q);
                            const auto wi = (o * Ci + c) * K + k;
                            dW[wi] += g * Xv[xi];
                            dX[xi] += g * Wv[wi];
                        }
                    }
                }
            }
        }
    });
}

/// Averages x[B, C, L] over `target` adaptive bins along the last axis.
/// Bin i covers [floor(i L / T), ceil((i + 1) L / T)).
inline Var adaptive_avg_pool1d(Tape &t, Var x, std::size_t target) {
    const auto &X = t.value(x);
    if (X.rank() != 3 || target == 0 || target > X.shape[2]) {
        shape_error("adaptive_avg_pool1d", X.shape, {target});
    }
    const std::size_t B = X.shape[0], C = X.shape[1], L = X.shape[2];
    auto bin = [L, target](std::size_t i) {
        const std::size_t lo = (i * L) / target;
        const std::size_t hi = ((i + 1) * L + target - 1) / target;
        return std::pair{lo, hi};
    };
    Tensor Y({B, C, target});
    for (std::size_t r = 0; r < B * C; ++r) {
        for (std::size_t i = 0; i < target; ++i) {
            const auto [lo, hi] = bin(i);
            double s = 0.0;
            for (std::size_t p = lo; p < hi; ++p) {
                s += X[r * L + p];
            }
            Y[r * target + i] = s / static_cast<double>(hi - lo);
        }
    }
    return t.record(std::move(Y), [=](Tape &tp, std::size_t self) {
        const auto &G = tp.grad(self);
        auto &dX = tp.grad(x);
        for (std::size_t r = 0; r < B * C; ++r) {
            for (std::size_t i = 0; i < target; ++i) {
                const auto [lo, hi] = bin(i);
                const double g = G[r * target + i] / static_cast<double>(hi - lo);
                for (std::size_t p = lo; p < hi; ++p) {
                    dX[r * L + p] += g;
                }
            }
        }
    });
}

/// [B, ...] -> [B, prod(...)].
inline Var flatten(Tape &t, Var x) {
    const auto &X = t.value(x);
    if (X.rank() < 1) {
        shape_error("flatten", X.shape, {});
    }
    Tensor Y({X.shape[0], X.numel() / std::max<std::size_t>(X.shape[0], 1)},
             X.data);
    return t.record(std::move(Y), [x](Tape &tp, std::size_t self) {
        const auto &G = tp.grad(self);
        auto &dX = tp.grad(x);
        for (std::size_t i = 0; i < G.numel(); ++i) {
            dX[i] += G[i];
        }
    });
}

/// Mean squared error of pred[B, 1] (or [B]) against targets -> scalar.
inline Var mse_loss(Tape &t, Var pred, std::span<const double> targets) {
    const auto &P = t.value(pred);
    if (P.numel() != targets.size() || targets.empty()) {
        shape_error("mse_loss", P.shape, {targets.size()});
    }
    const double n = static_cast<double>(targets.size());
    double s = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double d = P[i] - targets[i];
        s += d * d;
    }
    std::vector<double> tgt(targets.begin(), targets.end());
    return t.record(Tensor({1}, s / n),
                    [pred, tgt = std::move(tgt), n](Tape &tp, std::size_t self) {
                        const double g = tp.grad(self)[0];
                        const auto &Pv = tp.value(pred);
                        auto &dP = tp.grad(pred);
                        for (std::size_t i = 0; i < tgt.size(); ++i) {
                            dP[i] += g * 2.0 * (Pv[i] - tgt[i]) / n;
                        }
                    });
}

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline void init_uniform_fan_in(Parameter &p, std::size_t fan_in, Rng &rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto &v : p.value.data) {
        v = rng.uniform(-bound, bound);
    }
}

struct Linear {
    Parameter weight;
    Parameter bias;

    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out, Rng &rng)
        : weight(name + ".weight", Tensor({out, in})),
          bias(name + ".bias", Tensor({out})) {
        init_uniform_fan_in(weight, in, rng);
        init_uniform_fan_in(bias, in, rng);
    }

    Var operator()(Tape &t, Var x) {
        return linear(t, x, t.parameter(weight), t.parameter(bias));
    }

    [[nodiscard]] std::size_t n_params() const {
        return weight.value.numel() + bias.value.numel();
    }
};

struct Conv1d {
    Parameter weight;
    Parameter bias;
    std::size_t pad = 1;

    Conv1d() = default;
    Conv1d(std::string name, std::size_t in_ch, std::size_t out_ch,
           std::size_t kernel, std::size_t padding, Rng &rng)
        : weight(name + ".weight", Tensor({out_ch, in_ch, kernel})),
          bias(name + ".bias", Tensor({out_ch})), pad(padding) {
        init_uniform_fan_in(weight, in_ch * kernel, rng);
        init_uniform_fan_in(bias, in_ch * kernel, rng);
    }

    Var operator()(Tape &t, Var x) {
        return conv1d(t, x, t.parameter(weight), t.parameter(bias), pad);
    }

    [[nodiscard]] std::size_t n_params() const {
        return weight.value.numel() + bias.value.numel();
    }
};

} // namespace nn

/// Root mean squared error; throws on empty or mismatched input.
inline double rmse(std::span<const double> pred, std::span<const double> target) {
    if (pred.empty()) {
        throw std::invalid_argument("rmse of an empty vector");
    }
    if (pred.size() != target.size()) {
        throw std::invalid_argument("rmse: " + std::to_string(pred.size()) +
                                    " predictions vs " +
                                    std::to_string(target.size()) + " targets");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

struct AdamWConfig {
    double base_lr = 0.10;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<int> milestones{3, 8, 15};
    double gamma = 0.5;
};

/// base_lr * gamma^(number of milestones <= epoch), epochs counted from 0.
inline double learning_rate(const AdamWConfig &cfg, int epoch) {
    double lr = cfg.base_lr;
    for (int m : cfg.milestones) {
        if (m <= epoch) {
            lr *= cfg.gamma;
        }
    }
    return lr;
}

/// AdamW with decoupled weight decay (applied to the parameter directly,
/// before the moment update) and bias-corrected moments.
class AdamW {
  public:
    AdamW(std::vector<Parameter *> params, AdamWConfig cfg = {})
        : params_(std::move(params)), cfg_(std::move(cfg)) {
        for (auto *p : params_) {
            m_.emplace_back(p->value.numel(), 0.0);
            v_.emplace_back(p->value.numel(), 0.0);
        }
    }

    void zero_grad() {
        for (auto *p : params_) {
            p->zero_grad();
        }
    }

    /// One update using the gradients currently held by the parameters.
    void step(int epoch) {
        ++steps_;
        const double lr = learning_rate(cfg_, epoch);
        const double bc1 = 1.0 - std::pow(cfg_.beta1, steps_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, steps_);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto &w = params_[k]->value.data;
            const auto &g = params_[k]->grad.data;
            auto &m = m_[k];
            auto &v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                w[i] *= 1.0 - lr * cfg_.weight_decay;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    [[nodiscard]] long steps() const { return steps_; }
    [[nodiscard]] const AdamWConfig &config() const { return cfg_; }

  private:
    std::vector<Parameter *> params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    long steps_ = 0;
};

} // namespace vqclab
