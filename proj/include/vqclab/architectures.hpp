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
 * The three hybrid models built around a validated circuit:
 *
 *  - simple:  linear(21 -> q_enc) -> pi * sigmoid -> circuit
 *             -> linear(q_out -> 1) -> sigmoid
 *  - quanv:   pi * windows(kernel, stride) -> circuit per window
 *             -> [channels = q_out, length = windows]
 *             -> residual block (conv k3 p1, leaky, conv k3 p1, + skip, leaky)
 *             -> adaptive average pool -> flatten
 *             -> linear(-> 10) -> leaky -> linear(10 -> 5) -> leaky
 *             -> linear(5 -> 1) -> sigmoid
 *  - full:    pi * features -> circuit -> linear(q_out -> 1) -> sigmoid
 */
#pragma once

#include "circuit_ir.hpp"
#include "dataset.hpp"
#include "simulator.hpp"
#include "tensor_nn.hpp"

#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

namespace vqclab {

enum class Architecture { simple, quanv, full_quantum };

inline const char *architecture_name(Architecture a) {
    switch (a) {
    case Architecture::simple: return "simple";
    case Architecture::quanv: return "quanv";
    case Architecture::full_quantum: return "full_quantum";
    }
    return "?";
}

struct SimpleQNNConfig {
    std::size_t q_enc_size = 0;
    std::size_t q_out_size = 0;
    CircuitIR circuit;
};

struct QuanvConfig {
    std::size_t kernel_size = 0;
    std::size_t stride = 1;
    std::size_t vqc_output_dim = 0;
    CircuitIR circuit;
    /// Output length of the adaptive pooling stage.
    std::size_t pool_length = 1;
};

struct FullQuantumConfig {
    std::size_t q_out_size = 0;
    CircuitIR circuit;
};

using ModelConfig = std::variant<SimpleQNNConfig, QuanvConfig, FullQuantumConfig>;

struct ParamReport {
    std::size_t n_trainable_params_total = 0;
    std::size_t n_trainable_params_VQC = 0;
    std::size_t n_gates_in_VQC = 0;
    std::size_t circuit_depth = 0;
};

inline std::size_t window_count(std::size_t kernel_size, std::size_t stride) {
    return (kSampleLength - kernel_size) / stride + 1;
}

/// Raised when a configuration breaks an architecture invariant.
class ModelError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/**
 * Circuit evaluated independently on every row of `angles` [N, n_inputs],
 * returning [N, measurements]. Its backward rule is the adjoint method,
 * with the rows' upstream gradients as observable weights.
 */
inline Var quantum_layer(Tape &t, Var angles, Var weights,
                         std::shared_ptr<const FlatCircuit> fc) {
    const auto &A = t.value(angles);
    const auto &W = t.value(weights);
    const std::size_t N = A.shape[0];
    const std::size_t in = A.shape[1];
    const std::size_t out = fc->measurements.size();
    if (in < fc->n_inputs || W.numel() != fc->n_weights()) {
        nn::shape_error("quantum_layer", A.shape, W.shape);
    }
    Tensor Y({N, out});
    for (std::size_t n = 0; n < N; ++n) {
        const auto e = simulate_expectations(
            *fc, std::span<const double>(A.data).subspan(n * in, in), W.data);
        std::copy(e.begin(), e.end(), Y.data.begin() + static_cast<std::ptrdiff_t>(n * out));
    }
    return t.record(std::move(Y), [=](Tape &tp, std::size_t self) {
        const auto &G = tp.grad(self);
        const auto &Av = tp.value(angles);
        const auto &Wv = tp.value(weights);
        auto &dA = tp.grad(angles);
        auto &dW = tp.grad(weights);
        for (std::size_t n = 0; n < N; ++n) {
            const auto up = std::span<const double>(G.data).subspan(n * out, out);
            if (std::all_of(up.begin(), up.end(), [](double g) { return g == 0.0; })) {
                continue;
            }
            const auto r = adjoint_gradients(
                *fc, std::span<const double>(Av.data).subspan(n * in, in),
                Wv.data, up);
            for (std::size_t i = 0; i < in; ++i) {
                dA[n * in + i] += r.d_inputs[i];
            }
            for (std::size_t k = 0; k < r.d_weights.size(); ++k) {
                dW[k] += r.d_weights[k];
            }
        }
    });
}

class Model {
  public:
    Model(const Model &) = delete;
    Model &operator=(const Model &) = delete;
    Model(Model &&) = delete;
    Model &operator=(Model &&) = delete;

    /// Validates the circuit against the architecture's input/output sizes
    /// and initializes every parameter from `seed`.
    static std::unique_ptr<Model> build(const ModelConfig &config,
                                        std::uint64_t seed) {
        return std::unique_ptr<Model>(new Model(config, seed));
    }

    [[nodiscard]] Architecture architecture() const { return arch_; }
    [[nodiscard]] const FlatCircuit &circuit() const { return *fc_; }
    [[nodiscard]] std::size_t windows() const { return windows_; }

    /// Forward pass for features [B, 21]; returns predictions [B, 1].
    Var forward(Tape &t, const Tensor &features) {
        if (features.rank() != 2 || features.shape[1] != kSampleLength) {
            nn::shape_error("model input", features.shape,
                            {features.shape.empty() ? 0 : features.shape[0],
                             kSampleLength});
        }
        const std::size_t B = features.shape[0];
        const Var x = t.constant(features);
        Var h;
        switch (arch_) {
        case Architecture::simple: {
            const Var enc = nn::scale_to_0_pi(t, embed_(t, x));
            const Var q = quantum_layer(t, enc, t.parameter(vqc_weights_), fc_);
            h = head_out_(t, q);
            break;
        }
        case Architecture::full_quantum: {
            const Var q = quantum_layer(t, nn::scale(t, x, std::numbers::pi),
                                        t.parameter(vqc_weights_), fc_);
            h = head_out_(t, q);
            break;
        }
        case Architecture::quanv: {
            Tensor win({B * windows_, kernel_});
            for (std::size_t n = 0; n < B; ++n) {
                for (std::size_t w = 0; w < windows_; ++w) {
                    for (std::size_t k = 0; k < kernel_; ++k) {
                        win[(n * windows_ + w) * kernel_ + k] =
                            std::numbers::pi *
                            features[n * kSampleLength + w * stride_ + k];
                    }
                }
            }
            const Var q = quantum_layer(t, t.constant(std::move(win)),
                                        t.parameter(vqc_weights_), fc_);
            const Var seq = to_channels(t, q, B);
            const Var branch =
                conv2_(t, nn::leaky_relu(t, conv1_(t, seq)));
            const Var res = nn::leaky_relu(t, nn::add(t, branch, seq));
            const Var pooled =
                nn::flatten(t, nn::adaptive_avg_pool1d(t, res, pool_length_));
            const Var m1 = nn::leaky_relu(t, mlp1_(t, pooled));
            const Var m2 = nn::leaky_relu(t, mlp2_(t, m1));
            h = head_out_(t, m2);
            break;
        }
        }
        return nn::sigmoid(t, h);
    }

    /// Predictions in (0, 1), one per sample, in order.
    std::vector<double> predict(std::span<const Sample> samples,
                                std::size_t batch_size = 64) {
        std::vector<double> out;
        out.reserve(samples.size());
        for (std::size_t start = 0; start < samples.size(); start += batch_size) {
            const auto chunk = samples.subspan(
                start, std::min(batch_size, samples.size() - start));
            Tape t;
            const Var y = forward(t, features_of(chunk));
            const auto &v = t.value(y).data;
            out.insert(out.end(), v.begin(), v.end());
        }
        return out;
    }

    /// Every trainable tensor, in a fixed order.
    std::vector<Parameter *> parameters() {
        std::vector<Parameter *> ps;
        auto lin = [&](nn::Linear &l) {
            ps.push_back(&l.weight);
            ps.push_back(&l.bias);
        };
        auto conv = [&](nn::Conv1d &c) {
            ps.push_back(&c.weight);
            ps.push_back(&c.bias);
        };
        switch (arch_) {
        case Architecture::simple:
            lin(embed_);
            break;
        case Architecture::quanv:
            conv(conv1_);
            conv(conv2_);
            lin(mlp1_);
            lin(mlp2_);
            break;
        case Architecture::full_quantum:
            break;
        }
        ps.push_back(&vqc_weights_);
        lin(head_out_);
        return ps;
    }

    [[nodiscard]] std::size_t classical_param_count() const {
        switch (arch_) {
        case Architecture::simple:
            return embed_.n_params() + head_out_.n_params();
        case Architecture::quanv:
            return conv1_.n_params() + conv2_.n_params() + mlp1_.n_params() +
                   mlp2_.n_params() + head_out_.n_params();
        case Architecture::full_quantum:
            return head_out_.n_params();
        }
        return 0;
    }

    [[nodiscard]] ParamReport param_report() {
        const auto stats = circuit_stats(*fc_);
        ParamReport r;
        r.n_trainable_params_VQC = stats.vqc_param_count;
        r.n_gates_in_VQC = stats.gate_count;
        r.circuit_depth = stats.depth;
        std::size_t total = 0;
        for (const auto *p : parameters()) {
            total += p->value.numel();
        }
        r.n_trainable_params_total = total;
        if (total != classical_param_count() + r.n_trainable_params_VQC) {
            throw std::logic_error("parameter accounting mismatch");
        }
        return r;
    }

    static Tensor features_of(std::span<const Sample> samples) {
        Tensor f({samples.size(), kSampleLength});
        for (std::size_t n = 0; n < samples.size(); ++n) {
            std::copy(samples[n].features.begin(), samples[n].features.end(),
                      f.data.begin() +
                          static_cast<std::ptrdiff_t>(n * kSampleLength));
        }
        return f;
    }

  private:
    Model(const ModelConfig &config, std::uint64_t seed) {
        Rng rng(derive_seed(seed, 0x1417));
        std::visit([&](const auto &c) { setup(c, rng); }, config);
        vqc_weights_ = Parameter("vqc.weights", Tensor({fc_->n_weights()}));
        for (auto &w : vqc_weights_.value.data) {
            w = rng.uniform(0.0, 2.0 * std::numbers::pi);
        }
        (void)param_report();
    }

    void setup(const SimpleQNNConfig &c, Rng &rng) {
        if (c.q_enc_size == 0 || c.q_out_size == 0) {
            throw ModelError("q_enc_size and q_out_size must be positive");
        }
        arch_ = Architecture::simple;
        fc_ = std::make_shared<FlatCircuit>(
            unroll_and_validate(c.circuit, c.q_enc_size, c.q_out_size));
        embed_ = nn::Linear("embed", kSampleLength, c.q_enc_size, rng);
        head_out_ = nn::Linear("out", c.q_out_size, 1, rng);
    }

    void setup(const FullQuantumConfig &c, Rng &rng) {
        if (c.q_out_size == 0) {
            throw ModelError("q_out_size must be positive");
        }
        arch_ = Architecture::full_quantum;
        fc_ = std::make_shared<FlatCircuit>(
            unroll_and_validate(c.circuit, kSampleLength, c.q_out_size));
        head_out_ = nn::Linear("out", c.q_out_size, 1, rng);
    }

    void setup(const QuanvConfig &c, Rng &rng) {
        if (c.kernel_size < 1 || c.kernel_size > kSampleLength) {
            throw ModelError("kernel_size must be in 1..21, got " +
                             std::to_string(c.kernel_size));
        }
        if (c.stride < 1) {
            throw ModelError("stride must be at least 1");
        }
        if (c.vqc_output_dim == 0) {
            throw ModelError("VQC_output_dim must be positive");
        }
        arch_ = Architecture::quanv;
        kernel_ = c.kernel_size;
        stride_ = c.stride;
        windows_ = window_count(c.kernel_size, c.stride);
        if (c.pool_length < 1 || c.pool_length > windows_) {
            throw ModelError("pool length must be in 1.." +
                             std::to_string(windows_));
        }
        pool_length_ = c.pool_length;
        fc_ = std::make_shared<FlatCircuit>(
            unroll_and_validate(c.circuit, c.kernel_size, c.vqc_output_dim));
        const std::size_t ch = c.vqc_output_dim;
        conv1_ = nn::Conv1d("res.conv1", ch, ch, 3, 1, rng);
        conv2_ = nn::Conv1d("res.conv2", ch, ch, 3, 1, rng);
        mlp1_ = nn::Linear("mlp1", ch * pool_length_, 10, rng);
        mlp2_ = nn::Linear("mlp2", 10, 5, rng);
        head_out_ = nn::Linear("out", 5, 1, rng);
    }

    /// [B * W, C] rows ordered (sample, window) -> [B, C, W].
    Var to_channels(Tape &t, Var q, std::size_t B) const {
        const auto &Q = t.value(q);
        const std::size_t W = windows_;
        const std::size_t C = Q.shape[1];
        Tensor Y({B, C, W});
        for (std::size_t n = 0; n < B; ++n) {
            for (std::size_t w = 0; w < W; ++w) {
                for (std::size_t c = 0; c < C; ++c) {
                    Y[(n * C + c) * W + w] = Q[(n * W + w) * C + c];
                }
            }
        }
        return t.record(std::move(Y), [q, B, C, W](Tape &tp, std::size_t self) {
            const auto &G = tp.grad(self);
            auto &dQ = tp.grad(q);
            for (std::size_t n = 0; n < B; ++n) {
                for (std::size_t w = 0; w < W; ++w) {
                    for (std::size_t c = 0; c < C; ++c) {
                        dQ[(n * W + w) * C + c] += G[(n * C + c) * W + w];
                    }
                }
            }
        });
    }

    Architecture arch_ = Architecture::simple;
    std::shared_ptr<const FlatCircuit> fc_;
    Parameter vqc_weights_;
    nn::Linear embed_;
    nn::Linear head_out_;
    nn::Conv1d conv1_;
    nn::Conv1d conv2_;
    nn::Linear mlp1_;
    nn::Linear mlp2_;
    std::size_t kernel_ = 0;
    std::size_t stride_ = 1;
    std::size_t windows_ = 0;
    std::size_t pool_length_ = 1;
};

inline std::unique_ptr<Model> build_model(const ModelConfig &config,
                                          std::uint64_t seed) {
    return Model::build(config, seed);
}

} // namespace vqclab
