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
 * Noiseless statevector execution of flat circuits and adjoint-method
 * gradients of weighted sums of single-qubit Pauli expectations.
 *
 * Qubit 0 is the most significant bit of the amplitude index.
 * Rotations follow R_P(theta) = exp(-i theta P / 2); ROT(a, b, c) applies
 * RZ(a), then RY(b), then RZ(c).
 */
#pragma once

#include "circuit_ir.hpp"

#include <cassert>
#include <cmath>
#include <complex>
#include <span>
#include <vector>

namespace vqclab {

using Complex = std::complex<double>;

class StateVector {
  public:
    explicit StateVector(int n_qubits)
        : n_qubits_(n_qubits), amps_(std::size_t{1} << n_qubits) {
        amps_[0] = 1.0;
    }

    [[nodiscard]] int n_qubits() const noexcept { return n_qubits_; }
    [[nodiscard]] std::size_t size() const noexcept { return amps_.size(); }
    [[nodiscard]] std::span<Complex> data() noexcept { return amps_; }
    [[nodiscard]] std::span<const Complex> data() const noexcept {
        return amps_;
    }
    Complex &operator[](std::size_t i) { return amps_[i]; }
    const Complex &operator[](std::size_t i) const { return amps_[i]; }

    [[nodiscard]] double norm() const {
        double s = 0.0;
        for (const auto &a : amps_) {
            s += std::norm(a);
        }
        return std::sqrt(s);
    }

    /// Bit mask of `wire` in the amplitude index.
    [[nodiscard]] std::size_t mask(int wire) const {
        return std::size_t{1} << (n_qubits_ - 1 - wire);
    }

    /// Applies [[m00, m01], [m10, m11]] to one wire.
    void apply_1q(int wire, Complex m00, Complex m01, Complex m10, Complex m11) {
        const std::size_t bit = mask(wire);
        for (std::size_t i = 0; i < amps_.size(); ++i) {
            if (i & bit) {
                continue;
            }
            const Complex a0 = amps_[i];
            const Complex a1 = amps_[i | bit];
            amps_[i] = m00 * a0 + m01 * a1;
            amps_[i | bit] = m10 * a0 + m11 * a1;
        }
    }

    void apply_cnot(int control, int target) {
        const std::size_t c = mask(control);
        const std::size_t t = mask(target);
        for (std::size_t i = 0; i < amps_.size(); ++i) {
            if ((i & c) && !(i & t)) {
                std::swap(amps_[i], amps_[i | t]);
            }
        }
    }

    void apply_cz(int a, int b) {
        const std::size_t m = mask(a) | mask(b);
        for (std::size_t i = 0; i < amps_.size(); ++i) {
            if ((i & m) == m) {
                amps_[i] = -amps_[i];
            }
        }
    }

    void apply_pauli(Observable p, int wire) {
        switch (p) {
        case Observable::X:
            apply_1q(wire, 0.0, 1.0, 1.0, 0.0);
            break;
        case Observable::Y:
            apply_1q(wire, 0.0, Complex(0, -1), Complex(0, 1), 0.0);
            break;
        case Observable::Z:
            apply_1q(wire, 1.0, 0.0, 0.0, -1.0);
            break;
        }
    }

    /// exp(-i theta P / 2) for P in {X, Y, Z}.
    void apply_rotation(Observable axis, int wire, double theta) {
        const double c = std::cos(theta / 2);
        const double s = std::sin(theta / 2);
        switch (axis) {
        case Observable::X:
            apply_1q(wire, c, Complex(0, -s), Complex(0, -s), c);
            break;
        case Observable::Y:
            apply_1q(wire, c, -s, s, c);
            break;
        case Observable::Z:
            apply_1q(wire, Complex(c, -s), 0.0, 0.0, Complex(c, s));
            break;
        }
    }

    [[nodiscard]] double expectation(Observable p, int wire) const {
        const std::size_t bit = mask(wire);
        double acc = 0.0;
        for (std::size_t i = 0; i < amps_.size(); ++i) {
            if (i & bit) {
                continue;
            }
            const Complex a0 = amps_[i];
            const Complex a1 = amps_[i | bit];
            switch (p) {
            case Observable::Z:
                acc += std::norm(a0) - std::norm(a1);
                break;
            case Observable::X:
                acc += 2.0 * (std::conj(a0) * a1).real();
                break;
            case Observable::Y:
                acc += 2.0 * (std::conj(a0) * a1).imag();
                break;
            }
        }
        return acc;
    }

    friend Complex inner(const StateVector &a, const StateVector &b) {
        Complex s = 0.0;
        for (std::size_t i = 0; i < a.amps_.size(); ++i) {
            s += std::conj(a.amps_[i]) * b.amps_[i];
        }
        return s;
    }

  private:
    int n_qubits_;
    std::vector<Complex> amps_;
};

/// d_weights is laid out row-major over the circuit's weights_shape.
struct GradientResult {
    std::vector<double> d_weights;
    std::vector<double> d_inputs;
};

namespace sim_detail {

/// One primitive operation after ROT is split into its three rotations.
struct Primitive {
    GateKind kind;          // H, X, CNOT, CZ, or RX/RY/RZ
    int wire0;
    int wire1;
    double angle;
    std::size_t gate;       // index into fc.gates
    std::size_t slot;       // angle slot within the gate
};

inline Observable axis_of(GateKind k) {
    return k == GateKind::RX ? Observable::X
           : k == GateKind::RY ? Observable::Y
                               : Observable::Z;
}

inline std::vector<Primitive> lower(const FlatCircuit &fc,
                                    std::span<const double> inputs,
                                    std::span<const double> weights) {
    std::vector<Primitive> ops;
    ops.reserve(fc.gates.size() + 8);
    for (std::size_t gi = 0; gi < fc.gates.size(); ++gi) {
        const auto &g = fc.gates[gi];
        if (g.kind == GateKind::ROT) {
            static constexpr GateKind seq[] = {GateKind::RZ, GateKind::RY,
                                               GateKind::RZ};
            for (std::size_t s = 0; s < 3; ++s) {
                ops.push_back({seq[s], g.wires[0], g.wires[0],
                               g.angles[s].evaluate(inputs, weights), gi, s});
            }
        } else {
            const double theta =
                g.angles.empty() ? 0.0 : g.angles[0].evaluate(inputs, weights);
            ops.push_back({g.kind, g.wires[0], g.wires[1], theta, gi, 0});
        }
    }
    return ops;
}

inline bool is_rotation(GateKind k) {
    return k == GateKind::RX || k == GateKind::RY || k == GateKind::RZ;
}

inline void apply(StateVector &psi, const Primitive &op, bool inverse) {
    switch (op.kind) {
    case GateKind::H: {
        const double r = 1.0 / std::sqrt(2.0);
        psi.apply_1q(op.wire0, r, r, r, -r);
        break;
    }
    case GateKind::X:
        psi.apply_1q(op.wire0, 0.0, 1.0, 1.0, 0.0);
        break;
    case GateKind::CNOT:
        psi.apply_cnot(op.wire0, op.wire1);
        break;
    case GateKind::CZ:
        psi.apply_cz(op.wire0, op.wire1);
        break;
    default:
        psi.apply_rotation(axis_of(op.kind), op.wire0,
                           inverse ? -op.angle : op.angle);
    }
}

} // namespace sim_detail

/// Final state prepared from |0...0>.
inline StateVector simulate_state(const FlatCircuit &fc,
                                  std::span<const double> inputs,
                                  std::span<const double> weights) {
    StateVector psi(fc.n_qubits);
    for (const auto &op : sim_detail::lower(fc, inputs, weights)) {
        sim_detail::apply(psi, op, false);
    }
    return psi;
}

/// <psi|O_k|psi> for every measurement, in measurement order.
inline std::vector<double> simulate_expectations(const FlatCircuit &fc,
                                                 std::span<const double> inputs,
                                                 std::span<const double> weights) {
    assert(inputs.size() >= fc.n_inputs);
    assert(weights.size() == fc.n_weights());
    const auto psi = simulate_state(fc, inputs, weights);
    std::vector<double> out;
    out.reserve(fc.measurements.size());
    for (const auto &m : fc.measurements) {
        out.push_back(psi.expectation(m.observable, m.wire));
    }
    return out;
}

/**
 * Gradient of L = sum_k upstream[k] * <O_k> with respect to the circuit
 * weights and inputs, by one forward pass and one reverse sweep.
 *
 * With lambda = (sum_k upstream_k O_k)|psi> and phi the state after a
 * rotation exp(-i theta P / 2), dL/dtheta = Im <lambda|P|phi>. Both vectors
 * are then un-computed through the gate. Raw angle gradients are pushed
 * through each gate's angle program, so repeated uses of one input or
 * weight accumulate.
 */
inline GradientResult adjoint_gradients(const FlatCircuit &fc,
                                        std::span<const double> inputs,
                                        std::span<const double> weights,
                                        std::span<const double> upstream) {
    assert(upstream.size() == fc.measurements.size());
    GradientResult out;
    out.d_weights.assign(fc.n_weights(), 0.0);
    out.d_inputs.assign(inputs.size(), 0.0);

    const auto ops = sim_detail::lower(fc, inputs, weights);
    StateVector phi(fc.n_qubits);
    for (const auto &op : ops) {
        sim_detail::apply(phi, op, false);
    }

    StateVector lambda(fc.n_qubits);
    lambda[0] = 0.0;
    for (std::size_t k = 0; k < fc.measurements.size(); ++k) {
        if (upstream[k] == 0.0) {
            continue;
        }
        StateVector term = phi;
        term.apply_pauli(fc.measurements[k].observable, fc.measurements[k].wire);
        auto dst = lambda.data();
        auto src = term.data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += upstream[k] * src[i];
        }
    }

    StateVector scratch(fc.n_qubits);
    for (std::size_t i = ops.size(); i-- > 0;) {
        const auto &op = ops[i];
        if (sim_detail::is_rotation(op.kind)) {
            scratch = phi;
            scratch.apply_pauli(sim_detail::axis_of(op.kind), op.wire0);
            const double g = inner(lambda, scratch).imag();
            fc.gates[op.gate].angles[op.slot].backpropagate(
                g, inputs, weights, out.d_inputs, out.d_weights);
        }
        sim_detail::apply(phi, op, true);
        sim_detail::apply(lambda, op, true);
    }
    return out;
}

} // namespace vqclab
