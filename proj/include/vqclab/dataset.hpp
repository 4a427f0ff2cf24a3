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
 * Synthetic Gaussian-peak regression data.
 *
 * Each sample is a single peak A / (sigma sqrt(2 pi)) exp(-(x - mu)^2 /
 * (2 sigma^2)) plus N(0, 0.01^2) noise, evaluated on x_j = j / 20 for
 * j = 0..20, then min-max normalized to [0, 1]. The target is mu.
 *
 * Random streams: every sample owns an std::mt19937_64 seeded with
 * splitmix64(master_seed, split, index). Uniforms take the top 53 bits of
 * one engine output; normals use Box-Muller on two uniforms. Draw order per
 * sample is A, sigma, mu, then 21 noise values. Nothing here depends on the
 * standard library's distribution implementations, so splits are identical
 * across platforms.
 */
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

namespace vqclab {

inline constexpr std::size_t kSampleLength = 21;
inline constexpr std::size_t kTrainSize = 150;
inline constexpr std::size_t kValSize = 250;
inline constexpr std::size_t kTestSize = 500;
inline constexpr double kNoiseStd = 0.01;

/// splitmix64 finalizer; used to derive independent sub-stream seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                 std::uint64_t b = 0) {
    return mix64(mix64(mix64(seed) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

/// Deterministic random source with documented draw rules.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal by Box-Muller; consumes two uniforms per call.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Uniform integer in [0, n) by rejection, n > 0.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

  private:
    std::mt19937_64 engine_;
};

struct GaussianSampleParams {
    double amplitude = 1.0;  // U[0.5, 1.5]
    double sigma = 0.05;     // U[0.01, 0.1]
    double mu = 0.5;         // U[0, 1], the regression target
    double noise_std = kNoiseStd;
};

struct Sample {
    std::array<double, kSampleLength> x_values{};
    std::array<double, kSampleLength> features{};
    double target = 0.0;
};

struct DatasetSplit {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;
    std::uint64_t master_seed = 0;
};

inline double grid_point(std::size_t j) {
    return static_cast<double>(j) / static_cast<double>(kSampleLength - 1);
}

inline double gaussian_peak(double x, const GaussianSampleParams &p) {
    const double d = x - p.mu;
    return p.amplitude / (p.sigma * std::sqrt(2.0 * std::numbers::pi)) *
           std::exp(-d * d / (2.0 * p.sigma * p.sigma));
}

/// Min-max normalization of one sample; a constant vector maps to zeros.
inline std::array<double, kSampleLength>
normalize(std::span<const double, kSampleLength> x) {
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    std::array<double, kSampleLength> out{};
    const double range = *hi - *lo;
    if (range == 0.0) {
        return out;
    }
    for (std::size_t j = 0; j < kSampleLength; ++j) {
        out[j] = (x[j] - *lo) / range;
    }
    return out;
}

/// Evaluates the peak on the grid, adds noise drawn from `rng` (skipped when
/// noise_std is 0) and normalizes.
inline Sample render_sample(const GaussianSampleParams &p, Rng &rng) {
    Sample s;
    s.target = p.mu;
    for (std::size_t j = 0; j < kSampleLength; ++j) {
        double y = gaussian_peak(grid_point(j), p);
        if (p.noise_std > 0.0) {
            y += p.noise_std * rng.normal();
        }
        s.x_values[j] = y;
    }
    s.features = normalize(std::span<const double, kSampleLength>(s.x_values));
    return s;
}

inline GaussianSampleParams draw_params(Rng &rng) {
    GaussianSampleParams p;
    p.amplitude = rng.uniform(0.5, 1.5);
    p.sigma = rng.uniform(0.01, 0.1);
    p.mu = rng.uniform(0.0, 1.0);
    return p;
}

enum class SplitId : std::uint64_t { train = 1, val = 2, test = 3 };

inline std::vector<Sample> generate_samples(std::uint64_t master_seed,
                                            SplitId split, std::size_t count) {
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(master_seed, static_cast<std::uint64_t>(split), i));
        const auto params = draw_params(rng);
        out.push_back(render_sample(params, rng));
    }
    return out;
}

inline DatasetSplit generate_splits(std::uint64_t master_seed) {
    DatasetSplit d;
    d.master_seed = master_seed;
    d.train = generate_samples(master_seed, SplitId::train, kTrainSize);
    d.val = generate_samples(master_seed, SplitId::val, kValSize);
    d.test = generate_samples(master_seed, SplitId::test, kTestSize);
    return d;
}

/// RMSE of the constant predictor 0.5: the "did not learn" reference.
inline double baseline_rmse(std::span<const Sample> samples) {
    if (samples.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (const auto &x : samples) {
        s += (x.target - 0.5) * (x.target - 0.5);
    }
    return std::sqrt(s / static_cast<double>(samples.size()));
}

} // namespace vqclab
