#pragma once

#include <cstdint>
#include <vector>

#include "nol/model.hpp"
#include "nol/tensor.hpp"

namespace nol {

enum class NoiseMode { Multiplicative, Additive };
enum class GradFilter { NegativeOnly, All };

// k learnable noise templates, one per within-batch position.
struct NoiseBank {
    std::vector<Tensor> templates;  // each shaped like one input sample [c,h,w]
    NoiseMode mode = NoiseMode::Multiplicative;
    GradFilter grad_filter = GradFilter::NegativeOnly;

    int k() const { return static_cast<int>(templates.size()); }
    Tensor mean_template() const;
    NoiseBank clone() const;
};

// Templates initialized uniformly in [0.8, 1], deterministic under seed.
NoiseBank init_noise(const Shape& input_shape, int k, uint64_t seed,
                     NoiseMode mode = NoiseMode::Multiplicative,
                     GradFilter filter = GradFilter::NegativeOnly);

// X' with template i combined into batch slot i. Batch size must be <= k;
// a short batch uses templates 0..|batch|-1. Gradients flow into the
// templates when they are watched on a tape.
Tensor apply_noise(const NoiseBank& bank, const Tensor& x);

// N_j <- N_j - eta * g_j, with positive gradient components zeroed in
// negative-only mode. Templates are not clipped after the update.
void noise_update(NoiseBank& bank, const std::vector<Tensor>& grads, double eta_noise);

// Combine every sample of a batch with one fixed template (the
// inference-time mean-template composition). The template is a constant
// here; gradients flow only into x.
Tensor combine_with_template(const Tensor& x, const Tensor& tmpl, NoiseMode mode);

// Mean-template composition followed by argmax.
std::vector<int> infer_with_noise(const Model& model, const NoiseBank& bank, const Tensor& x);

// predict with an optional bank (mean-template composition when present)
std::vector<int> predict(const Model& model, const Tensor& x, const NoiseBank* bank = nullptr);

}  // namespace nol
