#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nol/data.hpp"
#include "nol/model.hpp"
#include "nol/noise.hpp"

namespace nol {

struct TrainConfig {
    double eta = 0.01;
    double eta_noise = 0.0;      // 0 freezes the bank
    double eta_adv = 0.0;        // adversarial-batch rate (adv-training)
    double eta_noise_adv = 0.0;  // adversarial-batch noise rate
    double momentum = 0.0;
    double weight_decay = 0.0;   // weights only, never noise templates
    int epochs = 1;
    int batch_size = 64;
    double lr_decay = 1.0;  // multiplicative, applied to all four rates
    int lr_decay_step = 0;  // epochs between decays; 0 disables
    uint64_t seed = 0;

    void validate() const;
};

// momentum SGD: v = mu*v + g; p -= lr*v (weight decay folded into g)
struct SgdOptimizer {
    std::vector<Tensor> velocity;

    void step(std::vector<Tensor>& params, double lr, double momentum, double weight_decay);
    SgdOptimizer clone() const;
};

struct EpochMetrics {
    double mean_loss = 0.0;
    double accuracy = 0.0;
    double noise_min = 0.0;  // template value range, logged per epoch
    double noise_max = 0.0;
};

// Everything one training run mutates. Owned exclusively by the epoch
// functions for their duration.
struct TrainState {
    Model model;
    std::optional<NoiseBank> bank;
    SgdOptimizer opt;
    int epoch = 0;

    TrainState clone() const;
};

// learning rate after the schedule has been applied through `epoch`
double lr_at_epoch(double base, const TrainConfig& cfg, int epoch);

// One pass over the dataset: forward on X' (or X when no bank), mean
// cross-entropy, backward, momentum-SGD step on the weights, noise_update
// on the bank. A non-finite loss aborts the epoch, restoring the
// epoch-start state before throwing.
EpochMetrics train_epoch(TrainState& state, const Dataset& ds, const TrainConfig& cfg);

// accuracy of (model, optional bank) over a dataset, batched
double evaluate_accuracy(const Model& model, const NoiseBank* bank, const Dataset& ds,
                         int batch_size = 256);

// mean loss of (model, optional bank) over a dataset, batched
double evaluate_loss(const Model& model, const NoiseBank* bank, const Dataset& ds,
                     int batch_size = 256);

}  // namespace nol
