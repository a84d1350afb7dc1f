#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nol/data.hpp"
#include "nol/model.hpp"
#include "nol/noise.hpp"

namespace nol {

enum class AttackFamily { Fgsm, Rfgsm, Ifgsm, Pgd };

AttackFamily attack_family_from_string(const std::string& s);
std::string to_string(AttackFamily f);

// Fully determines a perturbation procedure.
struct AttackSpec {
    AttackFamily family = AttackFamily::Fgsm;
    double eps = 0.1;   // l-inf budget in pixel units
    double alpha = 0.0; // rfgsm random step / pgd step size; 0 means eps/2 for rfgsm
    int steps = 1;      // ifgsm / pgd
    uint64_t seed = 0;
    bool random_start = true;        // pgd
    bool rfgsm_strict_ball = false;  // second step of eps-alpha instead of eps

    void validate() const;
};

// Where attack gradients come from: a model and, for NoL targets, the
// learnt mean noise composed before differentiating (the function the
// attacker observes at test time).
struct GradSource {
    const Model* model = nullptr;
    const NoiseBank* bank = nullptr;

    // loss value and gradient with respect to the raw input x
    std::pair<double, Tensor> loss_and_input_grad(const Tensor& x, const std::vector<int>& y) const;
    Tensor signed_input_grad(const Tensor& x, const std::vector<int>& y) const;
    std::vector<int> predict(const Tensor& x) const;
    double loss(const Tensor& x, const std::vector<int>& y) const;
};

// All attacks take a batch x in [0,1] and clamp their output back to [0,1].
Tensor fgsm(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps);

// X' = X + alpha*sign(N(0,I)); X_adv = X' + eps*sign(grad at X'). Total
// perturbation may reach eps+alpha before the final clamp (strict_ball
// uses eps-alpha for the second step instead).
Tensor rfgsm(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps,
             double alpha, uint64_t seed, bool strict_ball = false);

// beta >= eps/steps; every iterate projected into the eps-ball around x
// intersected with [0,1]
Tensor ifgsm(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps,
             int steps, double beta);

Tensor pgd(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps,
           double alpha, int steps, uint64_t seed, bool random_start = true);

Tensor run_attack(const GradSource& src, const Tensor& x, const std::vector<int>& y,
                  const AttackSpec& spec);

struct MinBbResult {
    double fgsm_accuracy = 0.0;
    double ifgsm_accuracy = 0.0;
    double rfgsm_accuracy = 0.0;
    double min_accuracy = 0.0;
};

// Worst-case target accuracy over the small-step transfer attacks
// FGSM, I-FGSM (2 steps), R-FGSM, all crafted from `source`.
MinBbResult min_bb_accuracy(const Model& target, const NoiseBank* target_bank,
                            const GradSource& source, const Dataset& ds, double eps,
                            int batch_size = 128, uint64_t seed = 0);

// accuracy of (target, bank) on adversarial examples from one attack spec
double attacked_accuracy(const Model& target, const NoiseBank* target_bank,
                         const GradSource& source, const Dataset& ds, const AttackSpec& spec,
                         int batch_size = 128);

}  // namespace nol
