#pragma once

#include "nol/attacks.hpp"
#include "nol/trainer.hpp"

namespace nol {

enum class AdvProtocol { EnsAdv, PgdAdv };

AdvProtocol adv_protocol_from_string(const std::string& s);
std::string to_string(AdvProtocol p);

// Dual-learning-rate adversarial training: one step per batch on clean
// data at (eta, eta_noise) and one on adversarial data at
// (eta_adv, eta_noise_adv).
struct AdvTrainConfig {
    AdvProtocol protocol = AdvProtocol::EnsAdv;
    AttackSpec attack;             // fgsm for ensadv, pgd for pgdadv
    bool clean_step_first = true;  // fixed order by default, switchable

    void validate(const TrainConfig& train) const;
};

// EnsAdv: adversarial batches are FGSM examples crafted from a fixed,
// never-updated source model. Regenerated every epoch.
EpochMetrics ensadv_epoch(TrainState& state, const Model& source, const Dataset& ds,
                          const TrainConfig& cfg, const AdvTrainConfig& adv);

// PGDAdv: adversarial batches are PGD examples crafted white-box from the
// current target state (through the noise when a bank is present).
// attack.steps == 0 degenerates to two clean steps.
EpochMetrics pgdadv_epoch(TrainState& state, const Dataset& ds, const TrainConfig& cfg,
                          const AdvTrainConfig& adv);

}  // namespace nol
