#include "nol/adv_train.hpp"

#include <cmath>
#include <stdexcept>

#include "nol/rng.hpp"

namespace nol {

AdvProtocol adv_protocol_from_string(const std::string& s) {
    if (s == "ensadv") return AdvProtocol::EnsAdv;
    if (s == "pgdadv") return AdvProtocol::PgdAdv;
    throw std::invalid_argument("unknown adversarial training protocol: " + s);
}

std::string to_string(AdvProtocol p) {
    return p == AdvProtocol::EnsAdv ? "ensadv" : "pgdadv";
}

void AdvTrainConfig::validate(const TrainConfig& train) const {
    if (protocol == AdvProtocol::EnsAdv && attack.family != AttackFamily::Fgsm)
        throw std::invalid_argument("ensadv uses fgsm adversaries");
    if (protocol == AdvProtocol::PgdAdv && attack.family != AttackFamily::Pgd)
        throw std::invalid_argument("pgdadv uses pgd adversaries");
    if (train.eta_adv > train.eta)
        throw std::invalid_argument("eta_adv must not exceed eta");
    if (train.eta_noise_adv > train.eta_noise && train.eta_noise > 0.0)
        throw std::invalid_argument("eta_noise_adv must not exceed eta_noise");
    if (!(protocol == AdvProtocol::PgdAdv && attack.steps == 0)) attack.validate();
}

namespace {

// one gradient step on (x, y) at the given rates; returns (loss, correct)
std::pair<double, int> gradient_step(TrainState& state, const Tensor& x,
                                     const std::vector<int>& y, const TrainConfig& cfg,
                                     double eta, double eta_noise) {
    const int n = x.shape()[0];
    Tape tape;
    for (Tensor& p : state.model.params()) tape.watch(p);
    if (state.bank)
        for (int i = 0; i < n; ++i) tape.watch(state.bank->templates[size_t(i)]);
    Tensor input = state.bank ? apply_noise(*state.bank, x) : x;
    Tensor logits = state.model.forward(input);
    Tensor loss = softmax_cross_entropy(logits, y);
    if (!std::isfinite(loss.item()))
        throw std::runtime_error("adversarial training: non-finite loss");
    tape.backward(loss);
    state.opt.step(state.model.params(), eta, cfg.momentum, cfg.weight_decay);
    if (state.bank) {
        std::vector<Tensor> grads;
        // per-sample gradient: undo the 1/n factor of the mean loss (see
        // train_epoch)
        for (int i = 0; i < n; ++i) {
            Tensor g = state.bank->templates[size_t(i)].grad_tensor();
            for (double& v : g.data()) v *= double(n);
            grads.push_back(std::move(g));
        }
        noise_update(*state.bank, grads, eta_noise);
    }
    const auto pred = argmax_rows(logits);
    int correct = 0;
    for (int i = 0; i < n; ++i) correct += pred[size_t(i)] == y[size_t(i)];
    return {loss.item() * n, correct};
}

template <typename MakeAdv>
EpochMetrics adv_epoch(TrainState& state, const Dataset& ds, const TrainConfig& cfg,
                       const AdvTrainConfig& adv, MakeAdv&& make_adv) {
    cfg.validate();
    adv.validate(cfg);
    if (state.bank && state.bank->k() != cfg.batch_size)
        throw std::invalid_argument("noise bank size does not equal batch size");

    const double eta = lr_at_epoch(cfg.eta, cfg, state.epoch);
    const double eta_noise = lr_at_epoch(cfg.eta_noise, cfg, state.epoch);
    const double eta_adv = lr_at_epoch(cfg.eta_adv, cfg, state.epoch);
    const double eta_noise_adv = lr_at_epoch(cfg.eta_noise_adv, cfg, state.epoch);
    // a fully zero-rate adversarial step is skipped outright so the run
    // matches plain training exactly (no phantom momentum updates)
    const bool adv_active = eta_adv > 0.0 || eta_noise_adv > 0.0;

    TrainState snapshot = state.clone();
    BatchPlan plan{cfg.batch_size,
                   derive_seed(cfg.seed, "shuffle/epoch" + std::to_string(state.epoch)), true,
                   false};
    const auto idx = batch_indices(ds.size(), plan);

    double loss_sum = 0.0;
    int correct = 0, seen = 0;
    try {
        for (size_t bi = 0; bi < idx.size(); ++bi) {
            Batch b = gather(ds, idx[bi], int(bi));
            auto clean_step = [&]() {
                auto [l, c] = gradient_step(state, b.x, b.y, cfg, eta, eta_noise);
                loss_sum += l;
                correct += c;
                seen += b.x.shape()[0];
            };
            auto adv_step = [&]() {
                if (!adv_active) return;
                Tensor x_adv = make_adv(state, b, bi);
                gradient_step(state, x_adv, b.y, cfg, eta_adv, eta_noise_adv);
            };
            if (adv.clean_step_first) {
                clean_step();
                adv_step();
            } else {
                adv_step();
                clean_step();
            }
        }
    } catch (const std::runtime_error&) {
        state = std::move(snapshot);
        throw;
    }

    EpochMetrics m;
    m.mean_loss = loss_sum / seen;
    m.accuracy = double(correct) / seen;
    if (state.bank) {
        double lo = state.bank->templates[0].data()[0], hi = lo;
        for (const Tensor& t : state.bank->templates)
            for (double v : t.data()) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        m.noise_min = lo;
        m.noise_max = hi;
    }
    state.epoch += 1;
    return m;
}

}  // namespace

EpochMetrics ensadv_epoch(TrainState& state, const Model& source, const Dataset& ds,
                          const TrainConfig& cfg, const AdvTrainConfig& adv) {
    if (adv.protocol != AdvProtocol::EnsAdv)
        throw std::invalid_argument("ensadv_epoch called with a non-ensadv config");
    GradSource src{&source, nullptr};
    return adv_epoch(state, ds, cfg, adv, [&](TrainState&, const Batch& b, size_t) {
        return fgsm(src, b.x, b.y, adv.attack.eps);
    });
}

EpochMetrics pgdadv_epoch(TrainState& state, const Dataset& ds, const TrainConfig& cfg,
                          const AdvTrainConfig& adv) {
    if (adv.protocol != AdvProtocol::PgdAdv)
        throw std::invalid_argument("pgdadv_epoch called with a non-pgdadv config");
    return adv_epoch(state, ds, cfg, adv, [&](TrainState& st, const Batch& b, size_t bi) {
        if (adv.attack.steps == 0) return b.x.clone();
        GradSource src{&st.model, st.bank ? &*st.bank : nullptr};
        const uint64_t seed = derive_seed(
            adv.attack.seed, "pgdadv/e" + std::to_string(st.epoch) + "/b" + std::to_string(bi));
        return pgd(src, b.x, b.y, adv.attack.eps, adv.attack.alpha, adv.attack.steps, seed,
                   adv.attack.random_start);
    });
}

}  // namespace nol
