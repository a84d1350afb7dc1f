#include "nol/trainer.hpp"

#include <cmath>
#include <stdexcept>

#include "nol/rng.hpp"

namespace nol {

void TrainConfig::validate() const {
    if (eta <= 0.0) throw std::invalid_argument("TrainConfig: eta must be > 0");
    if (eta_noise < 0.0 || eta_adv < 0.0 || eta_noise_adv < 0.0)
        throw std::invalid_argument("TrainConfig: learning rates must be >= 0");
    if (eta_noise > eta)
        throw std::invalid_argument("TrainConfig: eta_noise must not exceed eta");
    if (momentum < 0.0 || momentum >= 1.0)
        throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (lr_decay <= 0.0 || lr_decay > 1.0)
        throw std::invalid_argument("TrainConfig: lr_decay must be in (0,1]");
    if (lr_decay_step < 0) throw std::invalid_argument("TrainConfig: lr_decay_step must be >= 0");
}

void SgdOptimizer::step(std::vector<Tensor>& params, double lr, double momentum,
                        double weight_decay) {
    if (velocity.empty())
        for (const Tensor& p : params) velocity.emplace_back(p.shape());
    if (velocity.size() != params.size())
        throw std::logic_error("optimizer state does not match parameter list");
    for (size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        if (!p.has_grad()) continue;
        Tensor& v = velocity[i];
        const auto& g = p.grad();
        for (int j = 0; j < p.size(); ++j) {
            const double gj = g[size_t(j)] + weight_decay * p.data()[size_t(j)];
            v.data()[size_t(j)] = momentum * v.data()[size_t(j)] + gj;
            p.data()[size_t(j)] -= lr * v.data()[size_t(j)];
        }
    }
}

SgdOptimizer SgdOptimizer::clone() const {
    SgdOptimizer o;
    for (const Tensor& v : velocity) o.velocity.push_back(v.clone());
    return o;
}

TrainState TrainState::clone() const {
    TrainState s;
    s.model = model.clone();
    if (bank) s.bank = bank->clone();
    s.opt = opt.clone();
    s.epoch = epoch;
    return s;
}

double lr_at_epoch(double base, const TrainConfig& cfg, int epoch) {
    if (cfg.lr_decay_step <= 0) return base;
    return base * std::pow(cfg.lr_decay, double(epoch / cfg.lr_decay_step));
}

EpochMetrics train_epoch(TrainState& state, const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    if (state.bank && state.bank->k() != cfg.batch_size)
        throw std::invalid_argument("noise bank size " + std::to_string(state.bank->k()) +
                                    " does not equal batch size " + std::to_string(cfg.batch_size));

    const double eta = lr_at_epoch(cfg.eta, cfg, state.epoch);
    const double eta_noise = lr_at_epoch(cfg.eta_noise, cfg, state.epoch);

    TrainState snapshot = state.clone();

    BatchPlan plan{cfg.batch_size, derive_seed(cfg.seed, "shuffle/epoch" + std::to_string(state.epoch)),
                   true, false};
    const auto idx = batch_indices(ds.size(), plan);

    double loss_sum = 0.0;
    int correct = 0, seen = 0;
    for (size_t bi = 0; bi < idx.size(); ++bi) {
        Batch b = gather(ds, idx[bi], int(bi));
        const int n = b.x.shape()[0];
        Tape tape;
        for (Tensor& p : state.model.params()) tape.watch(p);
        if (state.bank)
            for (int i = 0; i < n; ++i) tape.watch(state.bank->templates[size_t(i)]);

        Tensor input = state.bank ? apply_noise(*state.bank, b.x) : b.x;
        Tensor logits = state.model.forward(input);
        Tensor loss = softmax_cross_entropy(logits, b.y);
        if (!std::isfinite(loss.item())) {
            state = std::move(snapshot);
            throw std::runtime_error("train_epoch: non-finite loss in batch " + std::to_string(bi) +
                                     " of epoch " + std::to_string(state.epoch) +
                                     "; epoch-start state restored");
        }
        tape.backward(loss);

        state.opt.step(state.model.params(), eta, cfg.momentum, cfg.weight_decay);
        if (state.bank) {
            std::vector<Tensor> grads;
            grads.reserve(size_t(n));
            // template i receives the gradient of its own sample's loss:
            // the mean-loss backward pass scales each slot by 1/n, so undo
            // that factor to keep the per-template step independent of the
            // batch size
            for (int i = 0; i < n; ++i) {
                Tensor g = state.bank->templates[size_t(i)].grad_tensor();
                for (double& v : g.data()) v *= double(n);
                grads.push_back(std::move(g));
            }
            noise_update(*state.bank, grads, eta_noise);
        }

        loss_sum += loss.item() * n;
        const auto pred = argmax_rows(logits);
        for (int i = 0; i < n; ++i) correct += pred[size_t(i)] == b.y[size_t(i)];
        seen += n;
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

namespace {

template <typename Fn>
void for_eval_batches(const Dataset& ds, int batch_size, Fn&& fn) {
    BatchPlan plan{std::min(batch_size, ds.size()), 0, false, false};
    for (const auto& ix : batch_indices(ds.size(), plan)) fn(gather(ds, ix));
}

}  // namespace

double evaluate_accuracy(const Model& model, const NoiseBank* bank, const Dataset& ds,
                         int batch_size) {
    int correct = 0;
    for_eval_batches(ds, batch_size, [&](const Batch& b) {
        const auto pred = predict(model, b.x, bank);
        for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.y[i];
    });
    return double(correct) / ds.size();
}

double evaluate_loss(const Model& model, const NoiseBank* bank, const Dataset& ds, int batch_size) {
    double loss_sum = 0.0;
    for_eval_batches(ds, batch_size, [&](const Batch& b) {
        Tensor input = bank ? combine_with_template(b.x, bank->mean_template(), bank->mode) : b.x;
        Tensor loss = softmax_cross_entropy(model.forward(input), b.y);
        loss_sum += loss.item() * b.x.shape()[0];
    });
    return loss_sum / ds.size();
}

}  // namespace nol
