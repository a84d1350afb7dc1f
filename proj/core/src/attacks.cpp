#include "nol/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nol/rng.hpp"

namespace nol {

AttackFamily attack_family_from_string(const std::string& s) {
    if (s == "fgsm") return AttackFamily::Fgsm;
    if (s == "rfgsm") return AttackFamily::Rfgsm;
    if (s == "ifgsm") return AttackFamily::Ifgsm;
    if (s == "pgd") return AttackFamily::Pgd;
    throw std::invalid_argument("unknown attack family: " + s);
}

std::string to_string(AttackFamily f) {
    switch (f) {
        case AttackFamily::Fgsm: return "fgsm";
        case AttackFamily::Rfgsm: return "rfgsm";
        case AttackFamily::Ifgsm: return "ifgsm";
        case AttackFamily::Pgd: return "pgd";
    }
    return "?";
}

void AttackSpec::validate() const {
    if (eps < 0.0 || eps > 1.0) throw std::invalid_argument("AttackSpec: eps must be in [0,1]");
    if (family == AttackFamily::Ifgsm || family == AttackFamily::Pgd) {
        if (steps < 1) throw std::invalid_argument("AttackSpec: steps must be >= 1");
    }
    if (family == AttackFamily::Pgd && alpha <= 0.0)
        throw std::invalid_argument("AttackSpec: pgd needs alpha > 0");
    if (family == AttackFamily::Ifgsm && steps > 0 && alpha > 0.0 && alpha * steps < eps)
        throw std::invalid_argument("AttackSpec: ifgsm needs beta >= eps/steps");
    if (family == AttackFamily::Rfgsm && alpha > eps)
        throw std::invalid_argument("AttackSpec: rfgsm needs alpha <= eps");
}

std::pair<double, Tensor> GradSource::loss_and_input_grad(const Tensor& x,
                                                          const std::vector<int>& y) const {
    Tape tape;
    Tensor xv = x.clone();
    tape.watch(xv);
    Tensor input = bank ? combine_with_template(xv, bank->mean_template(), bank->mode) : xv;
    Tensor loss = softmax_cross_entropy(model->forward(input), y);
    tape.backward(loss);
    return {loss.item(), xv.grad_tensor()};
}

Tensor GradSource::signed_input_grad(const Tensor& x, const std::vector<int>& y) const {
    Tensor g = loss_and_input_grad(x, y).second;
    for (double& v : g.data()) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    return g;
}

std::vector<int> GradSource::predict(const Tensor& x) const {
    return nol::predict(*model, x, bank);
}

double GradSource::loss(const Tensor& x, const std::vector<int>& y) const {
    Tensor input = bank ? combine_with_template(x, bank->mean_template(), bank->mode) : x;
    return softmax_cross_entropy(model->forward(input), y).item();
}

namespace {

void clamp01_inplace(Tensor& t) {
    for (double& v : t.data()) v = std::min(1.0, std::max(0.0, v));
}

// project into the l-inf eps-ball around origin, then into [0,1]
void project_inplace(Tensor& t, const Tensor& origin, double eps) {
    for (int i = 0; i < t.size(); ++i) {
        const double o = origin.data()[size_t(i)];
        double v = t.data()[size_t(i)];
        v = std::min(o + eps, std::max(o - eps, v));
        t.data()[size_t(i)] = std::min(1.0, std::max(0.0, v));
    }
}

}  // namespace

Tensor fgsm(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps) {
    Tensor s = src.signed_input_grad(x, y);
    Tensor adv = x.clone();
    for (int i = 0; i < adv.size(); ++i) adv.data()[size_t(i)] += eps * s.data()[size_t(i)];
    clamp01_inplace(adv);
    return adv;
}

Tensor rfgsm(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps,
             double alpha, uint64_t seed, bool strict_ball) {
    if (alpha > eps) throw std::invalid_argument("rfgsm: alpha must not exceed eps");
    Rng rng(derive_seed(seed, "rfgsm-random-step"));
    Tensor probe = x.clone();
    for (double& v : probe.data()) {
        const double n = rng.normal();
        v += alpha * (n > 0.0 ? 1.0 : (n < 0.0 ? -1.0 : 0.0));
    }
    Tensor s = src.signed_input_grad(probe, y);
    const double step = strict_ball ? eps - alpha : eps;
    for (int i = 0; i < probe.size(); ++i) probe.data()[size_t(i)] += step * s.data()[size_t(i)];
    clamp01_inplace(probe);
    return probe;
}

Tensor ifgsm(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps,
             int steps, double beta) {
    if (steps < 1) throw std::invalid_argument("ifgsm: steps must be >= 1");
    if (beta * steps < eps) throw std::invalid_argument("ifgsm: beta must be >= eps/steps");
    Tensor adv = x.clone();
    for (int t = 0; t < steps; ++t) {
        Tensor s = src.signed_input_grad(adv, y);
        for (int i = 0; i < adv.size(); ++i) adv.data()[size_t(i)] += beta * s.data()[size_t(i)];
        project_inplace(adv, x, eps);
    }
    return adv;
}

Tensor pgd(const GradSource& src, const Tensor& x, const std::vector<int>& y, double eps,
           double alpha, int steps, uint64_t seed, bool random_start) {
    if (steps < 1) throw std::invalid_argument("pgd: steps must be >= 1");
    if (alpha <= 0.0) throw std::invalid_argument("pgd: alpha must be > 0");
    Tensor adv = x.clone();
    if (random_start) {
        Rng rng(derive_seed(seed, "pgd-random-start"));
        for (double& v : adv.data()) v += rng.uniform(-eps, eps);
        project_inplace(adv, x, eps);
    }
    for (int t = 0; t < steps; ++t) {
        Tensor s = src.signed_input_grad(adv, y);
        for (int i = 0; i < adv.size(); ++i) adv.data()[size_t(i)] += alpha * s.data()[size_t(i)];
        project_inplace(adv, x, eps);
    }
    return adv;
}

Tensor run_attack(const GradSource& src, const Tensor& x, const std::vector<int>& y,
                  const AttackSpec& spec) {
    spec.validate();
    switch (spec.family) {
        case AttackFamily::Fgsm:
            return fgsm(src, x, y, spec.eps);
        case AttackFamily::Rfgsm: {
            const double a = spec.alpha > 0.0 ? spec.alpha : spec.eps / 2.0;
            return rfgsm(src, x, y, spec.eps, a, spec.seed, spec.rfgsm_strict_ball);
        }
        case AttackFamily::Ifgsm: {
            const double b = spec.alpha > 0.0 ? spec.alpha : spec.eps / spec.steps;
            return ifgsm(src, x, y, spec.eps, spec.steps, b);
        }
        case AttackFamily::Pgd:
            return pgd(src, x, y, spec.eps, spec.alpha, spec.steps, spec.seed, spec.random_start);
    }
    throw std::logic_error("run_attack: unreachable");
}

double attacked_accuracy(const Model& target, const NoiseBank* target_bank,
                         const GradSource& source, const Dataset& ds, const AttackSpec& spec,
                         int batch_size) {
    int correct = 0;
    BatchPlan plan{std::min(batch_size, ds.size()), 0, false, false};
    for (const auto& ix : batch_indices(ds.size(), plan)) {
        Batch b = gather(ds, ix);
        Tensor adv = run_attack(source, b.x, b.y, spec);
        const auto pred = predict(target, adv, target_bank);
        for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.y[i];
    }
    return double(correct) / ds.size();
}

MinBbResult min_bb_accuracy(const Model& target, const NoiseBank* target_bank,
                            const GradSource& source, const Dataset& ds, double eps,
                            int batch_size, uint64_t seed) {
    MinBbResult r;
    AttackSpec fg{AttackFamily::Fgsm, eps, 0.0, 1, seed};
    AttackSpec ifg{AttackFamily::Ifgsm, eps, eps / 2.0, 2, seed};
    AttackSpec rfg{AttackFamily::Rfgsm, eps, eps / 2.0, 1, derive_seed(seed, "min-bb/rfgsm")};
    r.fgsm_accuracy = attacked_accuracy(target, target_bank, source, ds, fg, batch_size);
    r.ifgsm_accuracy = attacked_accuracy(target, target_bank, source, ds, ifg, batch_size);
    r.rfgsm_accuracy = attacked_accuracy(target, target_bank, source, ds, rfg, batch_size);
    r.min_accuracy = std::min({r.fgsm_accuracy, r.ifgsm_accuracy, r.rfgsm_accuracy});
    return r;
}

}  // namespace nol
