#include "nol/noise.hpp"

#include <cmath>
#include <stdexcept>

#include "nol/rng.hpp"

namespace nol {

Tensor NoiseBank::mean_template() const {
    if (templates.empty()) throw std::logic_error("empty noise bank");
    Tensor m(templates[0].shape());
    for (const Tensor& t : templates)
        for (int i = 0; i < m.size(); ++i) m.data()[size_t(i)] += t.data()[size_t(i)];
    const double inv = 1.0 / double(templates.size());
    for (double& v : m.data()) v *= inv;
    return m;
}

NoiseBank NoiseBank::clone() const {
    NoiseBank b = *this;
    for (Tensor& t : b.templates) t = t.clone();
    return b;
}

NoiseBank init_noise(const Shape& input_shape, int k, uint64_t seed, NoiseMode mode,
                     GradFilter filter) {
    if (k < 1) throw std::invalid_argument("init_noise: k must be >= 1");
    Rng rng(derive_seed(seed, "noise-init"));
    NoiseBank bank;
    bank.mode = mode;
    bank.grad_filter = filter;
    bank.templates.reserve(size_t(k));
    for (int i = 0; i < k; ++i) {
        Tensor t(input_shape);
        for (double& v : t.data()) v = rng.uniform(0.8, 1.0);
        bank.templates.push_back(std::move(t));
    }
    return bank;
}

Tensor apply_noise(const NoiseBank& bank, const Tensor& x) {
    const int n = x.shape()[0];
    if (n > bank.k())
        throw std::invalid_argument("apply_noise: batch of " + std::to_string(n) +
                                    " exceeds bank size " + std::to_string(bank.k()));
    const Shape sample(x.shape().begin() + 1, x.shape().end());
    if (bank.templates[0].shape() != sample)
        throw std::invalid_argument("apply_noise: template shape " +
                                    shape_str(bank.templates[0].shape()) +
                                    " does not match sample shape " + shape_str(sample));
    std::vector<Tensor> rows;
    rows.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        Tensor xi = select(x, i);
        const Tensor& ni = bank.templates[size_t(i)];
        rows.push_back(bank.mode == NoiseMode::Multiplicative ? mul(xi, ni) : add(xi, ni));
    }
    return stack(rows);
}

void noise_update(NoiseBank& bank, const std::vector<Tensor>& grads, double eta_noise) {
    if (grads.size() > bank.templates.size())
        throw std::invalid_argument("noise_update: more gradients than templates");
    for (size_t j = 0; j < grads.size(); ++j) {
        const Tensor& g = grads[j];
        Tensor& t = bank.templates[j];
        if (g.shape() != t.shape())
            throw std::invalid_argument("noise_update: gradient shape " + shape_str(g.shape()) +
                                        " does not match template " + shape_str(t.shape()));
        for (double v : g.data())
            if (!std::isfinite(v)) throw std::runtime_error("noise_update: non-finite gradient");
        if (bank.grad_filter == GradFilter::NegativeOnly) {
            for (int i = 0; i < t.size(); ++i) {
                const double gv = g.data()[size_t(i)];
                if (gv < 0.0) t.data()[size_t(i)] -= eta_noise * gv;
            }
        } else {
            for (int i = 0; i < t.size(); ++i) t.data()[size_t(i)] -= eta_noise * g.data()[size_t(i)];
        }
    }
}

Tensor combine_with_template(const Tensor& x, const Tensor& tmpl, NoiseMode mode) {
    const Shape sample(x.shape().begin() + 1, x.shape().end());
    if (tmpl.shape() != sample)
        throw std::invalid_argument("combine_with_template: template shape " +
                                    shape_str(tmpl.shape()) + " does not match sample shape " +
                                    shape_str(sample));
    const int n = x.shape()[0];
    const int stride = tmpl.size();
    std::vector<double> tiled(size_t(n) * size_t(stride));
    for (int i = 0; i < n; ++i)
        std::copy(tmpl.data().begin(), tmpl.data().end(), tiled.begin() + long(i) * stride);
    Tensor t(x.shape(), std::move(tiled));
    return mode == NoiseMode::Multiplicative ? mul(x, t) : add(x, t);
}

std::vector<int> infer_with_noise(const Model& model, const NoiseBank& bank, const Tensor& x) {
    return model.predict(combine_with_template(x, bank.mean_template(), bank.mode));
}

std::vector<int> predict(const Model& model, const Tensor& x, const NoiseBank* bank) {
    return bank ? infer_with_noise(model, *bank, x) : model.predict(x);
}

}  // namespace nol
