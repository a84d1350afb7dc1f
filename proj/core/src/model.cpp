#include "nol/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "nol/rng.hpp"

namespace nol {

namespace {

struct Dims {
    int c, h, w;     // spatial form, valid when !flat
    int features;    // flat form
    bool flat;
};

Dims step_dims(const LayerSpec& l, const Dims& in, size_t layer_index) {
    auto fail = [&](const std::string& msg) {
        throw std::invalid_argument("layer " + std::to_string(layer_index) + ": " + msg);
    };
    switch (l.kind) {
        case LayerSpec::Kind::Conv: {
            if (in.flat) fail("conv after flatten");
            const int oh = in.h + 2 * l.pad - l.kernel + 1;
            const int ow = in.w + 2 * l.pad - l.kernel + 1;
            if (l.filters <= 0 || l.kernel <= 0) fail("conv needs positive filters and kernel");
            if (oh <= 0 || ow <= 0) fail("conv kernel larger than input");
            return {l.filters, oh, ow, 0, false};
        }
        case LayerSpec::Kind::MaxPool:
            if (in.flat) fail("maxpool after flatten");
            if (in.h % 2 != 0 || in.w % 2 != 0) fail("maxpool needs even spatial dims");
            return {in.c, in.h / 2, in.w / 2, 0, false};
        case LayerSpec::Kind::Relu:
            return in;
        case LayerSpec::Kind::Flatten:
            if (in.flat) fail("flatten after flatten");
            return {0, 0, 0, in.c * in.h * in.w, true};
        case LayerSpec::Kind::FullyConnected:
            if (!in.flat) fail("fully connected layer needs a flatten first");
            if (l.units <= 0) fail("fc needs positive units");
            return {0, 0, 0, l.units, true};
    }
    fail("unknown layer kind");
    return in;
}

}  // namespace

Model::Model(std::string arch_id, Shape input_shape, int classes, std::vector<LayerSpec> layers,
             uint64_t seed)
    : arch_id_(std::move(arch_id)),
      input_shape_(std::move(input_shape)),
      classes_(classes),
      layers_(std::move(layers)) {
    if (input_shape_.size() != 3 || input_shape_[0] <= 0 || input_shape_[1] <= 0 ||
        input_shape_[2] <= 0)
        throw std::invalid_argument("model input shape must be positive [c,h,w], got " +
                                    shape_str(input_shape_));
    if (classes_ < 2) throw std::invalid_argument("model needs at least 2 classes");
    if (layers_.empty() || layers_.back().kind != LayerSpec::Kind::FullyConnected ||
        layers_.back().units != classes_)
        throw std::invalid_argument("model must end with a fully connected layer of width classes");

    // shape-check the stack, name layers/taps, size the parameters
    Dims d{input_shape_[0], input_shape_[1], input_shape_[2], 0, false};
    int conv_n = 0, pool_n = 0, relu_n = 0, fc_n = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        std::string tap;
        int wi = -1, bi = -1;
        switch (l.kind) {
            case LayerSpec::Kind::Conv: {
                tap = "conv" + std::to_string(++conv_n);
                wi = static_cast<int>(params_.size());
                params_.emplace_back(Shape{l.filters, d.c, l.kernel, l.kernel});
                param_names_.push_back(tap + ".weight");
                bi = static_cast<int>(params_.size());
                params_.emplace_back(Shape{l.filters});
                param_names_.push_back(tap + ".bias");
                break;
            }
            case LayerSpec::Kind::MaxPool:
                tap = "pool" + std::to_string(++pool_n);
                break;
            case LayerSpec::Kind::Relu:
                tap = "relu" + std::to_string(++relu_n);
                break;
            case LayerSpec::Kind::Flatten:
                tap = "flatten";
                break;
            case LayerSpec::Kind::FullyConnected: {
                tap = "fc" + std::to_string(++fc_n);
                wi = static_cast<int>(params_.size());
                Dims nd = step_dims(l, d, i);
                params_.emplace_back(Shape{d.features, nd.features});
                param_names_.push_back(tap + ".weight");
                bi = static_cast<int>(params_.size());
                params_.emplace_back(Shape{nd.features});
                param_names_.push_back(tap + ".bias");
                break;
            }
        }
        d = step_dims(l, d, i);
        layer_params_.emplace_back(wi, bi);
        layer_tap_names_.push_back(tap);
        taps_[tap] = static_cast<int>(i);
    }
    if (!d.flat || d.features != classes_)
        throw std::invalid_argument("model output width does not equal class count");
    init_params(seed);
}

void Model::init_params(uint64_t seed) {
    Rng rng(derive_seed(seed, "model-init/" + arch_id_));
    // uniform in +-1/sqrt(fan_in) per layer, weights then bias
    for (size_t li = 0; li < layers_.size(); ++li) {
        const auto [wi, bi] = layer_params_[li];
        if (wi < 0) continue;
        Tensor& w = params_[static_cast<size_t>(wi)];
        Tensor& b = params_[static_cast<size_t>(bi)];
        int fan_in;
        if (layers_[li].kind == LayerSpec::Kind::Conv)
            fan_in = w.shape()[1] * w.shape()[2] * w.shape()[3];
        else
            fan_in = w.shape()[0];
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        for (double& v : b.data()) v = rng.uniform(-bound, bound);
    }
}

int Model::param_count() const {
    int n = 0;
    for (const Tensor& p : params_) n += p.size();
    return n;
}

Tensor Model::forward(const Tensor& x) const {
    std::map<std::string, Tensor> unused;
    return forward_with_taps(x, {}, unused);
}

Tensor Model::forward_with_taps(const Tensor& x, const std::vector<std::string>& tap_names,
                                std::map<std::string, Tensor>& activations) const {
    if (x.shape().size() != 4 || x.shape()[1] != input_shape_[0] ||
        x.shape()[2] != input_shape_[1] || x.shape()[3] != input_shape_[2])
        throw std::invalid_argument("forward: input " + shape_str(x.shape()) +
                                    " does not match model input [n," +
                                    std::to_string(input_shape_[0]) + "," +
                                    std::to_string(input_shape_[1]) + "," +
                                    std::to_string(input_shape_[2]) + "]");
    for (const std::string& t : tap_names)
        if (!taps_.count(t)) throw std::invalid_argument("unknown tap name: " + t);

    const int n = x.shape()[0];
    Tensor cur = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        const auto [wi, bi] = layer_params_[i];
        switch (l.kind) {
            case LayerSpec::Kind::Conv:
                cur = conv2d(cur, params_[static_cast<size_t>(wi)],
                             params_[static_cast<size_t>(bi)], l.pad);
                break;
            case LayerSpec::Kind::MaxPool:
                cur = maxpool2(cur);
                break;
            case LayerSpec::Kind::Relu:
                cur = relu(cur);
                break;
            case LayerSpec::Kind::Flatten:
                cur = reshape(cur, {n, cur.size() / n});
                break;
            case LayerSpec::Kind::FullyConnected:
                cur = linear(cur, params_[static_cast<size_t>(wi)],
                             params_[static_cast<size_t>(bi)]);
                break;
        }
        for (const std::string& t : tap_names)
            if (taps_.at(t) == static_cast<int>(i))
                activations[t] = Tensor({n, cur.size() / n}, cur.data());
    }
    return cur;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    if (logits.shape().size() != 2)
        throw std::invalid_argument("argmax_rows: expected [n,C], got " + shape_str(logits.shape()));
    const int n = logits.shape()[0], C = logits.shape()[1];
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * C;
        int best = 0;
        for (int c = 1; c < C; ++c)
            if (row[c] > row[best]) best = c;  // ties keep the lowest index
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

std::vector<int> Model::predict(const Tensor& x) const { return argmax_rows(forward(x)); }

std::string Model::layer_summary() const {
    std::ostringstream os;
    bool first = true;
    Dims d{input_shape_[0], input_shape_[1], input_shape_[2], 0, false};
    for (size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& l = layers_[i];
        Dims nd = step_dims(l, d, i);
        switch (l.kind) {
            case LayerSpec::Kind::Conv:
                os << (first ? "" : "-") << l.filters << "C";
                first = false;
                break;
            case LayerSpec::Kind::MaxPool:
                os << (first ? "" : "-") << "M";
                first = false;
                break;
            case LayerSpec::Kind::Flatten:
                os << (first ? "" : "-") << nd.features << "FC";
                first = false;
                break;
            case LayerSpec::Kind::FullyConnected:
                os << (first ? "" : "-") << nd.features << "FC";
                first = false;
                break;
            case LayerSpec::Kind::Relu:
                break;
        }
        d = nd;
    }
    return os.str();
}

Model Model::clone() const {
    Model m = *this;
    for (Tensor& p : m.params_) p = p.clone();
    return m;
}

Model build_model(const std::string& name, int classes, const Shape& input_shape, uint64_t seed,
                  const std::vector<LayerSpec>& custom_layers) {
    std::vector<LayerSpec> layers;
    if (name == "convnet1") {
        layers = {LayerSpec::conv(32, 5), LayerSpec::relu(),   LayerSpec::maxpool(),
                  LayerSpec::conv(64, 5), LayerSpec::relu(),   LayerSpec::maxpool(),
                  LayerSpec::flatten(),   LayerSpec::fc(classes)};
    } else if (name == "convnet2") {
        layers = {LayerSpec::conv(10, 5), LayerSpec::relu(),   LayerSpec::maxpool(),
                  LayerSpec::conv(20, 5), LayerSpec::relu(),   LayerSpec::maxpool(),
                  LayerSpec::flatten(),   LayerSpec::fc(classes)};
    } else if (name == "custom-small-cnn") {
        layers = custom_layers;
        if (layers.empty())
            throw std::invalid_argument("custom-small-cnn requires a layer stack");
        bool has_flatten = false;
        for (const auto& l : layers) has_flatten |= l.kind == LayerSpec::Kind::Flatten;
        if (!has_flatten) layers.push_back(LayerSpec::flatten());
        layers.push_back(LayerSpec::fc(classes));
    } else {
        throw std::invalid_argument("unknown architecture id: " + name);
    }
    return Model(name, input_shape, classes, std::move(layers), seed);
}

}  // namespace nol
