#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nol/tensor.hpp"

namespace nol {

struct LayerSpec {
    enum class Kind { Conv, MaxPool, Relu, Flatten, FullyConnected };
    Kind kind;
    int filters = 0;  // conv
    int kernel = 0;   // conv
    int pad = 0;      // conv
    int units = 0;    // fully connected

    static LayerSpec conv(int filters, int kernel, int pad = 0) {
        return {Kind::Conv, filters, kernel, pad, 0};
    }
    static LayerSpec maxpool() { return {Kind::MaxPool}; }
    static LayerSpec relu() { return {Kind::Relu}; }
    static LayerSpec flatten() { return {Kind::Flatten}; }
    static LayerSpec fc(int units) { return {Kind::FullyConnected, 0, 0, 0, units}; }
};

// Ordered layer stack with named parameters and activation taps.
// Immutable during inference; training mutates params in place.
class Model {
  public:
    Model() = default;
    Model(std::string arch_id, Shape input_shape, int classes, std::vector<LayerSpec> layers,
          uint64_t seed);

    const std::string& arch_id() const { return arch_id_; }
    const Shape& input_shape() const { return input_shape_; }  // [c,h,w]
    int classes() const { return classes_; }
    const std::vector<LayerSpec>& layers() const { return layers_; }

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<std::string>& param_names() const { return param_names_; }
    int param_count() const;

    // tap name ("conv1", "pool2", "flatten", "fc1", ...) -> layer index
    const std::map<std::string, int>& taps() const { return taps_; }
    bool has_tap(const std::string& name) const { return taps_.count(name) > 0; }

    // x is [n,c,h,w]; returns logits [n,classes]
    Tensor forward(const Tensor& x) const;

    // Same logits as forward; additionally harvests the requested tap
    // activations, flattened to one row per sample.
    Tensor forward_with_taps(const Tensor& x, const std::vector<std::string>& tap_names,
                             std::map<std::string, Tensor>& activations) const;

    // argmax of logits; ties broken toward the lowest class index
    std::vector<int> predict(const Tensor& x) const;

    std::string layer_summary() const;

    Model clone() const;  // deep copy of parameters

  private:
    std::string arch_id_;
    Shape input_shape_;
    int classes_ = 0;
    std::vector<LayerSpec> layers_;
    std::vector<Tensor> params_;
    std::vector<std::string> param_names_;
    // layer index -> indices into params_ (weight, bias), or (-1,-1)
    std::vector<std::pair<int, int>> layer_params_;
    std::vector<std::string> layer_tap_names_;
    std::map<std::string, int> taps_;

    void init_params(uint64_t seed);
};

// name in {"convnet1", "convnet2", "custom-small-cnn"}; input_shape is [c,h,w].
// custom-small-cnn takes its stack from `custom_layers` (final classifier
// layer is appended automatically).
Model build_model(const std::string& name, int classes, const Shape& input_shape, uint64_t seed,
                  const std::vector<LayerSpec>& custom_layers = {});

std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace nol
