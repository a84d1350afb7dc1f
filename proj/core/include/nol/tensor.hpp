#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace nol {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int numel(const Shape& s);

class Tape;

namespace detail {
struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches it
    bool tracked = false;      // gradient flows into this node
    Tape* tape = nullptr;
};
}  // namespace detail

// Dense row-major tensor of doubles with an optional gradient.
// Copies are shallow (shared storage); use clone() for a deep copy.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int size() const { return static_cast<int>(impl_->data.size()); }
    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const std::vector<double>& grad() const;
    Tensor grad_tensor() const;  // gradient as a detached tensor

    double item() const;  // value of a scalar tensor
    Tensor clone() const;  // deep copy, detached from any tape

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Records the primitive ops of one forward pass so backward() can replay
// them in reverse. One tape per training/attack step; single-threaded use.
class Tape {
  public:
    Tape() = default;
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Mark a leaf tensor so backward() populates its gradient.
    // Clears any stale gradient on the tensor.
    void watch(Tensor& t);

    // Populate grads of all tracked tensors with d(loss)/d(tensor).
    // loss must be scalar. Tracked tensors not reachable from loss get
    // a zero gradient.
    void backward(const Tensor& loss);

    size_t size() const { return entries_.size(); }

    // internal: used by the primitive ops
    void record(std::shared_ptr<detail::TensorImpl> result, std::function<void()> fn);
    void adopt(const std::shared_ptr<detail::TensorImpl>& node);

  private:
    std::vector<std::function<void()>> entries_;
    std::vector<std::shared_ptr<detail::TensorImpl>> nodes_;    // all nodes touched
    std::vector<std::shared_ptr<detail::TensorImpl>> watched_;  // leaves
};

// ---- primitives -----------------------------------------------------------
// The tape is inferred from the operands; ops on untaped tensors just
// compute values. Shapes must match exactly (no broadcasting beyond
// scalar-tensor); mismatches throw std::invalid_argument naming both shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);  // [n,k] x [k,m]
// x [n,k] * w [k,m] + bias b [m] per row
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x [n,ci,h,w], w [co,ci,kh,kw], b [co]; stride 1, zero padding `pad`
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad = 0);
// 2x2 max pooling, stride 2; H and W must be even. Backward routes the
// gradient to the first maximal element of each window.
Tensor maxpool2(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sign(const Tensor& x);  // sign(0) = 0; gradient is zero everywhere
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor reshape(const Tensor& x, Shape s);
Tensor select(const Tensor& x, int i);           // slice along dim 0
Tensor stack(const std::vector<Tensor>& parts);  // new leading dim

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// logits [n,C], labels in [0,C); mean cross-entropy over the batch
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// row-wise softmax probabilities of a [n,C] tensor (value only, no grad)
std::vector<double> softmax_values(const Tensor& logits);

// Central-difference gradient estimate of a tensor-to-scalar function.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f,
                              const Tensor& x, double h);

}  // namespace nol
