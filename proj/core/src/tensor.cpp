#include "nol/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace nol {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

int numel(const Shape& s) {
    int n = 1;
    for (int d : s) n *= d;
    return n;
}

namespace {

using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

void check_shape(const Shape& s) {
    if (s.empty()) throw std::invalid_argument("tensor shape must have at least one dim");
    for (int d : s)
        if (d <= 0) throw std::invalid_argument("tensor shape extents must be positive: " + shape_str(s));
}

void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error(std::string(op) + ": non-finite operand value");
}

void check_finite_result(const char* op, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error(std::string(op) + ": non-finite result value");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
}

Tape* operand_tape(std::initializer_list<const Tensor*> ts) {
    Tape* tape = nullptr;
    for (const Tensor* t : ts) {
        Tape* tt = t->impl()->tape;
        if (!tt) continue;
        if (tape && tape != tt)
            throw std::logic_error("operands belong to different tapes");
        tape = tt;
    }
    return tape;
}

bool any_tracked(std::initializer_list<const Tensor*> ts) {
    for (const Tensor* t : ts)
        if (t->impl()->tracked) return true;
    return false;
}

void ensure_grad(const ImplPtr& n) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
}

// Attach the result to the tape (if any operand is tracked) and record
// the backward closure.
void finish_op(const char* op, Tensor& result, std::initializer_list<const Tensor*> operands,
               const std::function<void()>& backward_fn) {
    check_finite_result(op, result.data());
    Tape* tape = operand_tape(operands);
    if (!tape || !any_tracked(operands)) return;
    result.impl()->tape = tape;
    result.impl()->tracked = true;
    for (const Tensor* t : operands) tape->adopt(t->impl());
    tape->record(result.impl(), backward_fn);
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) {
    check_shape(shape);
    impl_ = std::make_shared<TensorImpl>();
    impl_->data.assign(static_cast<size_t>(numel(shape)), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
    check_shape(shape);
    if (static_cast<int>(data.size()) != numel(shape))
        throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
}

const std::vector<double>& Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return impl_->grad;
}

Tensor Tensor::grad_tensor() const { return Tensor(shape(), grad()); }

double Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor Tensor::clone() const {
    return Tensor(impl_->shape, impl_->data);
}

// ---- Tape ------------------------------------------------------------------

Tape::~Tape() {
    for (auto& n : nodes_) {
        n->tape = nullptr;
        n->tracked = false;
    }
}

void Tape::watch(Tensor& t) {
    auto n = t.impl();
    if (!n) throw std::invalid_argument("watch: undefined tensor");
    if (n->tape && n->tape != this) throw std::logic_error("watch: tensor already on another tape");
    n->tape = this;
    n->tracked = true;
    n->grad.clear();
    watched_.push_back(n);
    nodes_.push_back(n);
}

void Tape::adopt(const std::shared_ptr<detail::TensorImpl>& node) {
    if (node->tape == nullptr) return;  // constants need no cleanup
    nodes_.push_back(node);
}

void Tape::record(std::shared_ptr<detail::TensorImpl> result, std::function<void()> fn) {
    nodes_.push_back(std::move(result));
    entries_.push_back(std::move(fn));
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    (loss.defined() ? shape_str(loss.shape()) : std::string("<none>")));
    auto n = loss.impl();
    if (n->tape != this)
        throw std::logic_error("backward: loss was not recorded on this tape");
    n->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    // disconnected watched tensors get an explicit zero gradient
    for (auto& w : watched_) ensure_grad(w);
    for (auto& w : watched_) check_finite_result("backward", w->grad);
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    check_finite("add", a.data());
    check_finite("add", b.data());
    Tensor r(a.shape());
    const auto& da = a.data();
    const auto& db = b.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = da[i] + db[i];
    auto ia = a.impl(), ib = b.impl(), ir = r.impl();
    finish_op("add", r, {&a, &b}, [ia, ib, ir]() {
        if (ir->grad.empty()) return;
        if (ia->tracked) {
            ensure_grad(ia);
            for (size_t i = 0; i < ir->grad.size(); ++i) ia->grad[i] += ir->grad[i];
        }
        if (ib->tracked) {
            ensure_grad(ib);
            for (size_t i = 0; i < ir->grad.size(); ++i) ib->grad[i] += ir->grad[i];
        }
    });
    return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    check_finite("sub", a.data());
    check_finite("sub", b.data());
    Tensor r(a.shape());
    const auto& da = a.data();
    const auto& db = b.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = da[i] - db[i];
    auto ia = a.impl(), ib = b.impl(), ir = r.impl();
    finish_op("sub", r, {&a, &b}, [ia, ib, ir]() {
        if (ir->grad.empty()) return;
        if (ia->tracked) {
            ensure_grad(ia);
            for (size_t i = 0; i < ir->grad.size(); ++i) ia->grad[i] += ir->grad[i];
        }
        if (ib->tracked) {
            ensure_grad(ib);
            for (size_t i = 0; i < ir->grad.size(); ++i) ib->grad[i] -= ir->grad[i];
        }
    });
    return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    check_finite("mul", a.data());
    check_finite("mul", b.data());
    Tensor r(a.shape());
    const auto& da = a.data();
    const auto& db = b.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = da[i] * db[i];
    auto ia = a.impl(), ib = b.impl(), ir = r.impl();
    finish_op("mul", r, {&a, &b}, [ia, ib, ir]() {
        if (ir->grad.empty()) return;
        if (ia->tracked) {
            ensure_grad(ia);
            for (size_t i = 0; i < ir->grad.size(); ++i) ia->grad[i] += ir->grad[i] * ib->data[i];
        }
        if (ib->tracked) {
            ensure_grad(ib);
            for (size_t i = 0; i < ir->grad.size(); ++i) ib->grad[i] += ir->grad[i] * ia->data[i];
        }
    });
    return r;
}

Tensor add_scalar(const Tensor& a, double s) {
    check_finite("add_scalar", a.data());
    if (!std::isfinite(s)) throw std::runtime_error("add_scalar: non-finite operand value");
    Tensor r(a.shape());
    const auto& da = a.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = da[i] + s;
    auto ia = a.impl(), ir = r.impl();
    finish_op("add_scalar", r, {&a}, [ia, ir]() {
        if (ir->grad.empty() || !ia->tracked) return;
        ensure_grad(ia);
        for (size_t i = 0; i < ir->grad.size(); ++i) ia->grad[i] += ir->grad[i];
    });
    return r;
}

Tensor mul_scalar(const Tensor& a, double s) {
    check_finite("mul_scalar", a.data());
    if (!std::isfinite(s)) throw std::runtime_error("mul_scalar: non-finite operand value");
    Tensor r(a.shape());
    const auto& da = a.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = da[i] * s;
    auto ia = a.impl(), ir = r.impl();
    finish_op("mul_scalar", r, {&a}, [ia, ir, s]() {
        if (ir->grad.empty() || !ia->tracked) return;
        ensure_grad(ia);
        for (size_t i = 0; i < ir->grad.size(); ++i) ia->grad[i] += ir->grad[i] * s;
    });
    return r;
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    check_finite("matmul", a.data());
    check_finite("matmul", b.data());
    const int n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
    Tensor r({n, m});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* pr = r.data().data();
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * m;
            double* rrow = pr + i * m;
            for (int j = 0; j < m; ++j) rrow[j] += av * brow[j];
        }
    auto ia = a.impl(), ib = b.impl(), ir = r.impl();
    finish_op("matmul", r, {&a, &b}, [ia, ib, ir, n, k, m]() {
        if (ir->grad.empty()) return;
        const double* g = ir->grad.data();
        if (ia->tracked) {
            ensure_grad(ia);
            double* ga = ia->grad.data();
            const double* pb2 = ib->data.data();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g + i * m;
                    const double* brow = pb2 + p * m;
                    for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
        }
        if (ib->tracked) {
            ensure_grad(ib);
            double* gb = ib->grad.data();
            const double* pa2 = ia->data.data();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    const double av = pa2[i * k + p];
                    const double* grow = g + i * m;
                    double* gbrow = gb + p * m;
                    for (int j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                }
        }
    });
    return r;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[0])
        throw std::invalid_argument("linear: incompatible shapes " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
    if (b.shape().size() != 1 || b.shape()[0] != w.shape()[1])
        throw std::invalid_argument("linear: bias shape " + shape_str(b.shape()) +
                                    " does not match weight " + shape_str(w.shape()));
    check_finite("linear", x.data());
    check_finite("linear", w.data());
    check_finite("linear", b.data());
    const int n = x.shape()[0], k = x.shape()[1], m = w.shape()[1];
    Tensor r({n, m});
    const double* px = x.data().data();
    const double* pw = w.data().data();
    const double* pbias = b.data().data();
    double* pr = r.data().data();
    for (int i = 0; i < n; ++i) {
        double* rrow = pr + i * m;
        for (int j = 0; j < m; ++j) rrow[j] = pbias[j];
        for (int p = 0; p < k; ++p) {
            const double xv = px[i * k + p];
            const double* wrow = pw + p * m;
            for (int j = 0; j < m; ++j) rrow[j] += xv * wrow[j];
        }
    }
    auto ix = x.impl(), iw = w.impl(), ib = b.impl(), ir = r.impl();
    finish_op("linear", r, {&x, &w, &b}, [ix, iw, ib, ir, n, k, m]() {
        if (ir->grad.empty()) return;
        const double* g = ir->grad.data();
        if (ix->tracked) {
            ensure_grad(ix);
            double* gx = ix->grad.data();
            const double* pw2 = iw->data.data();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g + i * m;
                    const double* wrow = pw2 + p * m;
                    for (int j = 0; j < m; ++j) acc += grow[j] * wrow[j];
                    gx[i * k + p] += acc;
                }
        }
        if (iw->tracked) {
            ensure_grad(iw);
            double* gw = iw->grad.data();
            const double* px2 = ix->data.data();
            for (int i = 0; i < n; ++i)
                for (int p = 0; p < k; ++p) {
                    const double xv = px2[i * k + p];
                    const double* grow = g + i * m;
                    double* gwrow = gw + p * m;
                    for (int j = 0; j < m; ++j) gwrow[j] += xv * grow[j];
                }
        }
        if (ib->tracked) {
            ensure_grad(ib);
            double* gb = ib->grad.data();
            for (int i = 0; i < n; ++i) {
                const double* grow = g + i * m;
                for (int j = 0; j < m; ++j) gb[j] += grow[j];
            }
        }
    });
    return r;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    if (x.shape().size() != 4 || w.shape().size() != 4)
        throw std::invalid_argument("conv2d: expected 4-d input and weight, got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    if (x.shape()[1] != w.shape()[1])
        throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                                    shape_str(w.shape()));
    if (b.shape().size() != 1 || b.shape()[0] != w.shape()[0])
        throw std::invalid_argument("conv2d: bias shape " + shape_str(b.shape()) +
                                    " does not match weight " + shape_str(w.shape()));
    if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
    const int N = x.shape()[0], CI = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int CO = w.shape()[0], KH = w.shape()[2], KW = w.shape()[3];
    const int OH = H + 2 * pad - KH + 1, OW = W + 2 * pad - KW + 1;
    if (OH <= 0 || OW <= 0)
        throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) +
                                    " too large for input " + shape_str(x.shape()));
    check_finite("conv2d", x.data());
    check_finite("conv2d", w.data());
    check_finite("conv2d", b.data());
    Tensor r({N, CO, OH, OW});
    const double* px = x.data().data();
    const double* pw = w.data().data();
    const double* pbias = b.data().data();
    double* pr = r.data().data();
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < CO; ++co) {
            double* out = pr + ((n * CO + co) * OH) * OW;
            const double bias = pbias[co];
            for (int i = 0; i < OH * OW; ++i) out[i] = bias;
            for (int ci = 0; ci < CI; ++ci) {
                const double* in = px + ((n * CI + ci) * H) * W;
                const double* ker = pw + ((co * CI + ci) * KH) * KW;
                for (int ky = 0; ky < KH; ++ky)
                    for (int kx = 0; kx < KW; ++kx) {
                        const double wv = ker[ky * KW + kx];
                        if (wv == 0.0) continue;
                        const int oy0 = std::max(0, pad - ky);
                        const int oy1 = std::min(OH, H + pad - ky);
                        const int ox0 = std::max(0, pad - kx);
                        const int ox1 = std::min(OW, W + pad - kx);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const double* irow = in + (oy + ky - pad) * W + (kx - pad);
                            double* orow = out + oy * OW;
                            for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
                        }
                    }
            }
        }
    auto ix = x.impl(), iw = w.impl(), ib = b.impl(), ir = r.impl();
    finish_op("conv2d", r, {&x, &w, &b}, [ix, iw, ib, ir, N, CI, H, W, CO, KH, KW, OH, OW, pad]() {
        if (ir->grad.empty()) return;
        const double* g = ir->grad.data();
        if (ib->tracked) {
            ensure_grad(ib);
            double* gb = ib->grad.data();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < CO; ++co) {
                    const double* grow = g + ((n * CO + co) * OH) * OW;
                    double acc = 0.0;
                    for (int i = 0; i < OH * OW; ++i) acc += grow[i];
                    gb[co] += acc;
                }
        }
        if (iw->tracked) {
            ensure_grad(iw);
            double* gw = iw->grad.data();
            const double* px2 = ix->data.data();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < CO; ++co) {
                    const double* go = g + ((n * CO + co) * OH) * OW;
                    for (int ci = 0; ci < CI; ++ci) {
                        const double* in = px2 + ((n * CI + ci) * H) * W;
                        double* gker = gw + ((co * CI + ci) * KH) * KW;
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx) {
                                const int oy0 = std::max(0, pad - ky);
                                const int oy1 = std::min(OH, H + pad - ky);
                                const int ox0 = std::max(0, pad - kx);
                                const int ox1 = std::min(OW, W + pad - kx);
                                double acc = 0.0;
                                for (int oy = oy0; oy < oy1; ++oy) {
                                    const double* irow = in + (oy + ky - pad) * W + (kx - pad);
                                    const double* grow = go + oy * OW;
                                    for (int ox = ox0; ox < ox1; ++ox) acc += grow[ox] * irow[ox];
                                }
                                gker[ky * KW + kx] += acc;
                            }
                    }
                }
        }
        if (ix->tracked) {
            ensure_grad(ix);
            double* gx = ix->grad.data();
            const double* pw2 = iw->data.data();
            for (int n = 0; n < N; ++n)
                for (int co = 0; co < CO; ++co) {
                    const double* go = g + ((n * CO + co) * OH) * OW;
                    for (int ci = 0; ci < CI; ++ci) {
                        double* gin = gx + ((n * CI + ci) * H) * W;
                        const double* ker = pw2 + ((co * CI + ci) * KH) * KW;
                        for (int ky = 0; ky < KH; ++ky)
                            for (int kx = 0; kx < KW; ++kx) {
                                const double wv = ker[ky * KW + kx];
                                if (wv == 0.0) continue;
                                const int oy0 = std::max(0, pad - ky);
                                const int oy1 = std::min(OH, H + pad - ky);
                                const int ox0 = std::max(0, pad - kx);
                                const int ox1 = std::min(OW, W + pad - kx);
                                for (int oy = oy0; oy < oy1; ++oy) {
                                    double* girow = gin + (oy + ky - pad) * W + (kx - pad);
                                    const double* grow = go + oy * OW;
                                    for (int ox = ox0; ox < ox1; ++ox) girow[ox] += wv * grow[ox];
                                }
                            }
                    }
                }
        }
    });
    return r;
}

Tensor maxpool2(const Tensor& x) {
    if (x.shape().size() != 4)
        throw std::invalid_argument("maxpool2: expected 4-d input, got " + shape_str(x.shape()));
    const int N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("maxpool2: spatial dims must be even, got " + shape_str(x.shape()));
    check_finite("maxpool2", x.data());
    const int OH = H / 2, OW = W / 2;
    Tensor r({N, C, OH, OW});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(N * C * OH * OW));
    const double* px = x.data().data();
    double* pr = r.data().data();
    int* pi = argmax->data();
    for (int nc = 0; nc < N * C; ++nc) {
        const double* in = px + nc * H * W;
        double* out = pr + nc * OH * OW;
        int* idx = pi + nc * OH * OW;
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox) {
                // ties go to the first maximal element in window scan order
                const int base = (2 * oy) * W + 2 * ox;
                const int cand[4] = {base, base + 1, base + W, base + W + 1};
                int best = cand[0];
                for (int t = 1; t < 4; ++t)
                    if (in[cand[t]] > in[best]) best = cand[t];
                out[oy * OW + ox] = in[best];
                idx[oy * OW + ox] = nc * H * W + best;
            }
    }
    auto ix = x.impl(), ir = r.impl();
    finish_op("maxpool2", r, {&x}, [ix, ir, argmax]() {
        if (ir->grad.empty() || !ix->tracked) return;
        ensure_grad(ix);
        const auto& g = ir->grad;
        const auto& idx = *argmax;
        for (size_t i = 0; i < g.size(); ++i) ix->grad[static_cast<size_t>(idx[i])] += g[i];
    });
    return r;
}

// ---- nonlinearities ----------------------------------------------------------

Tensor relu(const Tensor& x) {
    check_finite("relu", x.data());
    Tensor r(x.shape());
    const auto& dx = x.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = dx[i] > 0.0 ? dx[i] : 0.0;
    auto ix = x.impl(), ir = r.impl();
    finish_op("relu", r, {&x}, [ix, ir]() {
        if (ir->grad.empty() || !ix->tracked) return;
        ensure_grad(ix);
        for (size_t i = 0; i < ir->grad.size(); ++i)
            if (ix->data[i] > 0.0) ix->grad[i] += ir->grad[i];
    });
    return r;
}

Tensor sign(const Tensor& x) {
    check_finite("sign", x.data());
    Tensor r(x.shape());
    const auto& dx = x.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = dx[i] > 0.0 ? 1.0 : (dx[i] < 0.0 ? -1.0 : 0.0);
    // derivative is zero a.e.; nothing flows back
    finish_op("sign", r, {&x}, []() {});
    return r;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (lo > hi) throw std::invalid_argument("clamp: lo > hi");
    check_finite("clamp", x.data());
    Tensor r(x.shape());
    const auto& dx = x.data();
    auto& dr = r.data();
    for (size_t i = 0; i < dr.size(); ++i) dr[i] = std::min(hi, std::max(lo, dx[i]));
    auto ix = x.impl(), ir = r.impl();
    finish_op("clamp", r, {&x}, [ix, ir, lo, hi]() {
        if (ir->grad.empty() || !ix->tracked) return;
        ensure_grad(ix);
        for (size_t i = 0; i < ir->grad.size(); ++i)
            if (ix->data[i] > lo && ix->data[i] < hi) ix->grad[i] += ir->grad[i];
    });
    return r;
}

// ---- structure ---------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape s) {
    check_shape(s);
    if (numel(s) != x.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                    shape_str(s));
    Tensor r(std::move(s), x.data());
    auto ix = x.impl(), ir = r.impl();
    finish_op("reshape", r, {&x}, [ix, ir]() {
        if (ir->grad.empty() || !ix->tracked) return;
        ensure_grad(ix);
        for (size_t i = 0; i < ir->grad.size(); ++i) ix->grad[i] += ir->grad[i];
    });
    return r;
}

Tensor select(const Tensor& x, int i) {
    if (x.shape().size() < 2)
        throw std::invalid_argument("select: need rank >= 2, got " + shape_str(x.shape()));
    const int n = x.shape()[0];
    if (i < 0 || i >= n) throw std::invalid_argument("select: index " + std::to_string(i) +
                                                     " out of range for " + shape_str(x.shape()));
    Shape s(x.shape().begin() + 1, x.shape().end());
    const int stride = numel(s);
    std::vector<double> d(x.data().begin() + static_cast<long>(i) * stride,
                          x.data().begin() + static_cast<long>(i + 1) * stride);
    Tensor r(std::move(s), std::move(d));
    auto ix = x.impl(), ir = r.impl();
    finish_op("select", r, {&x}, [ix, ir, i, stride]() {
        if (ir->grad.empty() || !ix->tracked) return;
        ensure_grad(ix);
        for (int j = 0; j < stride; ++j)
            ix->grad[static_cast<size_t>(i) * stride + j] += ir->grad[static_cast<size_t>(j)];
    });
    return r;
}

Tensor stack(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("stack: no tensors given");
    const Shape& s0 = parts[0].shape();
    for (const Tensor& p : parts)
        if (p.shape() != s0)
            throw std::invalid_argument("stack: shape mismatch " + shape_str(s0) + " vs " +
                                        shape_str(p.shape()));
    const int k = static_cast<int>(parts.size());
    const int stride = numel(s0);
    Shape s;
    s.push_back(k);
    s.insert(s.end(), s0.begin(), s0.end());
    Tensor r(std::move(s));
    auto& dr = r.data();
    for (int i = 0; i < k; ++i) {
        check_finite("stack", parts[static_cast<size_t>(i)].data());
        std::copy(parts[static_cast<size_t>(i)].data().begin(),
                  parts[static_cast<size_t>(i)].data().end(),
                  dr.begin() + static_cast<long>(i) * stride);
    }
    // finish_op takes an initializer_list; do the equivalent by hand
    check_finite_result("stack", r.data());
    Tape* tape = nullptr;
    bool tracked = false;
    for (const Tensor& p : parts) {
        Tape* tt = p.impl()->tape;
        if (tt) {
            if (tape && tape != tt) throw std::logic_error("operands belong to different tapes");
            tape = tt;
        }
        tracked = tracked || p.impl()->tracked;
    }
    if (tape && tracked) {
        r.impl()->tape = tape;
        r.impl()->tracked = true;
        std::vector<ImplPtr> impls;
        for (const Tensor& p : parts) {
            impls.push_back(p.impl());
            tape->adopt(p.impl());
        }
        auto ir = r.impl();
        tape->record(ir, [impls, ir, stride]() {
            if (ir->grad.empty()) return;
            for (size_t i = 0; i < impls.size(); ++i) {
                if (!impls[i]->tracked) continue;
                ensure_grad(impls[i]);
                for (int j = 0; j < stride; ++j)
                    impls[i]->grad[static_cast<size_t>(j)] += ir->grad[i * stride + static_cast<size_t>(j)];
            }
        });
    }
    return r;
}

// ---- reductions --------------------------------------------------------------

Tensor sum(const Tensor& x) {
    check_finite("sum", x.data());
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor r = Tensor::scalar(acc);
    auto ix = x.impl(), ir = r.impl();
    finish_op("sum", r, {&x}, [ix, ir]() {
        if (ir->grad.empty() || !ix->tracked) return;
        ensure_grad(ix);
        const double g = ir->grad[0];
        for (double& v : ix->grad) v += g;
    });
    return r;
}

Tensor mean(const Tensor& x) {
    check_finite("mean", x.data());
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    Tensor r = Tensor::scalar(acc * inv);
    auto ix = x.impl(), ir = r.impl();
    finish_op("mean", r, {&x}, [ix, ir, inv]() {
        if (ir->grad.empty() || !ix->tracked) return;
        ensure_grad(ix);
        const double g = ir->grad[0] * inv;
        for (double& v : ix->grad) v += g;
    });
    return r;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.shape().size() != 2)
        throw std::invalid_argument("softmax_cross_entropy: logits must be [n,C], got " +
                                    shape_str(logits.shape()));
    const int n = logits.shape()[0], C = logits.shape()[1];
    if (static_cast<int>(labels.size()) != n)
        throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(n) + " rows");
    check_finite("softmax_cross_entropy", logits.data());
    auto probs = std::make_shared<std::vector<double>>(logits.data());
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        if (y < 0 || y >= C)
            throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                        " out of range [0," + std::to_string(C) + ")");
        double* row = probs->data() + i * C;
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        loss += std::log(z) + mx - row[y];
        const double invz = 1.0 / z;
        for (int c = 0; c < C; ++c) row[c] = std::exp(row[c] - mx) * invz;
    }
    Tensor r = Tensor::scalar(loss / n);
    auto il = logits.impl(), ir = r.impl();
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    finish_op("softmax_cross_entropy", r, {&logits}, [il, ir, probs, labels_copy, n, C]() {
        if (ir->grad.empty() || !il->tracked) return;
        ensure_grad(il);
        const double g = ir->grad[0] / n;
        for (int i = 0; i < n; ++i) {
            const double* prow = probs->data() + i * C;
            double* grow = il->grad.data() + i * C;
            const int y = (*labels_copy)[static_cast<size_t>(i)];
            for (int c = 0; c < C; ++c) grow[c] += g * (prow[c] - (c == y ? 1.0 : 0.0));
        }
    });
    return r;
}

std::vector<double> softmax_values(const Tensor& logits) {
    if (logits.shape().size() != 2)
        throw std::invalid_argument("softmax_values: logits must be [n,C]");
    const int n = logits.shape()[0], C = logits.shape()[1];
    std::vector<double> out(logits.data());
    for (int i = 0; i < n; ++i) {
        double* row = out.data() + i * C;
        double mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < C; ++c) z += std::exp(row[c] - mx);
        for (int c = 0; c < C; ++c) row[c] = std::exp(row[c] - mx) / z;
    }
    return out;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_difference_grad: h must be positive");
    Tensor g(x.shape());
    Tensor probe = x.clone();
    for (int i = 0; i < x.size(); ++i) {
        const double orig = probe.data()[static_cast<size_t>(i)];
        probe.data()[static_cast<size_t>(i)] = orig + h;
        const double fp = f(probe);
        probe.data()[static_cast<size_t>(i)] = orig - h;
        const double fm = f(probe);
        probe.data()[static_cast<size_t>(i)] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_difference_grad: non-finite function value");
        g.data()[static_cast<size_t>(i)] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace nol
