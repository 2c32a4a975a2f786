#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "phasekit/common.hpp"

namespace phasekit::ag {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t numel(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;

    void ensure_grad();
};

using NodePtr = std::shared_ptr<TensorNode>;

class Tape;

// Value-semantics handle to a node. The tape pointer decides whether ops on
// this tensor are recorded; detached() yields a view that never records.
struct Tensor {
    NodePtr node;
    Tape* tape = nullptr;

    Tensor() = default;
    Tensor(NodePtr n, Tape* t) : node(std::move(n)), tape(t) {}

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from(std::vector<double> data, const Shape& shape);
    static Tensor scalar(double v);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0);

    const Shape& shape() const { return node->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(node->data.size()); }
    std::int64_t dim(int i) const { return node->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node->shape.size()); }
    const std::vector<double>& data() const { return node->data; }
    std::vector<double>& data() { return node->data; }
    double item() const;

    Tensor& set_requires_grad(bool on) {
        node->requires_grad = on;
        return *this;
    }
    bool requires_grad() const { return node->requires_grad; }
    const std::vector<double>& grad() const;

    Tensor with_tape(Tape* t) const { return Tensor(node, t); }
    Tensor detached() const;  // fresh leaf sharing no autodiff history
};

// Reverse-mode tape: an ordered log of backward closures.
class Tape {
public:
    void record(const char* op, std::function<void()> backward);
    // Seeds grad(loss) = 1 and runs every recorded closure in reverse order.
    void backward(const Tensor& loss);
    void clear();
    std::size_t size() const { return ops_.size(); }

private:
    struct Op {
        const char* name;
        std::function<void()> backward;
    };
    std::vector<Op> ops_;
};

// ---- elementwise / broadcast arithmetic -----------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

// ---- structural ------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t len);
Tensor select_cols(const Tensor& x, const std::vector<std::int64_t>& cols);
Tensor index_rows(const Tensor& x, const std::vector<std::int64_t>& rows);

// ---- reductions -------------------------------------------------------------
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, int axis, bool keepdim = false);

// ---- pointwise nonlinearities ----------------------------------------------
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor erf(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor atan2(const Tensor& y, const Tensor& x);  // same shape
// arccos with input clamped to [-1+1e-7, 1-1e-7] before value and gradient.
Tensor arccos(const Tensor& x);

// ---- composite layers --------------------------------------------------------
Tensor softmax(const Tensor& x);          // last axis
Tensor layer_norm(const Tensor& x, double eps = 1e-5);  // last axis, no affine
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// x: (C_in, N), w: (C_out, C_in, K), b: (C_out); circular padding, stride 1.
Tensor circular_conv1d(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- small-rotation batch ops -----------------------------------------------
// Row-wise 3x3 matrix products over (K, 9) row-major matrices.
Tensor bmm3(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// Row-wise R * v; v may be (K, 3) or (1, 3) broadcast.
Tensor rotate3(const Tensor& r, const Tensor& v);
Tensor cross3(const Tensor& a, const Tensor& b);
// Per-element phase from (u, v): atan2(v, u)/(2*pi) mod 1, with a zero-gradient
// dead zone where ||(u,v)|| < 1e-8.
Tensor atan2_phase(const Tensor& u, const Tensor& v);

double erfinv(double x);  // double-precision inverse error function

// ---- optimizer ----------------------------------------------------------------
struct Param {
    std::string name;
    Tensor value;
};

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double clip_norm = 0.5;  // global gradient-norm clip; <=0 disables
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies global-norm clipping, then a decoupled-weight-decay Adam update
    // with bias correction. lr overrides cfg.lr when >= 0 (for schedules).
    void step(std::vector<Param>& params, double lr = -1.0);
    void zero_grad(std::vector<Param>& params);

    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    std::vector<std::vector<double>>& moment1() { return m_; }
    std::vector<std::vector<double>>& moment2() { return v_; }

private:
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

double global_grad_norm(const std::vector<Param>& params);

}  // namespace phasekit::ag
