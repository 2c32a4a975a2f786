#include "phasekit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "phasekit/kernels.hpp"

namespace phasekit::ag {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

void TensorNode::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(const Shape& shape) {
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->data.assign(static_cast<std::size_t>(numel(shape)), 0.0);
    return Tensor(n, nullptr);
}

Tensor Tensor::full(const Shape& shape, double value) {
    Tensor t = zeros(shape);
    std::fill(t.node->data.begin(), t.node->data.end(), value);
    return t;
}

Tensor Tensor::from(std::vector<double> data, const Shape& shape) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape))
        throw ShapeError("Tensor::from: data size " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = shape;
    n->data = std::move(data);
    return Tensor(n, nullptr);
}

Tensor Tensor::scalar(double v) { return from({v}, {1}); }

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev) {
    Tensor t = zeros(shape);
    for (auto& x : t.node->data) x = rng.normal(0.0, stddev);
    return t;
}

double Tensor::item() const {
    if (node->data.size() != 1)
        throw ShapeError("item() called on non-scalar tensor " + shape_str(node->shape));
    return node->data[0];
}

const std::vector<double>& Tensor::grad() const {
    node->ensure_grad();
    return node->grad;
}

Tensor Tensor::detached() const {
    auto n = std::make_shared<TensorNode>();
    n->shape = node->shape;
    n->data = node->data;
    return Tensor(n, nullptr);
}

void Tape::record(const char* op, std::function<void()> backward) {
    ops_.push_back({op, std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (numel(loss.shape()) != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    loss.node->ensure_grad();
    loss.node->grad[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
}

void Tape::clear() { ops_.clear(); }

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------
namespace {

const kern::Kernels& K() { return kern::active(); }

Tape* pick_tape(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins)
        if (t->tape != nullptr) return t->tape;
    return nullptr;
}

bool any_rg(std::initializer_list<const Tensor*> ins) {
    for (const Tensor* t : ins)
        if (t->node->requires_grad) return true;
    return false;
}

void check_finite(const char* op, const std::vector<double>& d) {
    if (d.empty()) return;
    double s = K().sum(d.data(), d.size());
    if (std::isfinite(s)) return;
    for (double x : d)
        if (!std::isfinite(x)) throw Error(std::string("non-finite output in op '") + op + "'");
    throw Error(std::string("non-finite output in op '") + op + "' (sum overflow)");
}

Tensor finish(const char* op, Tensor out, Tape* tape, bool rg, std::function<void()> bwd) {
    check_finite(op, out.node->data);
    out.tape = tape;
    out.node->requires_grad = rg;
    // Outputs that never receive a gradient (not on the path to the loss)
    // keep an empty grad vector; their backward is a no-op.
    if (tape != nullptr && rg) {
        NodePtr node = out.node;
        tape->record(op, [node, fn = std::move(bwd)]() {
            if (!node->grad.empty()) fn();
        });
    }
    return out;
}

struct BPlan {
    Shape out;
    std::vector<std::int64_t> stride_a, stride_b;
    bool same = false;
};

BPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
    BPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t nd = std::max(a.size(), b.size());
    p.out.assign(nd, 1);
    std::vector<std::int64_t> da(nd, 1), db(nd, 1);
    for (std::size_t i = 0; i < nd; ++i) {
        std::int64_t va = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        std::int64_t vb = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (va != vb && va != 1 && vb != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                             " are not broadcastable");
        p.out[i] = std::max(va, vb);
        da[i] = va;
        db[i] = vb;
    }
    p.stride_a.assign(nd, 0);
    p.stride_b.assign(nd, 0);
    std::int64_t sa = 1, sb = 1;
    for (int i = static_cast<int>(nd) - 1; i >= 0; --i) {
        p.stride_a[i] = (da[i] == 1 && p.out[i] != 1) ? 0 : sa;
        p.stride_b[i] = (db[i] == 1 && p.out[i] != 1) ? 0 : sb;
        sa *= da[i];
        sb *= db[i];
    }
    return p;
}

// Calls f(out_index, a_index, b_index) over the broadcast iteration space.
template <class F>
void bc_iter(const BPlan& p, F&& f) {
    const std::size_t nd = p.out.size();
    std::vector<std::int64_t> idx(nd, 0);
    std::int64_t ia = 0, ib = 0;
    const std::int64_t total = numel(p.out);
    for (std::int64_t io = 0; io < total; ++io) {
        f(io, ia, ib);
        for (int d = static_cast<int>(nd) - 1; d >= 0; --d) {
            ++idx[d];
            ia += p.stride_a[d];
            ib += p.stride_b[d];
            if (idx[d] < p.out[d]) break;
            idx[d] = 0;
            ia -= p.stride_a[d] * p.out[d];
            ib -= p.stride_b[d] * p.out[d];
        }
    }
}

enum class Arith { Add, Sub, Mul, Div };

Tensor arith(const char* op, Arith kind, const Tensor& a, const Tensor& b) {
    BPlan p = broadcast_plan(op, a.shape(), b.shape());
    Tensor out = Tensor::zeros(p.out);
    const double* pa = a.node->data.data();
    const double* pb = b.node->data.data();
    double* po = out.node->data.data();
    const std::size_t n = out.node->data.size();
    if (p.same) {
        switch (kind) {
            case Arith::Add: K().add(pa, pb, po, n); break;
            case Arith::Sub: K().sub(pa, pb, po, n); break;
            case Arith::Mul: K().mul(pa, pb, po, n); break;
            case Arith::Div: K().div(pa, pb, po, n); break;
        }
    } else {
        switch (kind) {
            case Arith::Add: bc_iter(p, [&](auto io, auto ia, auto ib) { po[io] = pa[ia] + pb[ib]; }); break;
            case Arith::Sub: bc_iter(p, [&](auto io, auto ia, auto ib) { po[io] = pa[ia] - pb[ib]; }); break;
            case Arith::Mul: bc_iter(p, [&](auto io, auto ia, auto ib) { po[io] = pa[ia] * pb[ib]; }); break;
            case Arith::Div: bc_iter(p, [&](auto io, auto ia, auto ib) { po[io] = pa[ia] / pb[ib]; }); break;
        }
    }
    Tape* tape = pick_tape({&a, &b});
    bool rg = any_rg({&a, &b});
    NodePtr na = a.node, nb = b.node, no = out.node;
    return finish(op, out, tape, rg, [=]() {
        const std::vector<double>& g = no->grad;
        const std::size_t gn = g.size();
        if (na->requires_grad) {
            na->ensure_grad();
            if (p.same) {
                switch (kind) {
                    case Arith::Add:
                    case Arith::Sub: K().axpy(1.0, g.data(), na->grad.data(), gn); break;
                    case Arith::Mul: K().fma_acc(g.data(), nb->data.data(), na->grad.data(), gn); break;
                    case Arith::Div: {
                        for (std::size_t i = 0; i < gn; ++i) na->grad[i] += g[i] / nb->data[i];
                        break;
                    }
                }
            } else {
                double* ga = na->grad.data();
                const double* db = nb->data.data();
                switch (kind) {
                    case Arith::Add:
                    case Arith::Sub:
                        bc_iter(p, [&](auto io, auto ia, auto) { ga[ia] += g[io]; });
                        break;
                    case Arith::Mul:
                        bc_iter(p, [&](auto io, auto ia, auto ib) { ga[ia] += g[io] * db[ib]; });
                        break;
                    case Arith::Div:
                        bc_iter(p, [&](auto io, auto ia, auto ib) { ga[ia] += g[io] / db[ib]; });
                        break;
                }
            }
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            double* gb = nb->grad.data();
            const double* da = na->data.data();
            const double* db = nb->data.data();
            const double* dy = no->data.data();
            if (p.same) {
                switch (kind) {
                    case Arith::Add: K().axpy(1.0, g.data(), gb, gn); break;
                    case Arith::Sub: K().axpy(-1.0, g.data(), gb, gn); break;
                    case Arith::Mul: K().fma_acc(g.data(), da, gb, gn); break;
                    case Arith::Div:
                        for (std::size_t i = 0; i < gn; ++i) gb[i] -= g[i] * dy[i] / db[i];
                        break;
                }
            } else {
                switch (kind) {
                    case Arith::Add:
                        bc_iter(p, [&](auto io, auto, auto ib) { gb[ib] += g[io]; });
                        break;
                    case Arith::Sub:
                        bc_iter(p, [&](auto io, auto, auto ib) { gb[ib] -= g[io]; });
                        break;
                    case Arith::Mul:
                        bc_iter(p, [&](auto io, auto ia, auto ib) { gb[ib] += g[io] * da[ia]; });
                        break;
                    case Arith::Div:
                        bc_iter(p, [&](auto io, auto, auto ib) { gb[ib] -= g[io] * dy[io] / db[ib]; });
                        break;
                }
            }
        }
    });
}

template <class ValFn, class DerFn>
Tensor unary(const char* op, const Tensor& x, ValFn vf, DerFn df) {
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.node->data.size();
    for (std::size_t i = 0; i < n; ++i) out.node->data[i] = vf(x.node->data[i]);
    Tape* tape = pick_tape({&x});
    bool rg = any_rg({&x});
    NodePtr nx = x.node, no = out.node;
    return finish(op, out, tape, rg, [=]() {
        nx->ensure_grad();
        for (std::size_t i = 0; i < nx->data.size(); ++i)
            nx->grad[i] += no->grad[i] * df(nx->data[i], no->data[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b) { return arith("add", Arith::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return arith("sub", Arith::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return arith("mul", Arith::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return arith("div", Arith::Div, a, b); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    K().scale(c, x.node->data.data(), out.node->data.data(), x.node->data.size());
    NodePtr nx = x.node, no = out.node;
    return finish("scale", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        K().axpy(c, no->grad.data(), nx->grad.data(), nx->grad.size());
    });
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary("add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// structural
// ---------------------------------------------------------------------------
Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const std::size_t m = static_cast<std::size_t>(a.dim(0));
    const std::size_t k = static_cast<std::size_t>(a.dim(1));
    const std::size_t n = static_cast<std::size_t>(b.dim(1));
    Tensor out = Tensor::zeros({a.dim(0), b.dim(1)});
    kern::gemm(false, false, m, n, k, a.node->data.data(), b.node->data.data(), out.node->data.data());
    NodePtr na = a.node, nb = b.node, no = out.node;
    return finish("matmul", out, pick_tape({&a, &b}), any_rg({&a, &b}), [=]() {
        if (na->requires_grad) {
            na->ensure_grad();
            // dA = dC * B^T
            kern::gemm(false, true, m, k, n, no->grad.data(), nb->data.data(), na->grad.data(), true);
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            // dB = A^T * dC
            kern::gemm(true, false, k, n, m, na->data.data(), no->grad.data(), nb->grad.data(), true);
        }
    });
}

Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(x.shape()));
    const std::int64_t m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out.node->data[j * m + i] = x.node->data[i * n + j];
    NodePtr nx = x.node, no = out.node;
    return finish("transpose", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) nx->grad[i * n + j] += no->grad[j * m + i];
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (numel(shape) != numel(x.shape()))
        throw ShapeError("reshape: cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    Tensor out = Tensor::zeros(shape);
    out.node->data = x.node->data;
    NodePtr nx = x.node, no = out.node;
    return finish("reshape", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        K().axpy(1.0, no->grad.data(), nx->grad.data(), nx->grad.size());
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: empty input list");
    const int nd = parts[0].ndim();
    if (axis < 0 || axis >= nd) throw ShapeError("concat: bad axis");
    Shape out_shape = parts[0].shape();
    std::int64_t axis_total = 0;
    for (const Tensor& p : parts) {
        if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < nd; ++d)
            if (d != axis && p.dim(d) != out_shape[static_cast<std::size_t>(d)])
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(parts[0].shape()));
        axis_total += p.dim(axis);
    }
    out_shape[static_cast<std::size_t>(axis)] = axis_total;
    Tensor out = Tensor::zeros(out_shape);

    std::int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out_shape[static_cast<std::size_t>(d)];
    for (int d = axis + 1; d < nd; ++d) inner *= out_shape[static_cast<std::size_t>(d)];

    std::vector<std::int64_t> offsets(parts.size());
    {
        std::int64_t off = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            offsets[pi] = off;
            off += parts[pi].dim(axis);
        }
    }
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const std::int64_t pa = parts[pi].dim(axis);
        const double* src = parts[pi].node->data.data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(out.node->data.data() + (o * axis_total + offsets[pi]) * inner,
                        src + o * pa * inner, static_cast<std::size_t>(pa * inner) * sizeof(double));
    }

    std::vector<const Tensor*> ptrs;
    Tape* tape = nullptr;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.tape) tape = p.tape;
        rg = rg || p.node->requires_grad;
    }
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node);
    NodePtr no = out.node;
    return finish("concat", out, tape, rg, [=]() {
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
            if (!nodes[pi]->requires_grad) continue;
            nodes[pi]->ensure_grad();
            const std::int64_t pa = nodes[pi]->shape[static_cast<std::size_t>(axis)];
            for (std::int64_t o = 0; o < outer; ++o)
                K().axpy(1.0, no->grad.data() + (o * axis_total + offsets[pi]) * inner,
                         nodes[pi]->grad.data() + o * pa * inner, static_cast<std::size_t>(pa * inner));
        }
    });
}

Tensor slice_rows(const Tensor& x, std::int64_t start, std::int64_t len) {
    if (x.ndim() < 1 || start < 0 || len < 0 || start + len > x.dim(0))
        throw ShapeError("slice_rows: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of bounds for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[0] = len;
    std::int64_t inner = numel(x.shape()) / x.dim(0);
    Tensor out = Tensor::zeros(out_shape);
    std::memcpy(out.node->data.data(), x.node->data.data() + start * inner,
                static_cast<std::size_t>(len * inner) * sizeof(double));
    NodePtr nx = x.node, no = out.node;
    return finish("slice_rows", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        K().axpy(1.0, no->grad.data(), nx->grad.data() + start * inner, static_cast<std::size_t>(len * inner));
    });
}

Tensor select_cols(const Tensor& x, const std::vector<std::int64_t>& cols) {
    if (x.ndim() != 2) throw ShapeError("select_cols: expected 2-D, got " + shape_str(x.shape()));
    const std::int64_t m = x.dim(0), n = x.dim(1);
    for (auto c : cols)
        if (c < 0 || c >= n) throw ShapeError("select_cols: column index out of range");
    const std::int64_t c = static_cast<std::int64_t>(cols.size());
    Tensor out = Tensor::zeros({m, c});
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out.node->data[i * c + j] = x.node->data[i * n + cols[static_cast<std::size_t>(j)]];
    NodePtr nx = x.node, no = out.node;
    auto cols_copy = cols;
    return finish("select_cols", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < c; ++j)
                nx->grad[i * n + cols_copy[static_cast<std::size_t>(j)]] += no->grad[i * c + j];
    });
}

Tensor index_rows(const Tensor& x, const std::vector<std::int64_t>& rows) {
    if (x.ndim() != 2) throw ShapeError("index_rows: expected 2-D, got " + shape_str(x.shape()));
    const std::int64_t n = x.dim(1);
    for (auto r : rows)
        if (r < 0 || r >= x.dim(0)) throw ShapeError("index_rows: row index out of range");
    const std::int64_t m = static_cast<std::int64_t>(rows.size());
    Tensor out = Tensor::zeros({m, n});
    for (std::int64_t i = 0; i < m; ++i)
        std::memcpy(out.node->data.data() + i * n,
                    x.node->data.data() + rows[static_cast<std::size_t>(i)] * n,
                    static_cast<std::size_t>(n) * sizeof(double));
    NodePtr nx = x.node, no = out.node;
    auto rows_copy = rows;
    return finish("index_rows", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        for (std::int64_t i = 0; i < m; ++i)
            K().axpy(1.0, no->grad.data() + i * n,
                     nx->grad.data() + rows_copy[static_cast<std::size_t>(i)] * n,
                     static_cast<std::size_t>(n));
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------
Tensor sum(const Tensor& x) {
    Tensor out = Tensor::scalar(K().sum(x.node->data.data(), x.node->data.size()));
    NodePtr nx = x.node, no = out.node;
    return finish("sum", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        const double g = no->grad[0];
        for (auto& v : nx->grad) v += g;
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor sum_axis(const Tensor& x, int axis, bool keepdim) {
    const int nd = x.ndim();
    if (axis < 0 || axis >= nd) throw ShapeError("sum_axis: bad axis");
    std::int64_t outer = 1, inner = 1;
    const std::int64_t ax = x.dim(axis);
    for (int d = 0; d < axis; ++d) outer *= x.dim(d);
    for (int d = axis + 1; d < nd; ++d) inner *= x.dim(d);
    Shape out_shape;
    for (int d = 0; d < nd; ++d) {
        if (d == axis) {
            if (keepdim) out_shape.push_back(1);
        } else {
            out_shape.push_back(x.dim(d));
        }
    }
    if (out_shape.empty()) out_shape.push_back(1);
    Tensor out = Tensor::zeros(out_shape);
    const double* px = x.node->data.data();
    double* po = out.node->data.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t a = 0; a < ax; ++a)
            K().axpy(1.0, px + (o * ax + a) * inner, po + o * inner, static_cast<std::size_t>(inner));
    NodePtr nx = x.node, no = out.node;
    return finish("sum_axis", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t a = 0; a < ax; ++a)
                K().axpy(1.0, no->grad.data() + o * inner, nx->grad.data() + (o * ax + a) * inner,
                         static_cast<std::size_t>(inner));
    });
}

Tensor mean_axis(const Tensor& x, int axis, bool keepdim) {
    return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------
Tensor sin(const Tensor& x) {
    return unary("sin", x, [](double v) { return std::sin(v); },
                 [](double v, double) { return std::cos(v); });
}
Tensor cos(const Tensor& x) {
    return unary("cos", x, [](double v) { return std::cos(v); },
                 [](double v, double) { return -std::sin(v); });
}
Tensor exp(const Tensor& x) {
    return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}
Tensor log(const Tensor& x) {
    return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}
Tensor sqrt(const Tensor& x) {
    return unary("sqrt", x, [](double v) { return std::sqrt(v); },
                 [](double, double y) { return 0.5 / y; });
}
Tensor tanh(const Tensor& x) {
    return unary("tanh", x, [](double v) { return std::tanh(v); },
                 [](double, double y) { return 1.0 - y * y; });
}
Tensor erf(const Tensor& x) {
    return unary("erf", x, [](double v) { return std::erf(v); },
                 [](double v, double) { return 2.0 / std::sqrt(kPi) * std::exp(-v * v); });
}
Tensor relu(const Tensor& x) {
    return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor arccos(const Tensor& x) {
    static constexpr double lim = 1.0 - 1e-7;
    return unary("arccos", x,
                 [](double v) { return std::acos(std::clamp(v, -lim, lim)); },
                 [](double v, double) {
                     const double c = std::clamp(v, -lim, lim);
                     return -1.0 / std::sqrt(1.0 - c * c);
                 });
}

Tensor atan2(const Tensor& y, const Tensor& x) {
    if (y.shape() != x.shape())
        throw ShapeError("atan2: shape mismatch " + shape_str(y.shape()) + " vs " + shape_str(x.shape()));
    Tensor out = Tensor::zeros(y.shape());
    for (std::size_t i = 0; i < out.node->data.size(); ++i)
        out.node->data[i] = std::atan2(y.node->data[i], x.node->data[i]);
    NodePtr ny = y.node, nx = x.node, no = out.node;
    return finish("atan2", out, pick_tape({&y, &x}), any_rg({&y, &x}), [=]() {
        for (std::size_t i = 0; i < no->data.size(); ++i) {
            const double yv = ny->data[i], xv = nx->data[i];
            const double r2 = xv * xv + yv * yv;
            const double g = no->grad[i];
            if (ny->requires_grad) {
                ny->ensure_grad();
                ny->grad[i] += g * xv / r2;
            }
            if (nx->requires_grad) {
                nx->ensure_grad();
                nx->grad[i] -= g * yv / r2;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// composite layers
// ---------------------------------------------------------------------------
Tensor softmax(const Tensor& x) {
    if (x.ndim() < 1) throw ShapeError("softmax: scalar input");
    const std::int64_t inner = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.size() / inner;
    Tensor out = Tensor::zeros(x.shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* px = x.node->data.data() + r * inner;
        double* po = out.node->data.data() + r * inner;
        double mx = px[0];
        for (std::int64_t i = 1; i < inner; ++i) mx = std::max(mx, px[i]);
        double s = 0.0;
        for (std::int64_t i = 0; i < inner; ++i) {
            po[i] = std::exp(px[i] - mx);
            s += po[i];
        }
        for (std::int64_t i = 0; i < inner; ++i) po[i] /= s;
    }
    NodePtr nx = x.node, no = out.node;
    return finish("softmax", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = no->data.data() + r * inner;
            const double* g = no->grad.data() + r * inner;
            double* gx = nx->grad.data() + r * inner;
            const double dot = K().dot(g, y, static_cast<std::size_t>(inner));
            for (std::int64_t i = 0; i < inner; ++i) gx[i] += (g[i] - dot) * y[i];
        }
    });
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: scalar input");
    const std::int64_t inner = x.dim(x.ndim() - 1);
    const std::int64_t rows = x.size() / inner;
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> inv_sigma(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* px = x.node->data.data() + r * inner;
        double* po = out.node->data.data() + r * inner;
        const double mu = K().sum(px, static_cast<std::size_t>(inner)) / static_cast<double>(inner);
        double var = 0.0;
        for (std::int64_t i = 0; i < inner; ++i) var += (px[i] - mu) * (px[i] - mu);
        var /= static_cast<double>(inner);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(r)] = is;
        for (std::int64_t i = 0; i < inner; ++i) po[i] = (px[i] - mu) * is;
    }
    NodePtr nx = x.node, no = out.node;
    return finish("layer_norm", out, pick_tape({&x}), any_rg({&x}), [=]() {
        nx->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = no->data.data() + r * inner;
            const double* g = no->grad.data() + r * inner;
            double* gx = nx->grad.data() + r * inner;
            const double is = inv_sigma[static_cast<std::size_t>(r)];
            const double gm = K().sum(g, static_cast<std::size_t>(inner)) / static_cast<double>(inner);
            const double gym = K().dot(g, y, static_cast<std::size_t>(inner)) / static_cast<double>(inner);
            for (std::int64_t i = 0; i < inner; ++i) gx[i] += is * (g[i] - gm - y[i] * gym);
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

Tensor circular_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.ndim() != 2 || w.ndim() != 3 || b.ndim() != 1)
        throw ShapeError("circular_conv1d: expected x (Cin,N), w (Cout,Cin,K), b (Cout)");
    const std::int64_t cin = x.dim(0), n = x.dim(1);
    const std::int64_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(1) != cin || b.dim(0) != cout)
        throw ShapeError("circular_conv1d: shape mismatch x=" + shape_str(x.shape()) + " w=" +
                         shape_str(w.shape()));
    const std::int64_t off = k / 2;
    Tensor out = Tensor::zeros({cout, n});
    const double* px = x.node->data.data();
    const double* pw = w.node->data.data();
    double* po = out.node->data.data();
    for (std::int64_t o = 0; o < cout; ++o) {
        const double bias = b.node->data[static_cast<std::size_t>(o)];
        for (std::int64_t t = 0; t < n; ++t) {
            double acc = bias;
            for (std::int64_t i = 0; i < cin; ++i) {
                const double* wr = pw + (o * cin + i) * k;
                const double* xr = px + i * n;
                for (std::int64_t kk = 0; kk < k; ++kk) {
                    std::int64_t tt = (t + kk - off) % n;
                    if (tt < 0) tt += n;
                    acc += wr[kk] * xr[tt];
                }
            }
            po[t + o * n] = acc;
        }
    }
    NodePtr nx = x.node, nw = w.node, nb = b.node, no = out.node;
    return finish("circular_conv1d", out, pick_tape({&x, &w, &b}), any_rg({&x, &w, &b}), [=]() {
        const double* g = no->grad.data();
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (std::int64_t o = 0; o < cout; ++o)
                nb->grad[static_cast<std::size_t>(o)] += K().sum(g + o * n, static_cast<std::size_t>(n));
        }
        if (nw->requires_grad) {
            nw->ensure_grad();
            for (std::int64_t o = 0; o < cout; ++o)
                for (std::int64_t i = 0; i < cin; ++i)
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        for (std::int64_t t = 0; t < n; ++t) {
                            std::int64_t tt = (t + kk - off) % n;
                            if (tt < 0) tt += n;
                            acc += g[o * n + t] * nx->data[static_cast<std::size_t>(i * n + tt)];
                        }
                        nw->grad[static_cast<std::size_t>((o * cin + i) * k + kk)] += acc;
                    }
        }
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (std::int64_t o = 0; o < cout; ++o)
                for (std::int64_t i = 0; i < cin; ++i) {
                    const double* wr = nw->data.data() + (o * cin + i) * k;
                    for (std::int64_t t = 0; t < n; ++t) {
                        const double gv = g[o * n + t];
                        for (std::int64_t kk = 0; kk < k; ++kk) {
                            std::int64_t tt = (t + kk - off) % n;
                            if (tt < 0) tt += n;
                            nx->grad[static_cast<std::size_t>(i * n + tt)] += gv * wr[kk];
                        }
                    }
                }
        }
    });
}

// ---------------------------------------------------------------------------
// batch 3x3 rotation ops
// ---------------------------------------------------------------------------
namespace {

// c = op(a) * op(b) for row-major 3x3 blocks
void mul3(const double* a, const double* b, double* c, bool ta, bool tb, bool accumulate) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = accumulate ? c[i * 3 + j] : 0.0;
            for (int l = 0; l < 3; ++l) {
                const double av = ta ? a[l * 3 + i] : a[i * 3 + l];
                const double bv = tb ? b[j * 3 + l] : b[l * 3 + j];
                acc += av * bv;
            }
            c[i * 3 + j] = acc;
        }
}

}  // namespace

Tensor bmm3(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != 9 || b.dim(1) != 9 || a.dim(0) != b.dim(0))
        throw ShapeError("bmm3: expected (K,9) pairs, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::int64_t rows = a.dim(0);
    Tensor out = Tensor::zeros({rows, 9});
    for (std::int64_t r = 0; r < rows; ++r)
        mul3(a.node->data.data() + r * 9, b.node->data.data() + r * 9, out.node->data.data() + r * 9,
             trans_a, trans_b, false);
    NodePtr na = a.node, nb = b.node, no = out.node;
    return finish("bmm3", out, pick_tape({&a, &b}), any_rg({&a, &b}), [=]() {
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* A = na->data.data() + r * 9;
            const double* B = nb->data.data() + r * 9;
            const double* G = no->grad.data() + r * 9;
            if (na->requires_grad) {
                na->ensure_grad();
                double* dA = na->grad.data() + r * 9;
                if (!trans_a && !trans_b) mul3(G, B, dA, false, true, true);
                else if (trans_a && !trans_b) mul3(B, G, dA, false, true, true);
                else if (!trans_a && trans_b) mul3(G, B, dA, false, false, true);
                else mul3(B, G, dA, true, true, true);
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                double* dB = nb->grad.data() + r * 9;
                if (!trans_a && !trans_b) mul3(A, G, dB, true, false, true);
                else if (trans_a && !trans_b) mul3(A, G, dB, false, false, true);
                else if (!trans_a && trans_b) mul3(G, A, dB, true, false, true);
                else mul3(G, A, dB, true, true, true);
            }
        }
    });
}

Tensor rotate3(const Tensor& r, const Tensor& v) {
    if (r.ndim() != 2 || r.dim(1) != 9) throw ShapeError("rotate3: r must be (K,9)");
    const std::int64_t rows = r.dim(0);
    const bool bcast = v.dim(0) == 1;
    if (v.ndim() != 2 || v.dim(1) != 3 || (!bcast && v.dim(0) != rows))
        throw ShapeError("rotate3: v must be (K,3) or (1,3), got " + shape_str(v.shape()));
    Tensor out = Tensor::zeros({rows, 3});
    for (std::int64_t q = 0; q < rows; ++q) {
        const double* R = r.node->data.data() + q * 9;
        const double* V = v.node->data.data() + (bcast ? 0 : q * 3);
        double* O = out.node->data.data() + q * 3;
        for (int i = 0; i < 3; ++i) O[i] = R[i * 3] * V[0] + R[i * 3 + 1] * V[1] + R[i * 3 + 2] * V[2];
    }
    NodePtr nr = r.node, nv = v.node, no = out.node;
    return finish("rotate3", out, pick_tape({&r, &v}), any_rg({&r, &v}), [=]() {
        for (std::int64_t q = 0; q < rows; ++q) {
            const double* R = nr->data.data() + q * 9;
            const double* V = nv->data.data() + (bcast ? 0 : q * 3);
            const double* G = no->grad.data() + q * 3;
            if (nr->requires_grad) {
                nr->ensure_grad();
                double* dR = nr->grad.data() + q * 9;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) dR[i * 3 + j] += G[i] * V[j];
            }
            if (nv->requires_grad) {
                nv->ensure_grad();
                double* dV = nv->grad.data() + (bcast ? 0 : q * 3);
                for (int j = 0; j < 3; ++j)
                    dV[j] += R[j] * G[0] + R[3 + j] * G[1] + R[6 + j] * G[2];
            }
        }
    });
}

Tensor cross3(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.ndim() != 2 || a.dim(1) != 3)
        throw ShapeError("cross3: expected matching (K,3) inputs");
    const std::int64_t rows = a.dim(0);
    Tensor out = Tensor::zeros(a.shape());
    auto cross = [](const double* x, const double* y, double* o, bool acc) {
        const double c0 = x[1] * y[2] - x[2] * y[1];
        const double c1 = x[2] * y[0] - x[0] * y[2];
        const double c2 = x[0] * y[1] - x[1] * y[0];
        if (acc) {
            o[0] += c0;
            o[1] += c1;
            o[2] += c2;
        } else {
            o[0] = c0;
            o[1] = c1;
            o[2] = c2;
        }
    };
    for (std::int64_t r = 0; r < rows; ++r)
        cross(a.node->data.data() + r * 3, b.node->data.data() + r * 3, out.node->data.data() + r * 3, false);
    NodePtr na = a.node, nb = b.node, no = out.node;
    return finish("cross3", out, pick_tape({&a, &b}), any_rg({&a, &b}), [=]() {
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* A = na->data.data() + r * 3;
            const double* B = nb->data.data() + r * 3;
            const double* G = no->grad.data() + r * 3;
            if (na->requires_grad) {
                na->ensure_grad();
                cross(B, G, na->grad.data() + r * 3, true);  // da += b x g
            }
            if (nb->requires_grad) {
                nb->ensure_grad();
                cross(G, A, nb->grad.data() + r * 3, true);  // db += g x a
            }
        }
    });
}

Tensor atan2_phase(const Tensor& u, const Tensor& v) {
    if (u.shape() != v.shape())
        throw ShapeError("atan2_phase: shape mismatch " + shape_str(u.shape()) + " vs " + shape_str(v.shape()));
    Tensor out = Tensor::zeros(u.shape());
    const std::size_t n = out.node->data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double uu = u.node->data[i], vv = v.node->data[i];
        if (uu * uu + vv * vv < 1e-16) {
            out.node->data[i] = 0.0;  // documented dead zone
        } else {
            double s = std::atan2(vv, uu) / (2.0 * kPi);
            s -= std::floor(s);
            if (s >= 1.0) s = 0.0;
            out.node->data[i] = s;
        }
    }
    NodePtr nu = u.node, nv = v.node, no = out.node;
    return finish("atan2_phase", out, pick_tape({&u, &v}), any_rg({&u, &v}), [=]() {
        for (std::size_t i = 0; i < no->data.size(); ++i) {
            const double uu = nu->data[i], vv = nv->data[i];
            const double r2 = uu * uu + vv * vv;
            if (r2 < 1e-16) continue;
            const double g = no->grad[i] / (2.0 * kPi * r2);
            if (nu->requires_grad) {
                nu->ensure_grad();
                nu->grad[i] -= g * vv;
            }
            if (nv->requires_grad) {
                nv->ensure_grad();
                nv->grad[i] += g * uu;
            }
        }
    });
}

double erfinv(double x) {
    if (x <= -1.0 || x >= 1.0) throw Error("erfinv: argument outside (-1, 1)");
    if (x == 0.0) return 0.0;
    // Initial guess (Giles 2010), then Newton refinement to double precision.
    double w = -std::log((1.0 - x) * (1.0 + x));
    double p;
    if (w < 6.25) {
        w -= 3.125;
        p = -3.6444120640178196996e-21;
        p = -1.685059138182016589e-19 + p * w;
        p = 1.2858480715256400167e-18 + p * w;
        p = 1.115787767802518096e-17 + p * w;
        p = -1.333171662854620906e-16 + p * w;
        p = 2.0972767875968561637e-17 + p * w;
        p = 6.6376381343583238325e-15 + p * w;
        p = -4.0545662729752068639e-14 + p * w;
        p = -8.1519341976054721522e-14 + p * w;
        p = 2.6335093153082322977e-12 + p * w;
        p = -1.2975133253453532498e-11 + p * w;
        p = -5.4154120542946279317e-11 + p * w;
        p = 1.051212273321532285e-09 + p * w;
        p = -4.1126339803469836976e-09 + p * w;
        p = -2.9070369957882005086e-08 + p * w;
        p = 4.2347877827932403518e-07 + p * w;
        p = -1.3654692000834678645e-06 + p * w;
        p = -1.3882523362786468719e-05 + p * w;
        p = 0.0001867342080340571352 + p * w;
        p = -0.00074070253416626697512 + p * w;
        p = -0.0060336708714301490533 + p * w;
        p = 0.24015818242558961693 + p * w;
        p = 1.6536545626831027356 + p * w;
    } else if (w < 16.0) {
        w = std::sqrt(w) - 3.25;
        p = 2.2137376921775787049e-09;
        p = 9.0756561938885390979e-08 + p * w;
        p = -2.7517406297064545428e-07 + p * w;
        p = 1.8239629214389227755e-08 + p * w;
        p = 1.5027403968909827627e-06 + p * w;
        p = -4.013867526981545969e-06 + p * w;
        p = 2.9234449089955446044e-06 + p * w;
        p = 1.2475304481671778723e-05 + p * w;
        p = -4.7318229009055733981e-05 + p * w;
        p = 6.8284851459573175448e-05 + p * w;
        p = 2.4031110387097893999e-05 + p * w;
        p = -0.0003550375203628474796 + p * w;
        p = 0.00095328937973738049703 + p * w;
        p = -0.0016882755560235047313 + p * w;
        p = 0.0024914420961078508066 + p * w;
        p = -0.0037512085075692412107 + p * w;
        p = 0.005370914553590063617 + p * w;
        p = 1.0052589676941592334 + p * w;
        p = 3.0838856104922207635 + p * w;
    } else {
        w = std::sqrt(w) - 5.0;
        p = -2.7109920616438573243e-11;
        p = -2.5556418169965252055e-10 + p * w;
        p = 1.5076572693500548083e-09 + p * w;
        p = -3.7894654401267369937e-09 + p * w;
        p = 7.6157012080783393804e-09 + p * w;
        p = -1.4960026627149240478e-08 + p * w;
        p = 2.9147953450901080826e-08 + p * w;
        p = -6.7711997758452339498e-08 + p * w;
        p = 2.2900482228026654717e-07 + p * w;
        p = -9.9298272942317002539e-07 + p * w;
        p = 4.5260625972231537039e-06 + p * w;
        p = -1.9681778105531670567e-05 + p * w;
        p = 7.5995277030017761139e-05 + p * w;
        p = -0.00021503011930044477347 + p * w;
        p = -0.00013871931833623122026 + p * w;
        p = 1.0103004648645343977 + p * w;
        p = 4.8499064014085844221 + p * w;
    }
    double y = p * x;
    // Two Newton steps: y -= (erf(y) - x) / (2/sqrt(pi) e^{-y^2})
    for (int i = 0; i < 2; ++i) {
        const double err = std::erf(y) - x;
        y -= err * std::sqrt(kPi) / 2.0 * std::exp(y * y);
    }
    return y;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------
double global_grad_norm(const std::vector<Param>& params) {
    double acc = 0.0;
    for (const Param& p : params) {
        const auto& g = p.value.node->grad;
        if (!g.empty()) acc += kern::active().sum_sq(g.data(), g.size());
    }
    return std::sqrt(acc);
}

void AdamW::step(std::vector<Param>& params, double lr) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].value.node->data.size(), 0.0);
            v_[i].assign(params[i].value.node->data.size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw Error("AdamW::step: parameter list changed size");
    const double eff_lr = lr >= 0.0 ? lr : cfg_.lr;

    double scale = 1.0;
    if (cfg_.clip_norm > 0.0) {
        const double norm = global_grad_norm(params);
        if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& node = *params[i].value.node;
        if (m_[i].size() != node.data.size()) throw Error("AdamW::step: shape changed for " + params[i].name);
        node.ensure_grad();
        for (std::size_t j = 0; j < node.data.size(); ++j) {
            const double g = node.grad[j] * scale;
            m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
            v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            node.data[j] -= eff_lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * node.data[j]);
        }
    }
}

void AdamW::zero_grad(std::vector<Param>& params) {
    for (Param& p : params) {
        auto& g = p.value.node->grad;
        std::fill(g.begin(), g.end(), 0.0);
    }
}

}  // namespace phasekit::ag
