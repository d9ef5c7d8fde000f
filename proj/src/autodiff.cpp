#include "cgaug/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cgaug/common.hpp"

namespace cgaug {

namespace {

using Shape = std::vector<std::size_t>;

void check_same_tape(Var a, Var b, const char* op) {
    if (!a.valid() || !b.valid() || a.tape != b.tape) {
        throw std::invalid_argument(std::string(op) + ": vars not on the same tape");
    }
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// strides of `in` aligned to `out`, 0 where broadcast
std::vector<std::size_t> bcast_strides(const Shape& out, const Shape& in) {
    std::vector<std::size_t> st(out.size(), 0);
    std::size_t run = 1;
    for (std::size_t i = in.size(); i-- > 0;) {
        std::size_t oi = i + (out.size() - in.size());
        st[oi] = (in[i] == 1 && out[oi] != 1) ? 0 : run;
        run *= in[i];
    }
    return st;
}

// Iterates output linear index together with the mapped input indices.
template <class Fn>
void bcast_loop(const Shape& out, const Shape& sa, const Shape& sb, Fn&& fn) {
    const std::size_t n = shape_size(out);
    if (sa == sb) {
        for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
        return;
    }
    const auto stra = bcast_strides(out, sa);
    const auto strb = bcast_strides(out, sb);
    const std::size_t rank = out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        fn(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            idx[d] += 1;
            ia += stra[d];
            ib += strb[d];
            if (idx[d] < out[d]) break;
            ia -= stra[d] * out[d];
            ib -= strb[d] * out[d];
            idx[d] = 0;
        }
    }
}

Tensor& gbuf(std::vector<Tensor>& grads, int id, const Tensor& like) {
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty()) g = Tensor::zeros(like.shape());
    return g;
}

bool touched(const std::vector<Tensor>& grads, int id) {
    return !grads[static_cast<std::size_t>(id)].empty();
}

// f(a,b) -> value; dfa/dfb(a,b) -> local derivative factors
template <class F, class DA, class DB>
Var binary_ew(Var a, Var b, const char* name, F f, DA dfa, DB dfb) {
    check_same_tape(a, b, name);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    Shape out_shape = broadcast_shapes(av.shape(), bv.shape(), name);
    Tensor out(out_shape);
    bcast_loop(out_shape, av.shape(), bv.shape(),
               [&](std::size_t o, std::size_t ia, std::size_t ib) {
                   out[o] = f(av[ia], bv[ib]);
               });
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, bid = b.id, oid = v.id;
        bool need_a = t.requires_grad(a), need_b = t.requires_grad(b);
        t.record_backward(oid, [aid, bid, oid, need_a, need_b, dfa, dfb](
                                   Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            const Tensor& av2 = tp.val(aid);
            const Tensor& bv2 = tp.val(bid);
            Tensor* ga = need_a ? &gbuf(grads, aid, av2) : nullptr;
            Tensor* gb = need_b ? &gbuf(grads, bid, bv2) : nullptr;
            bcast_loop(go.shape(), av2.shape(), bv2.shape(),
                       [&](std::size_t o, std::size_t ia, std::size_t ib) {
                           double g = go[o];
                           if (ga) (*ga)[ia] += g * dfa(av2[ia], bv2[ib]);
                           if (gb) (*gb)[ib] += g * dfb(av2[ia], bv2[ib]);
                       });
        });
    }
    return v;
}

template <class F, class D>
Var unary_ew(Var a, const char* name, F f, D df) {
    if (!a.valid()) throw std::invalid_argument(std::string(name) + ": invalid var");
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    bool rg = t.requires_grad(a);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, oid = v.id;
        t.record_backward(oid, [aid, oid, df](Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            const Tensor& av2 = tp.val(aid);
            const Tensor& ov = tp.val(oid);
            Tensor& ga = gbuf(grads, aid, av2);
            for (std::size_t i = 0; i < go.size(); ++i) {
                ga[i] += go[i] * df(av2[i], ov[i]);
            }
        });
    }
    return v;
}

void check_2d(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                         shape_str(t.shape()));
    }
}

}  // namespace

// ----------------------------- Tape -----------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
    return record(std::move(value), requires_grad, nullptr);
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::record_backward(int id, BackwardFn back) {
    nodes_[static_cast<std::size_t>(id)].back = std::move(back);
}

const Tensor& Tape::value(Var v) const {
    if (!v.valid() || v.tape != this) throw std::invalid_argument("value(): var not on this tape");
    return nodes_[static_cast<std::size_t>(v.id)].value;
}

bool Tape::requires_grad(Var v) const {
    return nodes_[static_cast<std::size_t>(v.id)].requires_grad;
}

const Tensor& Tape::grad(Var v) const {
    if (!v.valid() || v.tape != this) throw std::invalid_argument("grad(): var not on this tape");
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.empty()) {
        static thread_local Tensor zeros;
        zeros = Tensor::zeros(n.value.shape());
        return zeros;
    }
    return n.grad;
}

void Tape::zero_grad() {
    for (auto& n : nodes_) n.grad = Tensor();
}

void Tape::backward(Var loss) {
    if (!loss.valid() || loss.tape != this) {
        throw std::invalid_argument("backward(): loss not on this tape");
    }
    Node& ln = nodes_[static_cast<std::size_t>(loss.id)];
    if (ln.value.size() != 1) {
        throw ShapeError("backward(): loss must be scalar, got " + shape_str(ln.value.shape()));
    }
    std::vector<Tensor> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss.id)] = Tensor::full(ln.value.shape(), 1.0);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!touched(grads, id)) continue;
        if (n.back) {
            n.back(*this, grads);
        } else if (n.requires_grad) {
            // requires-grad leaf: accumulate persistently
            if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
            const Tensor& g = grads[static_cast<std::size_t>(id)];
            for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
        }
    }
}

void Tape::clear() { nodes_.clear(); }

// ----------------------------- elementwise ops -----------------------------

Var add(Var a, Var b) {
    return binary_ew(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double) { return 1.0; },
                     [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary_ew(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double) { return 1.0; },
                     [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary_ew(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double, double y) { return y; },
                     [](double x, double) { return x; });
}

Var divide(Var a, Var b) {
    check_same_tape(a, b, "divide");
    const Tensor& bv = a.tape->value(b);
    for (std::size_t i = 0; i < bv.size(); ++i) {
        if (bv[i] == 0.0) throw NumericDomainError("divide: division by zero");
    }
    return binary_ew(a, b, "divide", [](double x, double y) { return x / y; },
                     [](double, double y) { return 1.0 / y; },
                     [](double x, double y) { return -x / (y * y); });
}

Var neg(Var a) {
    return unary_ew(a, "neg", [](double x) { return -x; },
                    [](double, double) { return -1.0; });
}

Var exp(Var a) {
    return unary_ew(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double o) { return o; });
}

Var log(Var a) {
    const Tensor& av = a.tape->value(a);
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i] <= 0.0) {
            throw NumericDomainError("log: non-positive input " + std::to_string(av[i]));
        }
    }
    return unary_ew(a, "log", [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
    return unary_ew(a, "tanh", [](double x) { return std::tanh(x); },
                    [](double, double o) { return 1.0 - o * o; });
}

Var sigmoid(Var a) {
    return unary_ew(a, "sigmoid",
                    [](double x) {
                        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                        : std::exp(x) / (1.0 + std::exp(x));
                    },
                    [](double, double o) { return o * (1.0 - o); });
}

Var square(Var a) {
    return unary_ew(a, "square", [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

Var powc(Var a, double p) {
    const Tensor& av = a.tape->value(a);
    for (std::size_t i = 0; i < av.size(); ++i) {
        if (av[i] <= 0.0 && p < 0.0) {
            throw NumericDomainError("powc: non-positive base with negative exponent");
        }
    }
    return unary_ew(a, "powc", [p](double x) { return std::pow(x, p); },
                    [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

Var scale(Var a, double s) {
    return unary_ew(a, "scale", [s](double x) { return s * x; },
                    [s](double, double) { return s; });
}

Var add_const(Var a, double c) {
    return unary_ew(a, "add_const", [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

// ----------------------------- linear algebra -----------------------------

Var matmul(Var a, Var b) {
    check_same_tape(a, b, "matmul");
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    check_2d(av, "matmul");
    check_2d(bv, "matmul");
    const std::size_t n = av.shape()[0], k = av.shape()[1];
    const std::size_t k2 = bv.shape()[0], m = bv.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dims differ, " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
    }
    Tensor out({n, m});
    {
        const double* A = av.data();
        const double* B = bv.data();
        double* C = out.data();
        for (std::size_t i = 0; i < n; ++i) {
            double* crow = C + i * m;
            const double* arow = A + i * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double aik = arow[kk];
                if (aik == 0.0) continue;
                const double* brow = B + kk * m;
                for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
            }
        }
    }
    bool rg = t.requires_grad(a) || t.requires_grad(b);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, bid = b.id, oid = v.id;
        bool need_a = t.requires_grad(a), need_b = t.requires_grad(b);
        t.record_backward(oid, [=](Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            const Tensor& A = tp.val(aid);
            const Tensor& B = tp.val(bid);
            const std::size_t nn = A.shape()[0], kk = A.shape()[1], mm = B.shape()[1];
            if (need_a) {
                Tensor& ga = gbuf(grads, aid, A);
                // gA = gC . B^T
                for (std::size_t i = 0; i < nn; ++i) {
                    const double* grow = go.data() + i * mm;
                    double* garow = ga.data() + i * kk;
                    for (std::size_t x = 0; x < kk; ++x) {
                        const double* brow = B.data() + x * mm;
                        double s = 0.0;
                        for (std::size_t j = 0; j < mm; ++j) s += grow[j] * brow[j];
                        garow[x] += s;
                    }
                }
            }
            if (need_b) {
                Tensor& gb = gbuf(grads, bid, B);
                // gB = A^T . gC
                for (std::size_t x = 0; x < kk; ++x) {
                    double* gbrow = gb.data() + x * mm;
                    for (std::size_t i = 0; i < nn; ++i) {
                        const double axi = A.data()[i * kk + x];
                        if (axi == 0.0) continue;
                        const double* grow = go.data() + i * mm;
                        for (std::size_t j = 0; j < mm; ++j) gbrow[j] += axi * grow[j];
                    }
                }
            }
        });
    }
    return v;
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    check_2d(av, "transpose");
    const std::size_t n = av.shape()[0], m = av.shape()[1];
    Tensor out({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.at2(j, i) = av.at2(i, j);
    bool rg = t.requires_grad(a);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, oid = v.id;
        t.record_backward(oid, [=](Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            const Tensor& A = tp.val(aid);
            Tensor& ga = gbuf(grads, aid, A);
            const std::size_t nn = A.shape()[0], mm = A.shape()[1];
            for (std::size_t i = 0; i < nn; ++i)
                for (std::size_t j = 0; j < mm; ++j) ga.at2(i, j) += go.at2(j, i);
        });
    }
    return v;
}

// ----------------------------- reductions -----------------------------

namespace {

Var reduce_all(Var a, bool is_mean, const char* name) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.size() == 0) throw ShapeError(std::string(name) + ": empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    const double factor = is_mean ? 1.0 / static_cast<double>(av.size()) : 1.0;
    Tensor out = Tensor::scalar(s * factor);
    bool rg = t.requires_grad(a);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, oid = v.id;
        t.record_backward(oid, [aid, oid, factor](Tape& tp, std::vector<Tensor>& grads) {
            const double g = grads[static_cast<std::size_t>(oid)][0] * factor;
            const Tensor& A = tp.val(aid);
            Tensor& ga = gbuf(grads, aid, A);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return v;
}

Var reduce_axis(Var a, std::size_t axis, bool keepdim, bool is_mean, const char* name) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() == 1) {
        if (axis != 0) throw ShapeError(std::string(name) + ": axis out of range for rank-1");
        Var s = reduce_all(a, is_mean, name);
        if (!keepdim) return s;
        // reshape scalar -> [1]
        return repeat_rows(s, 1);  // becomes [1,1]; acceptable only for 2-D flows
    }
    check_2d(av, name);
    if (axis > 1) throw ShapeError(std::string(name) + ": axis out of range");
    const std::size_t n = av.shape()[0], m = av.shape()[1];
    const std::size_t red = axis == 0 ? n : m;
    const double factor = is_mean ? 1.0 / static_cast<double>(red) : 1.0;
    Shape out_shape;
    if (keepdim) {
        out_shape = axis == 0 ? Shape{1, m} : Shape{n, 1};
    } else {
        out_shape = axis == 0 ? Shape{m} : Shape{n};
    }
    Tensor out(out_shape);
    if (axis == 0) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) out[j] += av.at2(i, j);
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += av.at2(i, j);
            out[i] = s;
        }
    }
    if (is_mean) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
    }
    bool rg = t.requires_grad(a);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, oid = v.id;
        t.record_backward(oid, [aid, oid, axis, factor](Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            const Tensor& A = tp.val(aid);
            Tensor& ga = gbuf(grads, aid, A);
            const std::size_t nn = A.shape()[0], mm = A.shape()[1];
            if (axis == 0) {
                for (std::size_t i = 0; i < nn; ++i)
                    for (std::size_t j = 0; j < mm; ++j) ga.at2(i, j) += go[j] * factor;
            } else {
                for (std::size_t i = 0; i < nn; ++i)
                    for (std::size_t j = 0; j < mm; ++j) ga.at2(i, j) += go[i] * factor;
            }
        });
    }
    return v;
}

}  // namespace

Var sum(Var a) { return reduce_all(a, false, "sum"); }
Var mean(Var a) { return reduce_all(a, true, "mean"); }
Var sum(Var a, std::size_t axis, bool keepdim) { return reduce_axis(a, axis, keepdim, false, "sum"); }
Var mean(Var a, std::size_t axis, bool keepdim) { return reduce_axis(a, axis, keepdim, true, "mean"); }

// ----------------------------- softmax & losses -----------------------------

Var softmax(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    std::size_t rows = 1, cols = 0;
    if (av.rank() == 1) {
        cols = av.shape()[0];
    } else if (av.rank() == 2) {
        rows = av.shape()[0];
        cols = av.shape()[1];
    } else {
        throw ShapeError("softmax: expected rank 1 or 2, got " + shape_str(av.shape()));
    }
    Tensor out(av.shape());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* r = av.data() + i * cols;
        double* o = out.data() + i * cols;
        double mx = r[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
        double se = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(r[j] - mx);
            se += o[j];
        }
        const double inv = 1.0 / se;
        for (std::size_t j = 0; j < cols; ++j) o[j] *= inv;
    }
    bool rg = t.requires_grad(a);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, oid = v.id;
        t.record_backward(oid, [aid, oid, rows, cols](Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            const Tensor& p = tp.val(oid);
            Tensor& ga = gbuf(grads, aid, tp.val(aid));
            for (std::size_t i = 0; i < rows; ++i) {
                const double* gr = go.data() + i * cols;
                const double* pr = p.data() + i * cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * pr[j];
                double* gar = ga.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) gar[j] += pr[j] * (gr[j] - dot);
            }
        });
    }
    return v;
}

Var cross_entropy(Var logits, const std::vector<int>& targets) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    check_2d(lv, "cross_entropy");
    const std::size_t rows = lv.shape()[0], cols = lv.shape()[1];
    if (targets.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    }
    for (int id : targets) {
        if (id < 0 || static_cast<std::size_t>(id) >= cols) {
            throw std::out_of_range("cross_entropy: target id " + std::to_string(id) +
                                    " out of range [0," + std::to_string(cols) + ")");
        }
    }
    Tensor probs({rows, cols});
    double loss = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* r = lv.data() + i * cols;
        double* p = probs.data() + i * cols;
        double mx = r[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, r[j]);
        double se = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            p[j] = std::exp(r[j] - mx);
            se += p[j];
        }
        const double inv = 1.0 / se;
        for (std::size_t j = 0; j < cols; ++j) p[j] *= inv;
        loss += std::log(se) + mx - r[static_cast<std::size_t>(targets[i])];
    }
    loss /= static_cast<double>(rows);
    bool rg = t.requires_grad(logits);
    Var v = t.record(Tensor::scalar(loss), rg, nullptr);
    if (rg) {
        int lid = logits.id, oid = v.id;
        t.record_backward(oid, [lid, oid, targets, probs, rows, cols](
                                   Tape& tp, std::vector<Tensor>& grads) {
            const double g = grads[static_cast<std::size_t>(oid)][0] / static_cast<double>(rows);
            Tensor& gl = gbuf(grads, lid, tp.val(lid));
            for (std::size_t i = 0; i < rows; ++i) {
                const double* p = probs.data() + i * cols;
                double* gr = gl.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) gr[j] += g * p[j];
                gr[static_cast<std::size_t>(targets[i])] -= g;
            }
        });
    }
    return v;
}

Var bce_with_logits(Var logits, const Tensor& targets) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    if (!lv.same_shape(targets)) {
        throw ShapeError("bce_with_logits: logits " + shape_str(lv.shape()) + " vs targets " +
                         shape_str(targets.shape()));
    }
    const std::size_t n = lv.size();
    if (n == 0) throw ShapeError("bce_with_logits: empty input");
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double l = lv[i], y = targets[i];
        loss += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
    }
    loss /= static_cast<double>(n);
    bool rg = t.requires_grad(logits);
    Var v = t.record(Tensor::scalar(loss), rg, nullptr);
    if (rg) {
        int lid = logits.id, oid = v.id;
        Tensor tcopy = targets;
        t.record_backward(oid, [lid, oid, tcopy, n](Tape& tp, std::vector<Tensor>& grads) {
            const double g = grads[static_cast<std::size_t>(oid)][0] / static_cast<double>(n);
            const Tensor& L = tp.val(lid);
            Tensor& gl = gbuf(grads, lid, L);
            for (std::size_t i = 0; i < n; ++i) {
                const double l = L[i];
                const double s = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l))
                                          : std::exp(l) / (1.0 + std::exp(l));
                gl[i] += g * (s - tcopy[i]);
            }
        });
    }
    return v;
}

// ----------------------------- structure ops -----------------------------

namespace {

Var concat_impl(const std::vector<Var>& parts, bool rows) {
    if (parts.empty()) throw std::invalid_argument("concat: no parts");
    Tape& t = *parts[0].tape;
    std::size_t total = 0, other = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        check_same_tape(parts[0], parts[p], "concat");
        const Tensor& pv = t.value(parts[p]);
        check_2d(pv, "concat");
        std::size_t along = rows ? pv.shape()[0] : pv.shape()[1];
        std::size_t across = rows ? pv.shape()[1] : pv.shape()[0];
        if (p == 0) {
            other = across;
        } else if (across != other) {
            throw ShapeError("concat: mismatched dimension " + shape_str(pv.shape()));
        }
        total += along;
    }
    Shape out_shape = rows ? Shape{total, other} : Shape{other, total};
    Tensor out(out_shape);
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& pv = t.value(p);
        if (rows) {
            std::copy(pv.data(), pv.data() + pv.size(), out.data() + off * other);
            off += pv.shape()[0];
        } else {
            const std::size_t w = pv.shape()[1];
            for (std::size_t i = 0; i < other; ++i)
                std::copy(pv.data() + i * w, pv.data() + (i + 1) * w, out.data() + i * total + off);
            off += w;
        }
    }
    bool rg = false;
    for (const Var& p : parts) rg = rg || t.requires_grad(p);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        std::vector<int> pids;
        pids.reserve(parts.size());
        for (const Var& p : parts) pids.push_back(p.id);
        int oid = v.id;
        t.record_backward(oid, [pids, oid, rows, other, total](Tape& tp,
                                                               std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            std::size_t off2 = 0;
            for (int pid : pids) {
                const Tensor& pv = tp.val(pid);
                const std::size_t along = rows ? pv.shape()[0] : pv.shape()[1];
                if (tp.requires_grad(Var{&tp, pid})) {
                    Tensor& gp = gbuf(grads, pid, pv);
                    if (rows) {
                        for (std::size_t i = 0; i < gp.size(); ++i)
                            gp[i] += go[off2 * other + i];
                    } else {
                        for (std::size_t i = 0; i < other; ++i)
                            for (std::size_t j = 0; j < along; ++j)
                                gp[i * along + j] += go[i * total + off2 + j];
                    }
                }
                off2 += along;
            }
        });
    }
    return v;
}

}  // namespace

Var concat_rows(const std::vector<Var>& parts) { return concat_impl(parts, true); }
Var concat_cols(const std::vector<Var>& parts) { return concat_impl(parts, false); }

namespace {

Var slice_impl(Var a, std::size_t begin, std::size_t end, bool rows, const char* name) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    check_2d(av, name);
    const std::size_t along = rows ? av.shape()[0] : av.shape()[1];
    const std::size_t other = rows ? av.shape()[1] : av.shape()[0];
    if (begin > end || end > along) {
        throw ShapeError(std::string(name) + ": range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") out of " + std::to_string(along));
    }
    const std::size_t w = end - begin;
    Shape out_shape = rows ? Shape{w, other} : Shape{other, w};
    Tensor out(out_shape);
    if (rows) {
        std::copy(av.data() + begin * other, av.data() + end * other, out.data());
    } else {
        for (std::size_t i = 0; i < other; ++i)
            std::copy(av.data() + i * along + begin, av.data() + i * along + end,
                      out.data() + i * w);
    }
    bool rg = t.requires_grad(a);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, oid = v.id;
        t.record_backward(oid, [aid, oid, begin, rows, other, along, w](
                                   Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            Tensor& ga = gbuf(grads, aid, tp.val(aid));
            if (rows) {
                for (std::size_t i = 0; i < go.size(); ++i) ga[begin * other + i] += go[i];
            } else {
                for (std::size_t i = 0; i < other; ++i)
                    for (std::size_t j = 0; j < w; ++j)
                        ga[i * along + begin + j] += go[i * w + j];
            }
        });
    }
    return v;
}

}  // namespace

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
    return slice_impl(a, begin, end, true, "slice_rows");
}
Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    return slice_impl(a, begin, end, false, "slice_cols");
}

Var gather_rows(Var table, const std::vector<int>& idx) {
    Tape& t = *table.tape;
    const Tensor& tv = t.value(table);
    check_2d(tv, "gather_rows");
    const std::size_t n = tv.shape()[0], c = tv.shape()[1];
    for (int i : idx) {
        if (i < 0 || static_cast<std::size_t>(i) >= n) {
            throw std::out_of_range("gather_rows: index " + std::to_string(i) + " out of " +
                                    std::to_string(n) + " rows");
        }
    }
    Tensor out({idx.size(), c});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const double* src = tv.data() + static_cast<std::size_t>(idx[r]) * c;
        std::copy(src, src + c, out.data() + r * c);
    }
    bool rg = t.requires_grad(table);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int tid = table.id, oid = v.id;
        t.record_backward(oid, [tid, oid, idx, c](Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            Tensor& gt = gbuf(grads, tid, tp.val(tid));
            for (std::size_t r = 0; r < idx.size(); ++r) {
                double* dst = gt.data() + static_cast<std::size_t>(idx[r]) * c;
                const double* src = go.data() + r * c;
                for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
            }
        });
    }
    return v;
}

Var repeat_rows(Var row, std::size_t times) {
    Tape& t = *row.tape;
    const Tensor& rv = t.value(row);
    std::size_t c = rv.size();
    if (rv.rank() == 2 && rv.shape()[0] != 1) {
        throw ShapeError("repeat_rows: expected a single row, got " + shape_str(rv.shape()));
    }
    Tensor out({times, c});
    for (std::size_t i = 0; i < times; ++i)
        std::copy(rv.data(), rv.data() + c, out.data() + i * c);
    bool rg = t.requires_grad(row);
    Var v = t.record(std::move(out), rg, nullptr);
    if (rg) {
        int rid = row.id, oid = v.id;
        t.record_backward(oid, [rid, oid, times, c](Tape& tp, std::vector<Tensor>& grads) {
            const Tensor& go = grads[static_cast<std::size_t>(oid)];
            Tensor& gr = gbuf(grads, rid, tp.val(rid));
            for (std::size_t i = 0; i < times; ++i)
                for (std::size_t j = 0; j < c; ++j) gr[j] += go[i * c + j];
        });
    }
    return v;
}

// ----------------------------- gradient checking -----------------------------

double grad_check(const std::function<Var(Tape&, std::vector<Var>&)>& fn,
                  const std::vector<Tensor>& inputs, double eps) {
    // analytic
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(inputs.size());
        for (const Tensor& in : inputs) vars.push_back(tape.leaf(in, true));
        Var loss = fn(tape, vars);
        tape.backward(loss);
        for (Var v : vars) analytic.push_back(tape.grad(v));
    }
    // numeric + comparison
    double max_err = 0.0;
    std::vector<Tensor> work = inputs;
    for (std::size_t t = 0; t < work.size(); ++t) {
        for (std::size_t i = 0; i < work[t].size(); ++i) {
            const double orig = work[t][i];
            work[t][i] = orig + eps;
            double fp;
            {
                Tape tape;
                std::vector<Var> vars;
                for (const Tensor& in : work) vars.push_back(tape.leaf(in, false));
                fp = tape.value(fn(tape, vars)).item();
            }
            work[t][i] = orig - eps;
            double fm;
            {
                Tape tape;
                std::vector<Var> vars;
                for (const Tensor& in : work) vars.push_back(tape.leaf(in, false));
                fm = tape.value(fn(tape, vars)).item();
            }
            work[t][i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[t][i];
            const double err = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1.0});
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

}  // namespace cgaug
