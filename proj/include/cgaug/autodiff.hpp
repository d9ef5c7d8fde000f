#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "cgaug/tensor.hpp"

namespace cgaug {

class Tape;

// Handle to a node on a tape. Cheap to copy; invalid by default.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Nodes are recorded in evaluation order, so reverse
// creation order is a valid topological order for backward. The graph is
// functional: recorded tensors are never mutated in place.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::vector<Tensor>&)>;

    Var leaf(Tensor value, bool requires_grad = false);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const;

    // Accumulated gradient of a leaf (zeros if backward never reached it).
    const Tensor& grad(Var v) const;
    void zero_grad();

    // Backpropagate from a scalar loss. Leaf gradients accumulate across
    // repeated calls; intermediate gradients are scratch per call.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }
    void clear();

    // --- used by op implementations ---
    Var record(Tensor value, bool requires_grad, BackwardFn back);
    void record_backward(int id, BackwardFn back);
    const Tensor& val(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // persistent, leaves only
        bool requires_grad = false;
        BackwardFn back;  // empty for leaves and constant subgraphs
    };
    // deque: recording new nodes must not invalidate value()/grad() references
    std::deque<Node> nodes_;
};

// ----------------------------- elementwise -----------------------------
// Binary ops broadcast (rank extension on the left plus size-1 expansion);
// backward sums gradients over broadcast dimensions.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return divide(a, b); }

Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var square(Var a);
Var powc(Var a, double p);       // elementwise a^p, p constant
Var scale(Var a, double s);      // a * s
Var add_const(Var a, double c);  // a + c

// ----------------------------- linear algebra -----------------------------
Var matmul(Var a, Var b);  // [n,k] x [k,m] -> [n,m]
Var transpose(Var a);      // 2-D

// ----------------------------- reductions -----------------------------
Var sum(Var a);   // all elements -> scalar
Var mean(Var a);  // all elements -> scalar
Var sum(Var a, std::size_t axis, bool keepdim = false);
Var mean(Var a, std::size_t axis, bool keepdim = false);

// ----------------------------- softmax & losses -----------------------------
Var softmax(Var a);  // along last axis
// mean over rows of -log softmax(logits)[row, target]; logits [T,V]
Var cross_entropy(Var logits, const std::vector<int>& targets);
// mean elementwise binary cross entropy with logits; numerically stable
Var bce_with_logits(Var logits, const Tensor& targets);

// ----------------------------- structure -----------------------------
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var table, const std::vector<int>& idx);
Var repeat_rows(Var row, std::size_t times);  // [1,C] -> [times,C]

// ----------------------------- gradient checking -----------------------------
// Builds the loss via `fn` on a fresh tape, once for analytic gradients and
// repeatedly with perturbed inputs for central differences. Returns the max
// relative error |a - n| / max(|a|, |n|, 1).
double grad_check(const std::function<Var(Tape&, std::vector<Var>&)>& fn,
                  const std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace cgaug
