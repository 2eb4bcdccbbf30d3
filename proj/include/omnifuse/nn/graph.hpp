#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "omnifuse/core/shape.hpp"
#include "omnifuse/nn/params.hpp"

namespace omnifuse::nn {

// Reverse-mode autodiff on a flat tape. Nodes are created in topological
// order by construction, so backward() is a single reverse sweep. Gradients
// accumulate with +=, which makes fan-out (a node feeding several consumers)
// correct without extra bookkeeping.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;  // allocated only when needs_grad
    bool needs_grad = false;
    std::function<void()> backward;  // pushes this->grad into parent grads
};

template <typename T>
class Graph;

// Cheap handle into the tape. Valid only while its Graph is alive.
template <typename T>
struct Var {
    Node<T>* n = nullptr;

    bool valid() const { return n != nullptr; }
    const Shape& shape() const { return n->shape; }
    const std::vector<T>& value() const { return n->val; }
    const std::vector<T>& grad() const { return n->grad; }
    bool needs_grad() const { return n->needs_grad; }
    std::int64_t size() const { return static_cast<std::int64_t>(n->val.size()); }

    // Row/col accessors for the common 2-D case.
    int rows() const { return n->shape.at(0); }
    int cols() const { return n->shape.at(1); }

    T scalar() const {
        check(n->val.size() == 1, "scalar() on non-scalar var");
        return n->val[0];
    }
};

template <typename T>
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // In inference mode every node is created with needs_grad=false and no
    // backward closures are recorded: forward only, less memory.
    void set_inference(bool on) { inference_ = on; }
    bool inference() const { return inference_; }

    Node<T>* make(Shape s, bool needs_grad) {
        auto node = std::make_unique<Node<T>>();
        node->shape = std::move(s);
        const auto n = static_cast<std::size_t>(numel(node->shape));
        node->val.assign(n, T(0));
        node->needs_grad = needs_grad && !inference_;
        if (node->needs_grad) node->grad.assign(n, T(0));
        nodes_.push_back(std::move(node));
        return nodes_.back().get();
    }

    Var<T> leaf(Shape s, const T* data, bool needs_grad = false) {
        Node<T>* nd = make(std::move(s), needs_grad);
        std::copy(data, data + nd->val.size(), nd->val.begin());
        return Var<T>{nd};
    }

    Var<T> leaf(Shape s, const std::vector<T>& data, bool needs_grad = false) {
        check(static_cast<std::int64_t>(data.size()) == numel(s), "leaf: data/shape mismatch");
        return leaf(std::move(s), data.data(), needs_grad);
    }

    Var<T> zeros(Shape s, bool needs_grad = false) { return Var<T>{make(std::move(s), needs_grad)}; }

    Var<T> scalar(T v) {
        Var<T> out = zeros({1});
        out.n->val[0] = v;
        return out;
    }

    // Leaf view of a parameter, memoized per graph so repeated use of the same
    // parameter shares one node (and therefore one accumulated gradient).
    Var<T> use(Parameter<T>& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return Var<T>{it->second};
        const bool ng = p.trainable && !inference_;
        Var<T> v = leaf(p.shape, p.value, ng);
        param_nodes_.emplace(&p, v.n);
        if (ng) used_.push_back({&p, v.n});
        return v;
    }

    // Reverse sweep from a scalar root, then p.grad += node.grad for every
    // trainable parameter touched through use().
    void backward(Var<T> root);

    std::size_t node_count() const { return nodes_.size(); }

private:
    std::deque<std::unique_ptr<Node<T>>> nodes_;
    std::unordered_map<Parameter<T>*, Node<T>*> param_nodes_;
    std::vector<std::pair<Parameter<T>*, Node<T>*>> used_;
    bool inference_ = false;
};

// ---- elementwise and shape ops ----
template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Graph<T>& g, Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Graph<T>& g, Var<T> a, double c);
// y[i,:] = a[i,:] + bvec (bvec has one row)
template <typename T>
Var<T> add_rowvec(Graph<T>& g, Var<T> a, Var<T> bvec);
template <typename T>
Var<T> reshape(Graph<T>& g, Var<T> a, Shape s);
template <typename T>
Var<T> slice_rows(Graph<T>& g, Var<T> a, int r0, int r1);
template <typename T>
Var<T> concat_rows(Graph<T>& g, const std::vector<Var<T>>& parts);
template <typename T>
Var<T> gather_rows(Graph<T>& g, Var<T> a, std::vector<int> idx);
template <typename T>
Var<T> sum(Graph<T>& g, Var<T> a);
template <typename T>
Var<T> mean(Graph<T>& g, Var<T> a);

// ---- nonlinearities ----
template <typename T>
Var<T> gelu(Graph<T>& g, Var<T> a);  // exact erf form
template <typename T>
Var<T> relu(Graph<T>& g, Var<T> a);
template <typename T>
Var<T> sigmoid(Graph<T>& g, Var<T> a);

// ---- dense algebra ----
template <typename T>
Var<T> matmul(Graph<T>& g, Var<T> a, Var<T> b);
template <typename T>
Var<T> transpose(Graph<T>& g, Var<T> a);
// Row-wise layer norm with learned gain/bias (both shape [d]).
template <typename T>
Var<T> layer_norm(Graph<T>& g, Var<T> x, Var<T> gain, Var<T> bias, double eps = 1e-5);
template <typename T>
Var<T> softmax_rows(Graph<T>& g, Var<T> a);

// ---- conv / pool ----
// x [N,Cin,H,W], w [Cout,Cin,k,k] with odd k, stride 1, zero 'same' padding.
template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> b);
// f-by-f non-overlapping max pooling; argmax offsets (0..f*f-1, row-major,
// first-wins ties) are written to *indices for the matching unpool.
template <typename T>
Var<T> maxpool2d(Graph<T>& g, Var<T> x, int f, std::vector<std::int32_t>* indices);
// Mirror of maxpool2d. With indices=nullptr every value lands in the
// top-left corner of its f-by-f cell (the no-bypass decoder variant).
template <typename T>
Var<T> maxunpool2d(Graph<T>& g, Var<T> x, int f, const std::vector<std::int32_t>* indices);

// ---- losses and reductions ----
// Numerically safe mean of elementwise max(z,0) - z*y + log(1+exp(-|z|)).
template <typename T>
Var<T> bce_with_logits_mean(Graph<T>& g, Var<T> logits, Var<T> targets);
// Per-row logsumexp over entries where sel[i*cols+j] != 0. Every row must
// select at least one entry.
template <typename T>
Var<T> masked_logsumexp_rows(Graph<T>& g, Var<T> s, const std::vector<std::uint8_t>& sel);

// ---- fused attention ----
// Multi-head attention over one tile: q [Tq,d], k/v [Tk,d], d = heads*dh.
// bias_table [heads, n_buckets] is gathered through bucket[i*Tk+j]; pass an
// invalid Var to run without positional bias.
template <typename T>
Var<T> mha_tile(Graph<T>& g, Var<T> q, Var<T> k, Var<T> v, int heads, Var<T> bias_table,
                const std::vector<std::int32_t>* bucket);

// Learned-query set attention over padded sequences (the temporal encoder
// core). k/v [N*L,d], query [d], valid[n*L+t] marks real dates. Returns
// [N,d]; if attn_out is non-null it receives head-averaged weights [N*L]
// (zeros at padded slots).
template <typename T>
Var<T> set_attention(Graph<T>& g, Var<T> k, Var<T> v, Var<T> query, int heads, int n, int l,
                     const std::vector<std::uint8_t>& valid, std::vector<T>* attn_out = nullptr);

}  // namespace omnifuse::nn
