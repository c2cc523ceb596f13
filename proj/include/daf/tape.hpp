#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "daf/tensor.hpp"

namespace daf::nn {

class Tape;

// Lightweight handle to a node on a Tape.
struct Value {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff over dense f64 tensors. Nodes are created in forward
// (topological) order; backward() replays their adjoint closures in reverse.
// All ops are deterministic: fixed accumulation order, no parallelism inside
// a tape.
class Tape {
public:
    // Leaf nodes. Gradients are only tracked through nodes with needs_grad
    // somewhere beneath them.
    Value leaf(Tensor t, bool needs_grad = false);

    // References remain valid for the tape's lifetime (node storage never
    // relocates as the graph grows).
    const Tensor& val(Value v) const { return nodes_[size_t(v.id)].val; }
    bool needs_grad(Value v) const { return nodes_[size_t(v.id)].needs_grad; }

    // Gradient of the last backward() root w.r.t. v; zero tensor if v was not
    // reached. Only meaningful for needs_grad nodes.
    const Tensor& grad(Value v);

    // root must be scalar (1 element). Clears previous gradients.
    void backward(Value root);

    size_t node_count() const { return nodes_.size(); }

    // ---- elementwise ----
    Value add(Value a, Value b);
    Value sub(Value a, Value b);
    Value mul(Value a, Value b);
    Value div(Value a, Value b);
    Value affine(Value a, double mul, double add);  // mul*a + add
    Value clamp(Value a, double lo, double hi);     // pass-through grad inside [lo,hi]
    Value relu(Value a);
    Value sigmoid(Value a);
    // Per-channel multiply by a constant raster (shape HxW or 1xHxW) against a
    // (C,H,W) tensor; also accepts identical shapes.
    Value mul_raster(Value a, const Tensor& raster);

    // ---- structure ----
    Value concat_ch(const std::vector<Value>& xs);            // along channel dim
    Value resize_bl(Value a, int th, int tw);                 // bilinear, half-pixel centers
    Value box_sum(Value a, int window);                       // per-channel window sum, reflect padding
    Value maxpool2x2(Value a);                                // stride 2, even dims
    Value conv2d(Value x, Value w, Value b, int stride, int pad);
    Value group_norm(Value x, Value gamma, Value beta, int groups, double eps);

    // Per-position cosine similarity along the channel axis of two (C,H,W)
    // tensors -> (1,H,W); denominator floored at eps.
    Value cosine_map(Value a, Value b, double eps = 1e-8);

    // ---- reductions / heads ----
    Value sum_all(Value a);                                   // scalar
    Value mean_all(Value a);                                  // scalar
    Value mean_subset(Value a, std::vector<int> idx);         // mean over flat indices
    // Mean binary cross-entropy of probabilities vs {0,1} targets over the
    // given flat indices; probabilities clamped to [eps, 1-eps].
    Value bce_subset(Value p, const Tensor& target, std::vector<int> idx, double eps = 1e-7);
    Value global_avg_pool(Value a);                           // (C,H,W) -> (C)
    Value linear(Value w, Value x, Value b);                  // (O,I)x(I)+(O)
    Value softmax_cross_entropy(Value logits, int label);     // scalar

private:
    struct Node {
        Tensor val;
        Tensor grad;
        std::function<void()> back;
        bool needs_grad = false;
    };

    std::deque<Node> nodes_;

    Value make(Tensor val, bool needs_grad, std::function<void()> back);
    Tensor& g(int id);
    static void check_scalar(const Tensor& t);
};

}  // namespace daf::nn
