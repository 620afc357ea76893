#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sketchssl/common.hpp"
#include "sketchssl/tensor.hpp"

// Reverse-mode tape autodiff over TensorData. Ops build a DAG of Nodes;
// backward() toposorts from the loss and accumulates gradients into every
// node that requires them. Graph edges point child -> parent only, so the
// graph is freed when the loss Var goes out of scope while parameter leaves
// persist across steps.

namespace sketchssl::ad {

struct Node;

struct Var {
    std::shared_ptr<Node> n;

    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : n(std::move(node)) {}

    bool defined() const { return n != nullptr; }
    const TensorData& val() const;
    TensorData& mutable_val();
    const std::vector<int>& shape() const;
    std::span<const double> grad() const;
    bool requires_grad() const;

    static Var constant(TensorData t);
    static Var leaf(TensorData t, bool requires_grad, std::string name = {});
};

struct Node {
    TensorData val;
    std::vector<double> grad;  // empty until first backward touch
    bool requires_grad = false;
    std::string name;  // set for parameters
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, adds to parents

    void ensure_grad() {
        if (grad.size() != val.v.size()) grad.assign(val.v.size(), 0.0);
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Thread-local gradient mode; NoGradGuard disables tape recording (used for
// eval forwards and the BYOL target path).
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev;
};

// Run reverse accumulation from a scalar loss (shape [1]).
void backward(const Var& loss);

// ------------------------------------------------------------------ ops

Var add(const Var& a, const Var& b);                 // same shape
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);                 // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var exp(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var matmul(const Var& a, const Var& b);              // [n,k]x[k,m]
Var add_bias_rows(const Var& x, const Var& b);       // [n,d] + [d]
Var add_bias_chan(const Var& x, const Var& b);       // [n,c,h,w] + [c]
Var reshape(const Var& a, std::vector<int> shape);
Var concat_cols(const Var& a, const Var& b);         // [n,da]+[n,db] -> [n,da+db]
Var detach(const Var& a);                            // stop-gradient copy
Var sum_all(const Var& a);                           // -> [1]
Var mean_all(const Var& a);                          // -> [1]
Var sum_per_row(const Var& a);                       // [n,...] -> [n]
Var mean_over_rows(const Var& a);                    // [n] -> [1]
Var softmax_rows(const Var& a);                      // [n,c]
Var row_l2_normalize(const Var& a, double eps = 1e-12);  // [n,d]

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var max_pool2d(const Var& x, int k, int stride);
Var global_avg_pool(const Var& x);                   // [n,c,h,w] -> [n,c]
Var adaptive_avg_pool2d(const Var& x, int oh, int ow);

// Batch norm over the reduction axes (all but the channel/feature axis).
// Running stats live outside the graph and are updated in training mode.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               TensorData& running_mean, TensorData& running_var,
               bool training, double momentum = 0.1, double eps = 1e-5);

// Per-sample loss kernels (-> [n]); targets/labels are constants.
Var bce_rows(const Var& pred, const TensorData& target, double clamp_eps = 1e-7);
Var kld_rows(const Var& mu, const Var& logvar);
Var ce_rows(const Var& probs, std::span<const int> labels, double clamp_eps = 1e-7);
Var entropy_rows(const Var& probs);

// Internal helper shared with finite-difference tests.
Var make_op(TensorData out, std::vector<Var> parents,
            std::function<void(Node&)> bwd);

}  // namespace sketchssl::ad
