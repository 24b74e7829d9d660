#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "oss/errors.hpp"

namespace oss::ad {

// Dense 64-bit tensor. Row-major, last axis fastest.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape_) : shape(std::move(shape_)) {
        data.assign(size_of(shape), 0.0);
    }
    Tensor(std::vector<int> shape_, std::vector<double> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        if (data.size() != size_of(shape)) throw ShapeError("tensor data length mismatch");
    }

    static std::size_t size_of(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int s : shape) {
            if (s <= 0) throw ShapeError("tensor dims must be positive");
            n *= static_cast<std::size_t>(s);
        }
        return n;
    }
    std::size_t size() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
};

// Learnable (or persistent) tensor with an accumulated gradient buffer.
struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
    bool pau_group = false;  // separate learning-rate group

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    const char* op = "constant";
    Tensor val;
    Tensor grad;  // allocated only while recording gradients
    std::function<void()> backward;
    Param* param = nullptr;
};

// Define-by-run reverse-mode tape. A tape records one forward pass; backward()
// walks it in reverse and accumulates leaf gradients into their Params.
class Tape {
public:
    explicit Tape(bool record_grad = true) : record_grad_(record_grad) {}

    bool recording() const { return record_grad_; }

    NodePtr make(const char* op, Tensor val) {
        auto node = std::make_shared<Node>();
        node->op = op;
        node->val = std::move(val);
        if (record_grad_) node->grad = Tensor(node->val.shape);
        order_.push_back(node);
        return node;
    }

    NodePtr constant(Tensor val) { return make("constant", std::move(val)); }

    NodePtr leaf(Param& p) {
        NodePtr node = make("param", p.value);
        node->param = &p;
        return node;
    }

    // Reverse pass from a scalar loss; leaf gradients accumulate into Params.
    void backward(const NodePtr& loss);

private:
    bool record_grad_;
    std::vector<NodePtr> order_;
};

// --- Operations -------------------------------------------------------------

// y[N,O] = x[N,I] * W[O,I]^T + b[O]
NodePtr linear(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b);

// Cross-correlation. x[N,C,D,H,W], w[O,C,K,K,K], b[O]; zero padding.
NodePtr conv3d(Tape& t, const NodePtr& x, const NodePtr& w, const NodePtr& b, int stride,
               int pad);

NodePtr add(Tape& t, const NodePtr& a, const NodePtr& b);
NodePtr leaky_relu(Tape& t, const NodePtr& x, double slope = 0.01);
NodePtr sigmoid(Tape& t, const NodePtr& x);

// Safe Pade activation: P(x) / (1 + |b1 x + ... + b4 x^4|), numerator degree 5.
NodePtr pau(Tape& t, const NodePtr& x, const NodePtr& num, const NodePtr& den);

// Running statistics for one (conditional) batch-norm layer.
struct BnStats {
    Param* mean = nullptr;
    Param* var = nullptr;
};

enum class Mode { Train, Eval };

// Conditional batch normalization over features of x[N,F] with predicted
// gamma / beta are either shared across rows (size F) or per-row ([N,F]).
// Train mode normalizes with batch statistics (biased variance, epsilon
// stabilized) and updates running stats; eval mode uses the running
// statistics, making outputs per-row independent.
NodePtr cond_batchnorm(Tape& t, const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                       BnStats stats, Mode mode, double eps = 1e-5, double momentum = 0.1);

// [N,C,D,H,W] -> [N,C]
NodePtr global_avg_pool(Tape& t, const NodePtr& x);

// Copy-reshape; element count must match.
NodePtr reshape(Tape& t, const NodePtr& x, std::vector<int> shape);

// Concatenate [N,Fi] blocks along the feature axis.
NodePtr concat_cols(Tape& t, const std::vector<NodePtr>& xs);

// Concatenate [Ni,F] blocks along the row axis.
NodePtr concat_rows(Tape& t, const std::vector<NodePtr>& xs);

// Repeat a [1,F] row N times.
NodePtr broadcast_rows(Tape& t, const NodePtr& x, int rows);

// Mean binary cross-entropy of probabilities against {0,1} labels, with
// probabilities clamped to [eps, 1-eps]. Scalar output of shape [1].
NodePtr bce_mean(Tape& t, const NodePtr& probs, const std::vector<double>& labels,
                 double eps = 1e-7);

// y = a + alpha * b for scalar nodes.
NodePtr add_scaled(Tape& t, const NodePtr& a, const NodePtr& b, double alpha);

}  // namespace oss::ad
