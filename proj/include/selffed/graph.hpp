#pragma once

#include <memory>
#include <span>
#include <vector>

#include "selffed/tensor.hpp"

namespace selffed {

using NodeId = int32_t;

enum class Op : uint8_t {
    kLeaf,
    kMatmul,
    kAdd,
    kSub,
    kAddRowVec,
    kMulRowVec,
    kScale,
    kRelu,
    kGelu,
    kSoftmax,     // over last axis
    kLayerNorm,   // over last axis, no affine
    kReshape,
    kTranspose,   // 2-D
    kGatherRows,
    kConcatRows,
    kMeanAll,
    kSumAll,
    kMeanRows,
    kSquare,
    kLog,
    kExp,
    kCosine,      // cosine similarity of two flat vectors
    kL2Normalize,
    kCrossEntropy,
};

const char* op_name(Op op);

// Row index sets are shared so large precomputed plans (window orders,
// patchify layouts) are not copied into every graph.
using IndexPlan = std::shared_ptr<const std::vector<int64_t>>;
IndexPlan make_index_plan(std::vector<int64_t> idx);
std::vector<int64_t> invert_permutation(const std::vector<int64_t>& perm);

/// Eager reverse-mode tape. Nodes are appended in evaluation order, so the
/// stored order is already topological; backward() walks it in reverse.
/// A Graph is built for one step and then discarded. Not thread-safe; use
/// one Graph per worker.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    NodeId leaf(Tensor t, bool trainable = false);
    NodeId constant(Tensor t) { return leaf(std::move(t), false); }
    NodeId scalar(double v) { return constant(Tensor::scalar(v)); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId a, NodeId v);  // v broadcast over leading dims
    NodeId mul_rowvec(NodeId a, NodeId v);
    NodeId scale(NodeId a, double s);
    NodeId relu(NodeId a);
    NodeId gelu(NodeId a);  // tanh approximation
    NodeId softmax_lastdim(NodeId a);
    NodeId layernorm_lastdim(NodeId a, double eps = 1e-12);
    NodeId reshape(NodeId a, std::vector<int64_t> shape);
    NodeId transpose(NodeId a);
    NodeId gather_rows(NodeId a, IndexPlan idx);
    NodeId gather_rows(NodeId a, std::vector<int64_t> idx);
    NodeId concat_rows(std::span<const NodeId> parts);
    NodeId mean_all(NodeId a);
    NodeId sum_all(NodeId a);
    NodeId mean_rows(NodeId a);  // (n x c) -> (c)
    NodeId square(NodeId a);
    NodeId log(NodeId a);
    NodeId exp(NodeId a);
    NodeId cosine_similarity(NodeId a, NodeId b);
    NodeId l2_normalize(NodeId a);
    NodeId cross_entropy(NodeId logits, int64_t label);

    const Tensor& val(NodeId id) const;
    /// Gradient buffer of a node; valid after backward().
    const std::vector<double>& grad(NodeId id) const;
    bool is_trainable(NodeId id) const;
    size_t node_count() const { return nodes_.size(); }

    /// Reverse accumulation from a scalar loss node. Every leaf receives a
    /// gradient buffer; leaves the loss does not depend on get zeros.
    void backward(NodeId loss);

private:
    struct Node {
        Op op = Op::kLeaf;
        std::vector<NodeId> in;
        Tensor value;
        bool trainable = false;
        double a = 0.0;      // scale factor / layernorm eps
        int64_t label = -1;  // cross-entropy target
        IndexPlan idx;       // gather plan
    };

    NodeId push(Node n);
    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    void check_id(NodeId id) const;
    void backprop_into(Node& out);

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

}  // namespace selffed
