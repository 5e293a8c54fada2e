#include "selffed/graph.hpp"

#include <algorithm>
#include <cmath>

namespace selffed {

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / M_PI);

int64_t last_dim(const Tensor& t) { return t.shape.back(); }

int64_t row_count(const Tensor& t) { return t.numel() / t.shape.back(); }

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kMatmul: return "matmul";
        case Op::kAdd: return "add";
        case Op::kSub: return "sub";
        case Op::kAddRowVec: return "add_rowvec";
        case Op::kMulRowVec: return "mul_rowvec";
        case Op::kScale: return "scale";
        case Op::kRelu: return "relu";
        case Op::kGelu: return "gelu";
        case Op::kSoftmax: return "softmax";
        case Op::kLayerNorm: return "layernorm";
        case Op::kReshape: return "reshape";
        case Op::kTranspose: return "transpose";
        case Op::kGatherRows: return "gather_rows";
        case Op::kConcatRows: return "concat_rows";
        case Op::kMeanAll: return "mean_all";
        case Op::kSumAll: return "sum_all";
        case Op::kMeanRows: return "mean_rows";
        case Op::kSquare: return "square";
        case Op::kLog: return "log";
        case Op::kExp: return "exp";
        case Op::kCosine: return "cosine_similarity";
        case Op::kL2Normalize: return "l2_normalize";
        case Op::kCrossEntropy: return "cross_entropy";
    }
    return "?";
}

IndexPlan make_index_plan(std::vector<int64_t> idx) {
    return std::make_shared<const std::vector<int64_t>>(std::move(idx));
}

std::vector<int64_t> invert_permutation(const std::vector<int64_t>& perm) {
    std::vector<int64_t> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) {
        inv[static_cast<size_t>(perm[i])] = static_cast<int64_t>(i);
    }
    return inv;
}

NodeId Graph::push(Node n) {
    require_finite(n.value, op_name(n.op));
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Graph::Node& Graph::node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
const Graph::Node& Graph::node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

void Graph::check_id(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
        throw Error("invalid node id " + std::to_string(id));
    }
}

const Tensor& Graph::val(NodeId id) const {
    check_id(id);
    return node(id).value;
}

const std::vector<double>& Graph::grad(NodeId id) const {
    check_id(id);
    return node(id).value.grad;
}

bool Graph::is_trainable(NodeId id) const {
    check_id(id);
    return node(id).trainable;
}

NodeId Graph::leaf(Tensor t, bool trainable) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(t);
    n.trainable = trainable;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0]) {
        throw ShapeMismatch("matmul " + shape_str(A.shape) + " x " + shape_str(B.shape));
    }
    const int64_t n = A.shape[0], k = A.shape[1], m = B.shape[1];
    Node out;
    out.op = Op::kMatmul;
    out.in = {a, b};
    out.value = Tensor({n, m});
    for (int64_t i = 0; i < n; ++i) {
        double* ci = &out.value.data[static_cast<size_t>(i * m)];
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = A.data[static_cast<size_t>(i * k + kk)];
            const double* bk = &B.data[static_cast<size_t>(kk * m)];
            for (int64_t j = 0; j < m; ++j) ci[j] += av * bk[j];
        }
    }
    return push(std::move(out));
}

NodeId Graph::add(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (!same_shape(A, B)) {
        throw ShapeMismatch("add " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    }
    Node out;
    out.op = Op::kAdd;
    out.in = {a, b};
    out.value = A;
    out.value.grad.clear();
    for (size_t i = 0; i < out.value.data.size(); ++i) out.value.data[i] += B.data[i];
    return push(std::move(out));
}

NodeId Graph::sub(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (!same_shape(A, B)) {
        throw ShapeMismatch("sub " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    }
    Node out;
    out.op = Op::kSub;
    out.in = {a, b};
    out.value = A;
    out.value.grad.clear();
    for (size_t i = 0; i < out.value.data.size(); ++i) out.value.data[i] -= B.data[i];
    return push(std::move(out));
}

NodeId Graph::add_rowvec(NodeId a, NodeId v) {
    check_id(a);
    check_id(v);
    const Tensor& A = node(a).value;
    const Tensor& V = node(v).value;
    if (V.rank() != 1 || V.shape[0] != last_dim(A)) {
        throw ShapeMismatch("add_rowvec " + shape_str(A.shape) + " + " + shape_str(V.shape));
    }
    const int64_t c = last_dim(A);
    Node out;
    out.op = Op::kAddRowVec;
    out.in = {a, v};
    out.value = A;
    out.value.grad.clear();
    for (int64_t i = 0; i < A.numel(); ++i) {
        out.value.data[static_cast<size_t>(i)] += V.data[static_cast<size_t>(i % c)];
    }
    return push(std::move(out));
}

NodeId Graph::mul_rowvec(NodeId a, NodeId v) {
    check_id(a);
    check_id(v);
    const Tensor& A = node(a).value;
    const Tensor& V = node(v).value;
    if (V.rank() != 1 || V.shape[0] != last_dim(A)) {
        throw ShapeMismatch("mul_rowvec " + shape_str(A.shape) + " * " + shape_str(V.shape));
    }
    const int64_t c = last_dim(A);
    Node out;
    out.op = Op::kMulRowVec;
    out.in = {a, v};
    out.value = A;
    out.value.grad.clear();
    for (int64_t i = 0; i < A.numel(); ++i) {
        out.value.data[static_cast<size_t>(i)] *= V.data[static_cast<size_t>(i % c)];
    }
    return push(std::move(out));
}

NodeId Graph::scale(NodeId a, double s) {
    check_id(a);
    Node out;
    out.op = Op::kScale;
    out.in = {a};
    out.a = s;
    out.value = node(a).value;
    out.value.grad.clear();
    for (auto& v : out.value.data) v *= s;
    return push(std::move(out));
}

NodeId Graph::relu(NodeId a) {
    check_id(a);
    Node out;
    out.op = Op::kRelu;
    out.in = {a};
    out.value = node(a).value;
    out.value.grad.clear();
    for (auto& v : out.value.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out));
}

NodeId Graph::gelu(NodeId a) {
    check_id(a);
    Node out;
    out.op = Op::kGelu;
    out.in = {a};
    out.value = node(a).value;
    out.value.grad.clear();
    for (auto& v : out.value.data) {
        const double t = std::tanh(kSqrt2OverPi * (v + kGeluCoeff * v * v * v));
        v = 0.5 * v * (1.0 + t);
    }
    return push(std::move(out));
}

NodeId Graph::softmax_lastdim(NodeId a) {
    check_id(a);
    const Tensor& A = node(a).value;
    const int64_t c = last_dim(A);
    const int64_t rows = row_count(A);
    Node out;
    out.op = Op::kSoftmax;
    out.in = {a};
    out.value = A;
    out.value.grad.clear();
    for (int64_t r = 0; r < rows; ++r) {
        double* x = &out.value.data[static_cast<size_t>(r * c)];
        double m = x[0];
        for (int64_t j = 1; j < c; ++j) m = std::max(m, x[j]);
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            x[j] = std::exp(x[j] - m);
            s += x[j];
        }
        for (int64_t j = 0; j < c; ++j) x[j] /= s;
    }
    return push(std::move(out));
}

NodeId Graph::layernorm_lastdim(NodeId a, double eps) {
    check_id(a);
    const Tensor& A = node(a).value;
    const int64_t c = last_dim(A);
    const int64_t rows = row_count(A);
    Node out;
    out.op = Op::kLayerNorm;
    out.in = {a};
    out.a = eps;
    out.value = A;
    out.value.grad.clear();
    for (int64_t r = 0; r < rows; ++r) {
        double* x = &out.value.data[static_cast<size_t>(r * c)];
        double mu = 0.0;
        for (int64_t j = 0; j < c; ++j) mu += x[j];
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (int64_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(c);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < c; ++j) x[j] = (x[j] - mu) * inv;
    }
    return push(std::move(out));
}

NodeId Graph::reshape(NodeId a, std::vector<int64_t> shape) {
    check_id(a);
    const Tensor& A = node(a).value;
    if (shape_numel(shape) != A.numel()) {
        throw ShapeMismatch("reshape " + shape_str(A.shape) + " -> " + shape_str(shape));
    }
    Node out;
    out.op = Op::kReshape;
    out.in = {a};
    out.value = A;
    out.value.grad.clear();
    out.value.shape = std::move(shape);
    return push(std::move(out));
}

NodeId Graph::transpose(NodeId a) {
    check_id(a);
    const Tensor& A = node(a).value;
    if (A.rank() != 2) throw ShapeMismatch("transpose needs rank 2, got " + shape_str(A.shape));
    const int64_t n = A.shape[0], m = A.shape[1];
    Node out;
    out.op = Op::kTranspose;
    out.in = {a};
    out.value = Tensor({m, n});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < m; ++j) {
            out.value.data[static_cast<size_t>(j * n + i)] = A.data[static_cast<size_t>(i * m + j)];
        }
    }
    return push(std::move(out));
}

NodeId Graph::gather_rows(NodeId a, IndexPlan idx) {
    check_id(a);
    const Tensor& A = node(a).value;
    if (A.rank() != 2) throw ShapeMismatch("gather_rows needs rank 2, got " + shape_str(A.shape));
    const int64_t n = A.shape[0], c = A.shape[1];
    for (int64_t i : *idx) {
        if (i < 0 || i >= n) throw ShapeMismatch("gather_rows index " + std::to_string(i) +
                                                 " out of range for " + shape_str(A.shape));
    }
    Node out;
    out.op = Op::kGatherRows;
    out.in = {a};
    out.idx = idx;
    out.value = Tensor({static_cast<int64_t>(idx->size()), c});
    for (size_t r = 0; r < idx->size(); ++r) {
        const double* src = &A.data[static_cast<size_t>((*idx)[r] * c)];
        std::copy(src, src + c, &out.value.data[r * static_cast<size_t>(c)]);
    }
    return push(std::move(out));
}

NodeId Graph::gather_rows(NodeId a, std::vector<int64_t> idx) {
    return gather_rows(a, make_index_plan(std::move(idx)));
}

NodeId Graph::concat_rows(std::span<const NodeId> parts) {
    if (parts.empty()) throw ShapeMismatch("concat_rows of zero parts");
    int64_t rows = 0;
    const int64_t c = node(parts[0]).value.shape.back();
    for (NodeId p : parts) {
        check_id(p);
        const Tensor& t = node(p).value;
        if (t.rank() != 2 || t.shape[1] != c) {
            throw ShapeMismatch("concat_rows column mismatch at " + shape_str(t.shape));
        }
        rows += t.shape[0];
    }
    Node out;
    out.op = Op::kConcatRows;
    out.in.assign(parts.begin(), parts.end());
    out.value = Tensor({rows, c});
    size_t off = 0;
    for (NodeId p : parts) {
        const Tensor& t = node(p).value;
        std::copy(t.data.begin(), t.data.end(), out.value.data.begin() + static_cast<ptrdiff_t>(off));
        off += t.data.size();
    }
    return push(std::move(out));
}

NodeId Graph::mean_all(NodeId a) {
    check_id(a);
    const Tensor& A = node(a).value;
    double s = 0.0;
    for (double v : A.data) s += v;
    Node out;
    out.op = Op::kMeanAll;
    out.in = {a};
    out.value = Tensor::scalar(s / static_cast<double>(A.numel()));
    return push(std::move(out));
}

NodeId Graph::sum_all(NodeId a) {
    check_id(a);
    const Tensor& A = node(a).value;
    double s = 0.0;
    for (double v : A.data) s += v;
    Node out;
    out.op = Op::kSumAll;
    out.in = {a};
    out.value = Tensor::scalar(s);
    return push(std::move(out));
}

NodeId Graph::mean_rows(NodeId a) {
    check_id(a);
    const Tensor& A = node(a).value;
    if (A.rank() != 2) throw ShapeMismatch("mean_rows needs rank 2, got " + shape_str(A.shape));
    const int64_t n = A.shape[0], c = A.shape[1];
    Node out;
    out.op = Op::kMeanRows;
    out.in = {a};
    out.value = Tensor({c});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < c; ++j) {
            out.value.data[static_cast<size_t>(j)] += A.data[static_cast<size_t>(i * c + j)];
        }
    }
    for (auto& v : out.value.data) v /= static_cast<double>(n);
    return push(std::move(out));
}

NodeId Graph::square(NodeId a) {
    check_id(a);
    Node out;
    out.op = Op::kSquare;
    out.in = {a};
    out.value = node(a).value;
    out.value.grad.clear();
    for (auto& v : out.value.data) v *= v;
    return push(std::move(out));
}

NodeId Graph::log(NodeId a) {
    check_id(a);
    Node out;
    out.op = Op::kLog;
    out.in = {a};
    out.value = node(a).value;
    out.value.grad.clear();
    for (auto& v : out.value.data) v = std::log(v);
    return push(std::move(out));
}

NodeId Graph::exp(NodeId a) {
    check_id(a);
    Node out;
    out.op = Op::kExp;
    out.in = {a};
    out.value = node(a).value;
    out.value.grad.clear();
    for (auto& v : out.value.data) v = std::exp(v);
    return push(std::move(out));
}

namespace {
double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}
}  // namespace

NodeId Graph::cosine_similarity(NodeId a, NodeId b) {
    check_id(a);
    check_id(b);
    const Tensor& A = node(a).value;
    const Tensor& B = node(b).value;
    if (A.numel() != B.numel()) {
        throw ShapeMismatch("cosine_similarity " + shape_str(A.shape) + " vs " + shape_str(B.shape));
    }
    const double na = vec_norm(A.data);
    const double nb = vec_norm(B.data);
    if (na < 1e-12 || nb < 1e-12) {
        throw NormalizationError("cosine_similarity of a near-zero vector");
    }
    double dot = 0.0;
    for (size_t i = 0; i < A.data.size(); ++i) dot += A.data[i] * B.data[i];
    Node out;
    out.op = Op::kCosine;
    out.in = {a, b};
    out.value = Tensor::scalar(dot / (na * nb));
    return push(std::move(out));
}

NodeId Graph::l2_normalize(NodeId a) {
    check_id(a);
    const Tensor& A = node(a).value;
    const double n = vec_norm(A.data);
    if (n < 1e-12) throw NormalizationError("l2_normalize of a near-zero vector");
    Node out;
    out.op = Op::kL2Normalize;
    out.in = {a};
    out.value = A;
    out.value.grad.clear();
    for (auto& v : out.value.data) v /= n;
    return push(std::move(out));
}

NodeId Graph::cross_entropy(NodeId logits, int64_t label) {
    check_id(logits);
    const Tensor& Z = node(logits).value;
    if (Z.rank() != 1) throw ShapeMismatch("cross_entropy needs a logits vector");
    if (label < 0 || label >= Z.shape[0]) {
        throw LabelOutOfRange("label " + std::to_string(label) + " for " +
                              std::to_string(Z.shape[0]) + " classes");
    }
    // stable log-sum-exp
    double m = Z.data[0];
    for (double v : Z.data) m = std::max(m, v);
    double s = 0.0;
    for (double v : Z.data) s += std::exp(v - m);
    const double lse = m + std::log(s);
    Node out;
    out.op = Op::kCrossEntropy;
    out.in = {logits};
    out.label = label;
    out.value = Tensor::scalar(lse - Z.data[static_cast<size_t>(label)]);
    return push(std::move(out));
}

void Graph::backward(NodeId loss) {
    check_id(loss);
    if (nodes_.empty()) throw GraphNotEvaluated("backward on empty graph");
    if (backward_done_) throw GraphNotEvaluated("backward already run on this tape");
    if (node(loss).value.numel() != 1) {
        throw NotScalarLoss("loss node has shape " + shape_str(node(loss).value.shape));
    }
    backward_done_ = true;
    for (auto& n : nodes_) n.value.ensure_grad();
    node(loss).value.grad[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = node(id);
        if (n.op == Op::kLeaf) continue;
        bool touched = false;
        for (double g : n.value.grad) {
            if (g != 0.0) {
                touched = true;
                break;
            }
        }
        if (touched) backprop_into(n);
    }
}

void Graph::backprop_into(Node& out) {
    const std::vector<double>& g = out.value.grad;
    switch (out.op) {
        case Op::kLeaf:
            return;
        case Op::kMatmul: {
            Node& na = node(out.in[0]);
            Node& nb = node(out.in[1]);
            const Tensor& A = na.value;
            const Tensor& B = nb.value;
            const int64_t n = A.shape[0], k = A.shape[1], m = B.shape[1];
            // dA = g . B^T
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const double* gi = &g[static_cast<size_t>(i * m)];
                    const double* bk = &B.data[static_cast<size_t>(kk * m)];
                    for (int64_t j = 0; j < m; ++j) acc += gi[j] * bk[j];
                    na.value.grad[static_cast<size_t>(i * k + kk)] += acc;
                }
            }
            // dB = A^T . g
            for (int64_t kk = 0; kk < k; ++kk) {
                double* dbk = &nb.value.grad[static_cast<size_t>(kk * m)];
                for (int64_t i = 0; i < n; ++i) {
                    const double av = A.data[static_cast<size_t>(i * k + kk)];
                    const double* gi = &g[static_cast<size_t>(i * m)];
                    for (int64_t j = 0; j < m; ++j) dbk[j] += av * gi[j];
                }
            }
            return;
        }
        case Op::kAdd: {
            Node& na = node(out.in[0]);
            Node& nb = node(out.in[1]);
            for (size_t i = 0; i < g.size(); ++i) {
                na.value.grad[i] += g[i];
                nb.value.grad[i] += g[i];
            }
            return;
        }
        case Op::kSub: {
            Node& na = node(out.in[0]);
            Node& nb = node(out.in[1]);
            for (size_t i = 0; i < g.size(); ++i) {
                na.value.grad[i] += g[i];
                nb.value.grad[i] -= g[i];
            }
            return;
        }
        case Op::kAddRowVec: {
            Node& na = node(out.in[0]);
            Node& nv = node(out.in[1]);
            const size_t c = static_cast<size_t>(nv.value.numel());
            for (size_t i = 0; i < g.size(); ++i) {
                na.value.grad[i] += g[i];
                nv.value.grad[i % c] += g[i];
            }
            return;
        }
        case Op::kMulRowVec: {
            Node& na = node(out.in[0]);
            Node& nv = node(out.in[1]);
            const size_t c = static_cast<size_t>(nv.value.numel());
            for (size_t i = 0; i < g.size(); ++i) {
                na.value.grad[i] += g[i] * nv.value.data[i % c];
                nv.value.grad[i % c] += g[i] * na.value.data[i];
            }
            return;
        }
        case Op::kScale: {
            Node& na = node(out.in[0]);
            for (size_t i = 0; i < g.size(); ++i) na.value.grad[i] += out.a * g[i];
            return;
        }
        case Op::kRelu: {
            Node& na = node(out.in[0]);
            for (size_t i = 0; i < g.size(); ++i) {
                if (na.value.data[i] > 0.0) na.value.grad[i] += g[i];
            }
            return;
        }
        case Op::kGelu: {
            Node& na = node(out.in[0]);
            for (size_t i = 0; i < g.size(); ++i) {
                const double x = na.value.data[i];
                const double u = kSqrt2OverPi * (x + kGeluCoeff * x * x * x);
                const double t = std::tanh(u);
                const double du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x * x);
                const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                na.value.grad[i] += d * g[i];
            }
            return;
        }
        case Op::kSoftmax: {
            Node& na = node(out.in[0]);
            const int64_t c = last_dim(out.value);
            const int64_t rows = row_count(out.value);
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = &out.value.data[static_cast<size_t>(r * c)];
                const double* gy = &g[static_cast<size_t>(r * c)];
                double dot = 0.0;
                for (int64_t j = 0; j < c; ++j) dot += y[j] * gy[j];
                double* gx = &na.value.grad[static_cast<size_t>(r * c)];
                for (int64_t j = 0; j < c; ++j) gx[j] += y[j] * (gy[j] - dot);
            }
            return;
        }
        case Op::kLayerNorm: {
            Node& na = node(out.in[0]);
            const int64_t c = last_dim(out.value);
            const int64_t rows = row_count(out.value);
            const double eps = out.a;
            for (int64_t r = 0; r < rows; ++r) {
                const double* x = &na.value.data[static_cast<size_t>(r * c)];
                const double* y = &out.value.data[static_cast<size_t>(r * c)];
                const double* gy = &g[static_cast<size_t>(r * c)];
                double mu = 0.0;
                for (int64_t j = 0; j < c; ++j) mu += x[j];
                mu /= static_cast<double>(c);
                double var = 0.0;
                for (int64_t j = 0; j < c; ++j) var += (x[j] - mu) * (x[j] - mu);
                var /= static_cast<double>(c);
                const double inv = 1.0 / std::sqrt(var + eps);
                double gmean = 0.0, gydot = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    gmean += gy[j];
                    gydot += gy[j] * y[j];
                }
                gmean /= static_cast<double>(c);
                gydot /= static_cast<double>(c);
                double* gx = &na.value.grad[static_cast<size_t>(r * c)];
                for (int64_t j = 0; j < c; ++j) {
                    gx[j] += inv * (gy[j] - gmean - y[j] * gydot);
                }
            }
            return;
        }
        case Op::kReshape: {
            Node& na = node(out.in[0]);
            for (size_t i = 0; i < g.size(); ++i) na.value.grad[i] += g[i];
            return;
        }
        case Op::kTranspose: {
            Node& na = node(out.in[0]);
            const int64_t m = out.value.shape[0], n = out.value.shape[1];
            for (int64_t j = 0; j < m; ++j) {
                for (int64_t i = 0; i < n; ++i) {
                    na.value.grad[static_cast<size_t>(i * m + j)] += g[static_cast<size_t>(j * n + i)];
                }
            }
            return;
        }
        case Op::kGatherRows: {
            Node& na = node(out.in[0]);
            const int64_t c = na.value.shape[1];
            for (size_t r = 0; r < out.idx->size(); ++r) {
                double* dst = &na.value.grad[static_cast<size_t>((*out.idx)[r] * c)];
                const double* src = &g[r * static_cast<size_t>(c)];
                for (int64_t j = 0; j < c; ++j) dst[j] += src[j];
            }
            return;
        }
        case Op::kConcatRows: {
            size_t off = 0;
            for (NodeId p : out.in) {
                Node& np = node(p);
                for (size_t i = 0; i < np.value.data.size(); ++i) {
                    np.value.grad[i] += g[off + i];
                }
                off += np.value.data.size();
            }
            return;
        }
        case Op::kMeanAll: {
            Node& na = node(out.in[0]);
            const double gv = g[0] / static_cast<double>(na.value.numel());
            for (auto& dv : na.value.grad) dv += gv;
            return;
        }
        case Op::kSumAll: {
            Node& na = node(out.in[0]);
            for (auto& dv : na.value.grad) dv += g[0];
            return;
        }
        case Op::kMeanRows: {
            Node& na = node(out.in[0]);
            const int64_t n = na.value.shape[0], c = na.value.shape[1];
            for (int64_t i = 0; i < n; ++i) {
                for (int64_t j = 0; j < c; ++j) {
                    na.value.grad[static_cast<size_t>(i * c + j)] +=
                        g[static_cast<size_t>(j)] / static_cast<double>(n);
                }
            }
            return;
        }
        case Op::kSquare: {
            Node& na = node(out.in[0]);
            for (size_t i = 0; i < g.size(); ++i) na.value.grad[i] += 2.0 * na.value.data[i] * g[i];
            return;
        }
        case Op::kLog: {
            Node& na = node(out.in[0]);
            for (size_t i = 0; i < g.size(); ++i) na.value.grad[i] += g[i] / na.value.data[i];
            return;
        }
        case Op::kExp: {
            Node& na = node(out.in[0]);
            for (size_t i = 0; i < g.size(); ++i) na.value.grad[i] += out.value.data[i] * g[i];
            return;
        }
        case Op::kCosine: {
            Node& na = node(out.in[0]);
            Node& nb = node(out.in[1]);
            const double cosv = out.value.data[0];
            const double gv = g[0];
            const double nna = vec_norm(na.value.data);
            const double nnb = vec_norm(nb.value.data);
            for (size_t i = 0; i < na.value.data.size(); ++i) {
                const double av = na.value.data[i], bv = nb.value.data[i];
                na.value.grad[i] += gv * (bv / (nna * nnb) - cosv * av / (nna * nna));
                nb.value.grad[i] += gv * (av / (nna * nnb) - cosv * bv / (nnb * nnb));
            }
            return;
        }
        case Op::kL2Normalize: {
            Node& na = node(out.in[0]);
            const double n = vec_norm(na.value.data);
            double ydot = 0.0;
            for (size_t i = 0; i < g.size(); ++i) ydot += out.value.data[i] * g[i];
            for (size_t i = 0; i < g.size(); ++i) {
                na.value.grad[i] += (g[i] - out.value.data[i] * ydot) / n;
            }
            return;
        }
        case Op::kCrossEntropy: {
            Node& na = node(out.in[0]);
            const Tensor& Z = na.value;
            double m = Z.data[0];
            for (double v : Z.data) m = std::max(m, v);
            double s = 0.0;
            for (double v : Z.data) s += std::exp(v - m);
            const double gv = g[0];
            for (size_t i = 0; i < Z.data.size(); ++i) {
                const double p = std::exp(Z.data[i] - m) / s;
                const double onehot = (static_cast<int64_t>(i) == out.label) ? 1.0 : 0.0;
                na.value.grad[i] += gv * (p - onehot);
            }
            return;
        }
    }
}

}  // namespace selffed
