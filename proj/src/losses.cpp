#include "selffed/losses.hpp"

#include <cmath>

namespace selffed {

namespace {

double norm_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

void require_unit_norm(std::span<const double> v, double tol, const char* what) {
    if (std::fabs(norm_of(v) - 1.0) > tol) {
        throw NonUnitNorm(std::string(what) + " must be L2-normalized");
    }
}

}  // namespace

MemoryQueue::MemoryQueue(int64_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw Error("queue capacity must be >= 1");
}

void MemoryQueue::push(std::span<const double> embedding) {
    require_unit_norm(embedding, 1e-9, "queue entry");
    if (dim_ < 0) {
        dim_ = static_cast<int64_t>(embedding.size());
        store_.assign(static_cast<size_t>(capacity_ * dim_), 0.0);
    } else if (static_cast<int64_t>(embedding.size()) != dim_) {
        throw ShapeMismatch("queue entry dim " + std::to_string(embedding.size()) +
                            " vs " + std::to_string(dim_));
    }
    std::copy(embedding.begin(), embedding.end(),
              store_.begin() + static_cast<ptrdiff_t>(cursor_ * dim_));
    cursor_ = (cursor_ + 1) % capacity_;
    if (count_ < capacity_) ++count_;
}

void MemoryQueue::push_batch(const std::vector<std::vector<double>>& embeddings) {
    for (const auto& e : embeddings) push(e);
}

Tensor MemoryQueue::snapshot() const {
    if (count_ == 0) throw EmptyQueue("snapshot of empty queue");
    Tensor out({count_, dim_});
    for (int64_t i = 0; i < count_; ++i) {
        const auto e = entry(i);
        std::copy(e.begin(), e.end(), out.data.begin() + static_cast<ptrdiff_t>(i * dim_));
    }
    return out;
}

std::vector<double> MemoryQueue::entry(int64_t i) const {
    if (i < 0 || i >= count_) throw Error("queue entry index out of range");
    // oldest sits at the cursor once the ring has wrapped
    const int64_t start = (count_ == capacity_) ? cursor_ : 0;
    const int64_t slot = (start + i) % capacity_;
    return std::vector<double>(store_.begin() + static_cast<ptrdiff_t>(slot * dim_),
                               store_.begin() + static_cast<ptrdiff_t>((slot + 1) * dim_));
}

void ContrastiveConfig::validate() const {
    if (temperature <= 0.0) throw ZeroTemperature("temperature must be > 0");
    if (queue_capacity < 1) throw ValidationError("queue_capacity must be >= 1");
    if (target_decay < 0.0 || target_decay > 1.0) {
        throw ValidationError("target_decay outside [0,1]");
    }
}

double masked_mse(const Tensor& pred, const Tensor& target, const MaskPlan& plan,
                  const PatchGrid& grid) {
    if (!same_shape(pred, target)) {
        throw ShapeMismatch("masked_mse " + shape_str(pred.shape) + " vs " +
                            shape_str(target.shape));
    }
    if (plan.masked.empty()) throw EmptyMaskSet("masked_mse with no masked patches");
    if (plan.patch_count() != grid.patch_count()) {
        throw CountMismatch("mask plan does not match the patch grid");
    }
    const Tensor pp = partition_patches(pred, grid.patch_side);
    const Tensor tp = partition_patches(target, grid.patch_side);
    const int64_t px = grid.patch_pixels();
    double total = 0.0;
    for (int64_t j : plan.masked) {
        double patch_err = 0.0;
        for (int64_t k = 0; k < px; ++k) {
            const double d = pp.at(j, k) - tp.at(j, k);
            patch_err += d * d;
        }
        total += patch_err / static_cast<double>(px);
    }
    return total / static_cast<double>(plan.masked.size());
}

NodeId patchify_node(Graph& g, NodeId image, const PatchGrid& grid) {
    const auto idx = patch_gather_indices(grid);
    NodeId flat = g.reshape(image, {grid.height * grid.width * grid.channels, 1});
    NodeId gathered = g.gather_rows(flat, idx);
    return g.reshape(gathered, {grid.patch_count(), grid.patch_pixels()});
}

NodeId reassemble_node(Graph& g, NodeId patches, const PatchGrid& grid) {
    const auto inv = invert_permutation(patch_gather_indices(grid));
    NodeId flat = g.reshape(patches, {grid.patch_count() * grid.patch_pixels(), 1});
    NodeId scattered = g.gather_rows(flat, inv);
    return g.reshape(scattered, {grid.height, grid.width, grid.channels});
}

NodeId masked_mse_node(Graph& g, NodeId pred_image, const Tensor& target, const MaskPlan& plan,
                       const PatchGrid& grid) {
    if (plan.masked.empty()) throw EmptyMaskSet("masked_mse with no masked patches");
    NodeId pred_patches = patchify_node(g, pred_image, grid);
    NodeId pred_masked = g.gather_rows(pred_patches, plan.masked);
    Tensor target_patches = partition_patches(target, grid.patch_side);
    Tensor target_masked({static_cast<int64_t>(plan.masked.size()), grid.patch_pixels()});
    for (size_t r = 0; r < plan.masked.size(); ++r) {
        for (int64_t k = 0; k < grid.patch_pixels(); ++k) {
            target_masked.at(static_cast<int64_t>(r), k) = target_patches.at(plan.masked[r], k);
        }
    }
    NodeId diff = g.sub(pred_masked, g.constant(std::move(target_masked)));
    // equal pixel counts per patch, so one flat mean equals the
    // mean-over-patches of per-patch pixel means
    return g.mean_all(g.square(diff));
}

double info_nce_from_sims(double positive_sim, std::span<const double> negative_sims,
                          double temperature, bool include_positive) {
    if (temperature <= 0.0) throw ZeroTemperature("temperature must be > 0");
    if (negative_sims.empty()) throw EmptyQueue("InfoNCE needs at least one negative");
    const double zp = positive_sim / temperature;
    double denom = include_positive ? std::exp(zp) : 0.0;
    for (double s : negative_sims) denom += std::exp(s / temperature);
    return std::log(denom) - zp;
}

double info_nce(std::span<const double> q_plus, std::span<const double> q_plusplus,
                const MemoryQueue& queue, double temperature, bool include_positive) {
    if (queue.empty()) throw EmptyQueue("InfoNCE with an empty queue");
    require_unit_norm(q_plus, 1e-6, "q_plus");
    require_unit_norm(q_plusplus, 1e-6, "q_plusplus");
    double pos = 0.0;
    for (size_t i = 0; i < q_plus.size(); ++i) pos += q_plus[i] * q_plusplus[i];
    std::vector<double> negs(static_cast<size_t>(queue.size()), 0.0);
    for (int64_t i = 0; i < queue.size(); ++i) {
        const auto e = queue.entry(i);
        double s = 0.0;
        for (size_t k = 0; k < e.size(); ++k) s += q_plus[k] * e[k];
        negs[static_cast<size_t>(i)] = s;
    }
    return info_nce_from_sims(pos, negs, temperature, include_positive);
}

NodeId info_nce_node(Graph& g, NodeId q_plus, const Tensor& q_plusplus, const Tensor& negatives,
                     double temperature, bool include_positive) {
    if (temperature <= 0.0) throw ZeroTemperature("temperature must be > 0");
    if (negatives.numel() == 0) throw EmptyQueue("InfoNCE with no negatives");
    const int64_t dim = g.val(q_plus).numel();
    NodeId pos = g.cosine_similarity(q_plus, g.constant(q_plusplus));
    NodeId col = g.reshape(q_plus, {dim, 1});
    NodeId neg_sims = g.matmul(g.constant(negatives), col);  // (K x 1), dots == cosines
    NodeId neg_exp_sum = g.sum_all(g.exp(g.scale(neg_sims, 1.0 / temperature)));
    NodeId zp = g.scale(pos, 1.0 / temperature);
    NodeId denom = include_positive ? g.add(g.exp(zp), neg_exp_sum) : neg_exp_sum;
    return g.sub(g.log(denom), zp);
}

double cross_entropy(const Tensor& logits, int64_t label) {
    if (logits.rank() != 1) throw ShapeMismatch("cross_entropy needs a logits vector");
    if (label < 0 || label >= logits.shape[0]) {
        throw LabelOutOfRange("label " + std::to_string(label) + " for " +
                              std::to_string(logits.shape[0]) + " classes");
    }
    double m = logits.data[0];
    for (double v : logits.data) m = std::max(m, v);
    double s = 0.0;
    for (double v : logits.data) s += std::exp(v - m);
    return m + std::log(s) - logits.data[static_cast<size_t>(label)];
}

}  // namespace selffed
