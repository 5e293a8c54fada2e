#pragma once

#include <span>
#include <vector>

#include "selffed/graph.hpp"
#include "selffed/patching.hpp"

namespace selffed {

/// Fixed-capacity FIFO ring of L2-normalized embedding vectors; the
/// negative-sample store for the contrastive loss. The oldest entry is
/// evicted first once the ring is full.
class MemoryQueue {
public:
    explicit MemoryQueue(int64_t capacity);

    void push(std::span<const double> embedding);
    void push_batch(const std::vector<std::vector<double>>& embeddings);

    int64_t size() const { return count_; }
    int64_t capacity() const { return capacity_; }
    int64_t dim() const { return dim_; }
    bool empty() const { return count_ == 0; }

    /// Entries oldest-to-newest as a (size x dim) tensor.
    Tensor snapshot() const;
    std::vector<double> entry(int64_t i) const;  // i = 0 is oldest

private:
    int64_t capacity_;
    int64_t dim_ = -1;
    int64_t cursor_ = 0;  // next write slot
    int64_t count_ = 0;
    std::vector<double> store_;
};

struct ContrastiveConfig {
    double temperature = 0.2;   // never stated in the source setup; desk default
    int64_t queue_capacity = 256;
    double target_decay = 0.99;
    bool include_positive = true;  // standard InfoNCE denominator

    void validate() const;
};

/// Mean over masked patches of the per-patch pixel-mean squared error.
/// Unmasked patches never contribute.
double masked_mse(const Tensor& pred, const Tensor& target, const MaskPlan& plan,
                  const PatchGrid& grid);

/// Differentiable patchify: image node (H x W x C) -> (R x V^2*C).
NodeId patchify_node(Graph& g, NodeId image, const PatchGrid& grid);
/// Inverse of patchify_node.
NodeId reassemble_node(Graph& g, NodeId patches, const PatchGrid& grid);

/// Graph form of masked_mse; gradients reach only masked-patch pixels.
NodeId masked_mse_node(Graph& g, NodeId pred_image, const Tensor& target, const MaskPlan& plan,
                       const PatchGrid& grid);

/// InfoNCE over a positive pair and the queued negatives. Cosine
/// similarities; the positive pair sits in the denominator unless
/// include_positive is false (ablation mode).
double info_nce(std::span<const double> q_plus, std::span<const double> q_plusplus,
                const MemoryQueue& queue, double temperature, bool include_positive = true);

double info_nce_from_sims(double positive_sim, std::span<const double> negative_sims,
                          double temperature, bool include_positive = true);

/// Graph form. q_plus must be an L2-normalized node (the projection head
/// ends in a normalization, so its dot products with the unit-norm queue
/// entries are exact cosines).
NodeId info_nce_node(Graph& g, NodeId q_plus, const Tensor& q_plusplus, const Tensor& negatives,
                     double temperature, bool include_positive = true);

/// -log softmax(logits)[label], evaluated without building a graph.
double cross_entropy(const Tensor& logits, int64_t label);

}  // namespace selffed
