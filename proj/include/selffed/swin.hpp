#pragma once

#include <map>
#include <string>
#include <vector>

#include "selffed/params.hpp"
#include "selffed/patching.hpp"
#include "selffed/rng.hpp"

namespace selffed {

/// Geometry and widths of the windowed-attention autoencoder plus its
/// projection / classifier heads. Every downsampling step halves the token
/// grid side and doubles the channel width; the decoder mirrors the
/// encoder back up to the stage-0 grid.
struct ArchConfig {
    int64_t image_side = 32;
    int64_t channels = 1;
    int64_t patch_side = 4;
    int64_t embed_dim = 16;
    int64_t stages = 2;
    int64_t blocks_per_stage = 1;
    int64_t decoder_blocks_per_stage = 1;
    int64_t window = 4;
    int64_t heads = 2;  // stage 0; doubled with the channels so head width stays fixed
    int64_t mlp_ratio = 2;
    bool use_mask_token = true;
    int64_t proj_dim = 16;
    int64_t proj_hidden = 32;
    int64_t classifier_hidden = 32;
    int64_t num_classes = 2;

    void validate() const;

    int64_t grid_side() const { return image_side / patch_side; }
    int64_t token_count() const { return grid_side() * grid_side(); }
    int64_t patch_pixels() const { return patch_side * patch_side * channels; }
    int64_t stage_grid(int64_t s) const { return grid_side() >> s; }
    int64_t stage_channels(int64_t s) const { return embed_dim << s; }
    int64_t stage_heads(int64_t s) const { return heads << s; }
    int64_t feature_dim() const { return stage_channels(stages - 1); }
    PatchGrid patch_grid() const {
        return PatchGrid(image_side, image_side, channels, patch_side);
    }
};

/// Windowed-attention autoencoder. Owns no weights; weights live in a
/// ModelParams produced by init_params() and are bound into a Graph per
/// step. Window orders, shift masks and relative-position index tables are
/// precomputed once per configuration.
class Swin {
public:
    explicit Swin(ArchConfig cfg);

    const ArchConfig& cfg() const { return cfg_; }

    /// Fresh weights for all sections: enc.*, dec.*, proj.*, pred.*, cls.*
    ModelParams init_params(Rng& rng) const;

    /// Patch pixels -> stage-0 tokens. Visible tokens are the linear patch
    /// projection plus the absolute position code; masked tokens are the
    /// shared learnable vector with no position code added.
    NodeId embed(Graph& g, const Tensor& patches, const MaskPlan& plan,
                 const BoundParams& w) const;

    /// Stage-0 tokens through all attention stages; returns final tokens
    /// ((grid/2^{stages-1})^2 x feature_dim).
    NodeId encode(Graph& g, NodeId tokens, const BoundParams& w) const;

    /// (grid, channels) after each encoder stage.
    std::vector<std::pair<int64_t, int64_t>> stage_dims() const;

    /// Final encoder tokens -> per-patch pixel predictions (R x V^2*C).
    NodeId decode_patches(Graph& g, NodeId encoded, const BoundParams& w) const;
    /// decode_patches reassembled to the image extents.
    NodeId decode_image(Graph& g, NodeId encoded, const BoundParams& w) const;

    NodeId pool(Graph& g, NodeId tokens) const;  // mean over tokens
    /// linear -> ReLU -> linear -> L2 normalize
    NodeId project(Graph& g, NodeId pooled, const BoundParams& w) const;
    /// online-branch prediction layer: FC then renormalize
    NodeId predict_embed(Graph& g, NodeId embedding, const BoundParams& w) const;
    NodeId classify(Graph& g, NodeId pooled, const BoundParams& w) const;

    // ---- forward-only conveniences (no gradients) ----
    Tensor features(const ModelParams& params, const Tensor& image) const;
    std::vector<Tensor> features_batch(const ModelParams& params,
                                       std::span<const Tensor> images) const;
    Tensor reconstruct(const ModelParams& params, const Tensor& image,
                       const MaskPlan& plan) const;
    double reconstruction_loss(const ModelParams& params, const Tensor& image,
                               const MaskPlan& plan) const;
    /// Projection-head embedding (optionally through the prediction layer).
    Tensor embedding(const ModelParams& params, const Tensor& image,
                     bool with_predictor) const;

private:
    struct WindowPlan {
        std::vector<std::vector<int64_t>> window_rows;  // token rows per window, roll applied
        std::vector<int64_t> scatter;                   // window-major -> grid order
        std::vector<Tensor> masks;                      // per-window additive mask; empty if unshifted
    };

    const WindowPlan& plan_for(int64_t grid, bool shifted) const;
    NodeId attention_block(Graph& g, NodeId tokens, int64_t grid, int64_t channels,
                           int64_t n_heads, bool shifted, const std::string& prefix,
                           const BoundParams& w) const;
    NodeId merge_tokens(Graph& g, NodeId tokens, int64_t grid, const std::string& prefix,
                        const BoundParams& w) const;
    NodeId split_tokens(Graph& g, NodeId tokens, int64_t grid, int64_t channels,
                        const std::string& prefix, const BoundParams& w) const;

    ArchConfig cfg_;
    std::map<std::pair<int64_t, bool>, WindowPlan> plans_;
    std::map<int64_t, std::vector<int64_t>> merge_orders_;  // by grid side being merged
    std::vector<int64_t> rel_index_;                        // (w^2)^2 entries
};

}  // namespace selffed
