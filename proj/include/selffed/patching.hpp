#pragma once

#include <cstdint>
#include <vector>

#include "selffed/rng.hpp"
#include "selffed/tensor.hpp"

namespace selffed {

/// Geometry of a square-patch partition of an H x W x C image.
struct PatchGrid {
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 0;
    int64_t patch_side = 0;

    PatchGrid() = default;
    PatchGrid(int64_t h, int64_t w, int64_t c, int64_t v);

    int64_t grid_h() const { return height / patch_side; }
    int64_t grid_w() const { return width / patch_side; }
    int64_t patch_count() const { return grid_h() * grid_w(); }          // R
    int64_t patch_pixels() const { return patch_side * patch_side * channels; }
};

/// Disjoint split of {0..R-1} into visible and masked patch indices, both
/// kept sorted. The masked count follows the floor rule |masked| =
/// floor(ratio * R).
struct MaskPlan {
    double ratio = 0.0;
    std::vector<int64_t> visible;  // unmasked, sorted
    std::vector<int64_t> masked;   // sorted

    static MaskPlan from_masked(int64_t patch_count, double ratio, std::vector<int64_t> masked);
    bool is_masked(int64_t patch) const;
    int64_t patch_count() const { return static_cast<int64_t>(visible.size() + masked.size()); }
};

/// Uniformly random masked subset of floor(ratio * R) patches.
MaskPlan sample_mask(int64_t patch_count, double ratio, Rng& rng);

/// Non-default alternative: the same total count spread across attention
/// windows (largest remainder), uniform within each window.
MaskPlan sample_mask_per_window(int64_t grid_side, int64_t window, double ratio, Rng& rng);

/// Flat source index for every element of the (R x V^2*C) patch matrix,
/// in row-major patch order. Reused by the differentiable patchify path.
std::vector<int64_t> patch_gather_indices(const PatchGrid& grid);

/// Image (H x W x C) -> patches (R x V^2*C). Exact inverse of reassemble.
Tensor partition_patches(const Tensor& image, int64_t patch_side);
Tensor reassemble(const Tensor& patches, const PatchGrid& grid);

enum class AugmentPhase { kPretrain, kFinetune };

/// Augmentation recipe: flip, scale, crop in both phases; color jitter only
/// while pre-training, small rotations only while fine-tuning.
struct AugmentSpec {
    double flip_prob = 0.5;
    int64_t crop = 0;               // output side; 0 = keep input side
    double scale_lo = 1.0;
    double scale_hi = 1.0;
    double jitter = 0.0;            // per-channel gain/bias strength
    double rotation_degrees = 0.0;
            // scaling resamples nearest-neighbor unless this is set
    bool bilinear = false;
    AugmentPhase phase = AugmentPhase::kPretrain;

    static AugmentSpec identity(AugmentPhase phase = AugmentPhase::kPretrain);
    bool is_identity() const;
    void validate(int64_t image_side) const;
};

// deterministic building blocks, exposed for direct testing
Tensor flip_horizontal(const Tensor& image);
Tensor resize_nearest(const Tensor& image, int64_t out_h, int64_t out_w);
Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);
Tensor crop_image(const Tensor& image, int64_t top, int64_t left, int64_t side);
Tensor rotate_nearest(const Tensor& image, double degrees);

/// Seeded augmentation pipeline; output side equals spec.crop (or the input
/// side when crop is 0) and values stay inside [0, 1].
Tensor augment(const Tensor& image, const AugmentSpec& spec, Rng& rng);

}  // namespace selffed
