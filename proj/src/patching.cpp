#include "selffed/patching.hpp"

#include <algorithm>
#include <cmath>

namespace selffed {

PatchGrid::PatchGrid(int64_t h, int64_t w, int64_t c, int64_t v)
    : height(h), width(w), channels(c), patch_side(v) {
    if (v <= 0 || h <= 0 || w <= 0 || c <= 0) {
        throw ShapeMismatch("PatchGrid with non-positive extent");
    }
    if (h % v != 0 || w % v != 0) {
        throw IndivisibleImage("patch side " + std::to_string(v) + " does not divide " +
                               std::to_string(h) + "x" + std::to_string(w));
    }
}

MaskPlan MaskPlan::from_masked(int64_t patch_count, double ratio, std::vector<int64_t> masked) {
    std::sort(masked.begin(), masked.end());
    MaskPlan plan;
    plan.ratio = ratio;
    plan.masked = std::move(masked);
    std::vector<bool> is_masked(static_cast<size_t>(patch_count), false);
    for (int64_t m : plan.masked) {
        if (m < 0 || m >= patch_count) throw CountMismatch("masked index out of range");
        if (is_masked[static_cast<size_t>(m)]) throw CountMismatch("duplicate masked index");
        is_masked[static_cast<size_t>(m)] = true;
    }
    plan.visible.reserve(static_cast<size_t>(patch_count) - plan.masked.size());
    for (int64_t i = 0; i < patch_count; ++i) {
        if (!is_masked[static_cast<size_t>(i)]) plan.visible.push_back(i);
    }
    return plan;
}

bool MaskPlan::is_masked(int64_t patch) const {
    return std::binary_search(masked.begin(), masked.end(), patch);
}

MaskPlan sample_mask(int64_t patch_count, double ratio, Rng& rng) {
    if (patch_count < 1) throw CountMismatch("sample_mask needs at least one patch");
    if (ratio < 0.0 || ratio > 1.0) throw FractionOutOfRange("masking ratio outside [0,1]");
    // floor rule, with near-integer products snapped so representation noise
    // cannot drop a patch from an exact ratio
    const double want = ratio * static_cast<double>(patch_count);
    const double snapped = std::round(want);
    const int64_t masked_count = (std::fabs(want - snapped) < 1e-9)
                                     ? static_cast<int64_t>(snapped)
                                     : static_cast<int64_t>(std::floor(want));
    auto picks = rng.sample_without_replacement(static_cast<int>(patch_count),
                                                static_cast<int>(masked_count));
    std::vector<int64_t> masked(picks.begin(), picks.end());
    return MaskPlan::from_masked(patch_count, ratio, std::move(masked));
}

MaskPlan sample_mask_per_window(int64_t grid_side, int64_t window, double ratio, Rng& rng) {
    if (grid_side < 1 || window < 1 || grid_side % window != 0) {
        throw CountMismatch("window must divide the token grid side");
    }
    if (ratio < 0.0 || ratio > 1.0) throw FractionOutOfRange("masking ratio outside [0,1]");
    const int64_t patch_count = grid_side * grid_side;
    const double want = ratio * static_cast<double>(patch_count);
    const double snapped = std::round(want);
    const int64_t total = (std::fabs(want - snapped) < 1e-9)
                              ? static_cast<int64_t>(snapped)
                              : static_cast<int64_t>(std::floor(want));

    const int64_t nw = grid_side / window;
    const int64_t windows = nw * nw;
    const int64_t per_window = window * window;
    // spread the total across windows: equal floor share, the remainder
    // assigned one patch at a time to randomly drawn windows
    std::vector<int64_t> quota(static_cast<size_t>(windows), total / windows);
    int64_t rest = total % windows;
    std::vector<int> order = rng.sample_without_replacement(static_cast<int>(windows),
                                                            static_cast<int>(windows));
    for (int64_t k = 0; k < rest; ++k) ++quota[static_cast<size_t>(order[static_cast<size_t>(k)])];

    std::vector<int64_t> masked;
    masked.reserve(static_cast<size_t>(total));
    for (int64_t wi = 0; wi < nw; ++wi) {
        for (int64_t wj = 0; wj < nw; ++wj) {
            const int64_t q = quota[static_cast<size_t>(wi * nw + wj)];
            auto picks = rng.sample_without_replacement(static_cast<int>(per_window),
                                                        static_cast<int>(q));
            for (int p : picks) {
                const int64_t oi = p / window, oj = p % window;
                masked.push_back((wi * window + oi) * grid_side + (wj * window + oj));
            }
        }
    }
    return MaskPlan::from_masked(patch_count, ratio, std::move(masked));
}

std::vector<int64_t> patch_gather_indices(const PatchGrid& grid) {
    const int64_t v = grid.patch_side, w = grid.width, c = grid.channels;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(grid.patch_count() * grid.patch_pixels()));
    for (int64_t pi = 0; pi < grid.grid_h(); ++pi) {
        for (int64_t pj = 0; pj < grid.grid_w(); ++pj) {
            for (int64_t dy = 0; dy < v; ++dy) {
                for (int64_t dx = 0; dx < v; ++dx) {
                    for (int64_t ch = 0; ch < c; ++ch) {
                        idx.push_back(((pi * v + dy) * w + (pj * v + dx)) * c + ch);
                    }
                }
            }
        }
    }
    return idx;
}

Tensor partition_patches(const Tensor& image, int64_t patch_side) {
    if (image.rank() != 3) throw ShapeMismatch("partition_patches expects H x W x C");
    PatchGrid grid(image.shape[0], image.shape[1], image.shape[2], patch_side);
    const auto idx = patch_gather_indices(grid);
    Tensor out({grid.patch_count(), grid.patch_pixels()});
    for (size_t i = 0; i < idx.size(); ++i) {
        out.data[i] = image.data[static_cast<size_t>(idx[i])];
    }
    return out;
}

Tensor reassemble(const Tensor& patches, const PatchGrid& grid) {
    if (patches.rank() != 2 || patches.shape[0] != grid.patch_count() ||
        patches.shape[1] != grid.patch_pixels()) {
        throw CountMismatch("reassemble: patches " + shape_str(patches.shape) +
                            " do not fit the grid");
    }
    const auto idx = patch_gather_indices(grid);
    Tensor out({grid.height, grid.width, grid.channels});
    for (size_t i = 0; i < idx.size(); ++i) {
        out.data[static_cast<size_t>(idx[i])] = patches.data[i];
    }
    return out;
}

AugmentSpec AugmentSpec::identity(AugmentPhase phase) {
    AugmentSpec s;
    s.flip_prob = 0.0;
    s.crop = 0;
    s.scale_lo = 1.0;
    s.scale_hi = 1.0;
    s.jitter = 0.0;
    s.rotation_degrees = 0.0;
    s.phase = phase;
    return s;
}

bool AugmentSpec::is_identity() const {
    return flip_prob == 0.0 && crop == 0 && scale_lo == 1.0 && scale_hi == 1.0 &&
           jitter == 0.0 && rotation_degrees == 0.0;
}

void AugmentSpec::validate(int64_t image_side) const {
    if (scale_lo < 0.0 || scale_lo > scale_hi) {
        throw ValidationError("augment scale range must satisfy 0 <= lo <= hi");
    }
    if (flip_prob < 0.0 || flip_prob > 1.0) throw ValidationError("flip_prob outside [0,1]");
    const int64_t out_side = crop > 0 ? crop : image_side;
    const int64_t min_scaled = static_cast<int64_t>(
        std::llround(static_cast<double>(image_side) * scale_lo));
    if (out_side > min_scaled) {
        throw CropTooLarge("crop " + std::to_string(out_side) + " exceeds minimum scaled side " +
                           std::to_string(min_scaled));
    }
    if (phase == AugmentPhase::kPretrain && rotation_degrees != 0.0) {
        throw ValidationError("rotation is a fine-tune augmentation");
    }
    if (phase == AugmentPhase::kFinetune && jitter != 0.0) {
        throw ValidationError("color jitter is a pre-train augmentation");
    }
}

Tensor flip_horizontal(const Tensor& image) {
    const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
    Tensor out(image.shape);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            for (int64_t ch = 0; ch < c; ++ch) {
                out.data[static_cast<size_t>((y * w + x) * c + ch)] =
                    image.data[static_cast<size_t>((y * w + (w - 1 - x)) * c + ch)];
            }
        }
    }
    return out;
}

Tensor resize_nearest(const Tensor& image, int64_t out_h, int64_t out_w) {
    const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
    if (out_h == h && out_w == w) return image;
    Tensor out({out_h, out_w, c});
    for (int64_t y = 0; y < out_h; ++y) {
        int64_t sy = static_cast<int64_t>((static_cast<double>(y) + 0.5) *
                                          static_cast<double>(h) / static_cast<double>(out_h));
        sy = std::clamp<int64_t>(sy, 0, h - 1);
        for (int64_t x = 0; x < out_w; ++x) {
            int64_t sx = static_cast<int64_t>((static_cast<double>(x) + 0.5) *
                                              static_cast<double>(w) / static_cast<double>(out_w));
            sx = std::clamp<int64_t>(sx, 0, w - 1);
            for (int64_t ch = 0; ch < c; ++ch) {
                out.data[static_cast<size_t>((y * out_w + x) * c + ch)] =
                    image.data[static_cast<size_t>((sy * w + sx) * c + ch)];
            }
        }
    }
    return out;
}

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
    const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
    if (out_h == h && out_w == w) return image;
    Tensor out({out_h, out_w, c});
    for (int64_t y = 0; y < out_h; ++y) {
        const double sy = (static_cast<double>(y) + 0.5) * static_cast<double>(h) /
                              static_cast<double>(out_h) -
                          0.5;
        const int64_t y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sy)), 0, h - 1);
        const int64_t y1 = std::min<int64_t>(y0 + 1, h - 1);
        const double fy = std::clamp(sy - static_cast<double>(y0), 0.0, 1.0);
        for (int64_t x = 0; x < out_w; ++x) {
            const double sx = (static_cast<double>(x) + 0.5) * static_cast<double>(w) /
                                  static_cast<double>(out_w) -
                              0.5;
            const int64_t x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor(sx)), 0, w - 1);
            const int64_t x1 = std::min<int64_t>(x0 + 1, w - 1);
            const double fx = std::clamp(sx - static_cast<double>(x0), 0.0, 1.0);
            for (int64_t ch = 0; ch < c; ++ch) {
                auto px = [&](int64_t yy, int64_t xx) {
                    return image.data[static_cast<size_t>((yy * w + xx) * c + ch)];
                };
                const double top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
                const double bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
                out.data[static_cast<size_t>((y * out_w + x) * c + ch)] =
                    top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    return out;
}

Tensor crop_image(const Tensor& image, int64_t top, int64_t left, int64_t side) {
    const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
    if (top < 0 || left < 0 || top + side > h || left + side > w) {
        throw CropTooLarge("crop window leaves the image");
    }
    if (top == 0 && left == 0 && side == h && side == w) return image;
    Tensor out({side, side, c});
    for (int64_t y = 0; y < side; ++y) {
        const double* src = &image.data[static_cast<size_t>(((top + y) * w + left) * c)];
        std::copy(src, src + side * c, &out.data[static_cast<size_t>(y * side * c)]);
    }
    return out;
}

Tensor rotate_nearest(const Tensor& image, double degrees) {
    if (degrees == 0.0) return image;
    const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    Tensor out(image.shape);
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            // inverse map: rotate the output coordinate back into the source
            const double dy = static_cast<double>(y) - cy;
            const double dx = static_cast<double>(x) - cx;
            const double sy = cy + cs * dy - sn * dx;
            const double sx = cx + sn * dy + cs * dx;
            const int64_t iy = static_cast<int64_t>(std::floor(sy + 0.5));
            const int64_t ix = static_cast<int64_t>(std::floor(sx + 0.5));
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;  // fill 0
            for (int64_t ch = 0; ch < c; ++ch) {
                out.data[static_cast<size_t>((y * w + x) * c + ch)] =
                    image.data[static_cast<size_t>((iy * w + ix) * c + ch)];
            }
        }
    }
    return out;
}

Tensor augment(const Tensor& image, const AugmentSpec& spec, Rng& rng) {
    if (image.rank() != 3) throw ShapeMismatch("augment expects H x W x C");
    const int64_t h = image.shape[0], w = image.shape[1], c = image.shape[2];
    Tensor out = image;

    if (spec.flip_prob > 0.0 && rng.uniform01() < spec.flip_prob) {
        out = flip_horizontal(out);
    }

    if (spec.scale_lo != 1.0 || spec.scale_hi != 1.0) {
        const double s = spec.scale_lo == spec.scale_hi
                             ? spec.scale_lo
                             : rng.uniform(spec.scale_lo, spec.scale_hi);
        const int64_t nh = std::max<int64_t>(1, std::llround(static_cast<double>(h) * s));
        const int64_t nw = std::max<int64_t>(1, std::llround(static_cast<double>(w) * s));
        out = spec.bilinear ? resize_bilinear(out, nh, nw) : resize_nearest(out, nh, nw);
    }

    const int64_t side = spec.crop > 0 ? spec.crop : std::min(h, w);
    if (out.shape[0] != side || out.shape[1] != side) {
        if (out.shape[0] < side || out.shape[1] < side) {
            throw CropTooLarge("scaled image " + shape_str(out.shape) + " smaller than crop " +
                               std::to_string(side));
        }
        const int64_t top = static_cast<int64_t>(rng.below(static_cast<uint64_t>(out.shape[0] - side + 1)));
        const int64_t left = static_cast<int64_t>(rng.below(static_cast<uint64_t>(out.shape[1] - side + 1)));
        out = crop_image(out, top, left, side);
    }

    if (spec.phase == AugmentPhase::kPretrain && spec.jitter > 0.0) {
        std::vector<double> gain(static_cast<size_t>(c)), bias(static_cast<size_t>(c));
        for (int64_t ch = 0; ch < c; ++ch) {
            gain[static_cast<size_t>(ch)] = rng.uniform(1.0 - spec.jitter, 1.0 + spec.jitter);
            bias[static_cast<size_t>(ch)] = rng.uniform(-spec.jitter, spec.jitter);
        }
        for (size_t i = 0; i < out.data.size(); ++i) {
            const size_t ch = i % static_cast<size_t>(c);
            out.data[i] = std::clamp(out.data[i] * gain[ch] + bias[ch], 0.0, 1.0);
        }
    }

    if (spec.phase == AugmentPhase::kFinetune && spec.rotation_degrees > 0.0) {
        const double angle = rng.uniform(-spec.rotation_degrees, spec.rotation_degrees);
        out = rotate_nearest(out, angle);
        for (auto& v : out.data) v = std::clamp(v, 0.0, 1.0);
    }

    return out;
}

}  // namespace selffed
