#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sepp/common.hpp"
#include "sepp/dataset.hpp"
#include "sepp/rng.hpp"

// Stochastic augmentation (resized crop, horizontal flip, color jitter,
// random grayscale) and epoch assembly for the combined training set of
// instance pairs plus semantic positive pairs.
//
// All randomness is counter-based: every stochastic field derives its own
// value from hash(policy.seed, draw_seed, field_id), so no transform's draw
// shifts another's, toggling transforms off keeps the rest bit-stable, and
// parallel workers need no shared generator.

namespace sepp {

struct AugmentationPolicy {
    double crop_scale_lo = 0.2; // area fraction bounds of the random crop
    double crop_scale_hi = 1.0;
    double flip_probability = 0.5;
    double jitter_strength = 0.0;       // multiplier bounds [1-s, 1+s]
    double grayscale_probability = 0.2;
    std::size_t output_height = 0; // 0 means keep the input size
    std::size_t output_width = 0;
    std::uint64_t seed = 0;

    void validate() const {
        require(flip_probability >= 0.0 && flip_probability <= 1.0 &&
                    grayscale_probability >= 0.0 && grayscale_probability <= 1.0,
                "augment: probabilities must lie in [0,1]");
        require(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi &&
                    crop_scale_hi <= 1.0,
                "augment: crop scale range must lie within (0,1], got [", crop_scale_lo,
                ", ", crop_scale_hi, "]");
        require(jitter_strength >= 0.0, "augment: jitter strength must be non-negative");
    }
};

namespace detail {

// Stable per-field draw in [0,1).
inline double field_unit(const AugmentationPolicy& policy, std::uint64_t draw_seed,
                         std::uint64_t field_id) {
    rng::Stream stream(rng::mix(rng::mix(policy.seed, draw_seed), field_id));
    return stream.next_unit();
}

enum : std::uint64_t {
    kFieldArea = 1,
    kFieldCropY = 2,
    kFieldCropX = 3,
    kFieldFlip = 4,
    kFieldBrightness = 5,
    kFieldContrast = 6,
    kFieldSaturation = 7,
    kFieldGrayscale = 8,
};

// Bilinear resize of one channel plane; the same-size case degenerates to an
// exact copy because the sample coordinates land on integer pixels.
inline void resize_plane(const float* src, std::size_t sh, std::size_t sw, float* dst,
                         std::size_t dh, std::size_t dw) {
    if (sh == dh && sw == dw) {
        std::copy(src, src + sh * sw, dst);
        return;
    }
    const double sy = double(sh) / double(dh);
    const double sx = double(sw) / double(dw);
    for (std::size_t y = 0; y < dh; ++y) {
        const double fy = std::max(0.0, (double(y) + 0.5) * sy - 0.5);
        const std::size_t y0 = std::min(sh - 1, std::size_t(fy));
        const std::size_t y1 = std::min(sh - 1, y0 + 1);
        const double wy = fy - double(y0);
        for (std::size_t x = 0; x < dw; ++x) {
            const double fx = std::max(0.0, (double(x) + 0.5) * sx - 0.5);
            const std::size_t x0 = std::min(sw - 1, std::size_t(fx));
            const std::size_t x1 = std::min(sw - 1, x0 + 1);
            const double wx = fx - double(x0);
            const double top = (1.0 - wx) * src[y0 * sw + x0] + wx * src[y0 * sw + x1];
            const double bot = (1.0 - wx) * src[y1 * sw + x0] + wx * src[y1 * sw + x1];
            dst[y * dw + x] = static_cast<float>((1.0 - wy) * top + wy * bot);
        }
    }
}

} // namespace detail

/// One stochastic view of an image, deterministic given (policy.seed,
/// draw_seed). Index and label ride along from the source record.
inline ImageRecord apply(const AugmentationPolicy& policy, const ImageRecord& img,
                         std::uint64_t draw_seed) {
    policy.validate();
    require(img.pixels.size() == img.pixel_count(), "augment: record ", img.index,
            " pixel buffer does not match its dims");
    const std::size_t out_h = policy.output_height ? policy.output_height : img.height;
    const std::size_t out_w = policy.output_width ? policy.output_width : img.width;
    require(out_h >= 1 && out_w >= 1, "augment: empty output size");

    // Crop geometry. The factor never exceeds 1, so a crop always fits in a
    // non-empty image; an empty image cannot host even the minimum crop.
    const std::size_t min_crop_h =
        std::max<std::size_t>(1, std::size_t(std::sqrt(policy.crop_scale_lo) * double(img.height) + 0.5));
    const std::size_t min_crop_w =
        std::max<std::size_t>(1, std::size_t(std::sqrt(policy.crop_scale_lo) * double(img.width) + 0.5));
    require(img.height >= min_crop_h && img.width >= min_crop_w,
            "augment: image ", img.index, " (", img.height, "x", img.width,
            ") is smaller than the minimum crop ", min_crop_h, "x", min_crop_w);

    std::size_t crop_h = img.height;
    std::size_t crop_w = img.width;
    std::size_t off_y = 0;
    std::size_t off_x = 0;
    const bool identity_crop = policy.crop_scale_lo == 1.0 && policy.crop_scale_hi == 1.0;
    if (!identity_crop) {
        const double area = policy.crop_scale_lo +
                            (policy.crop_scale_hi - policy.crop_scale_lo) *
                                detail::field_unit(policy, draw_seed, detail::kFieldArea);
        const double side = std::sqrt(area);
        crop_h = std::clamp<std::size_t>(std::size_t(side * double(img.height) + 0.5), 1,
                                         img.height);
        crop_w = std::clamp<std::size_t>(std::size_t(side * double(img.width) + 0.5), 1,
                                         img.width);
        off_y = std::size_t(detail::field_unit(policy, draw_seed, detail::kFieldCropY) *
                            double(img.height - crop_h + 1));
        off_x = std::size_t(detail::field_unit(policy, draw_seed, detail::kFieldCropX) *
                            double(img.width - crop_w + 1));
    }

    ImageRecord out;
    out.index = img.index;
    out.label = img.label;
    out.channels = img.channels;
    out.height = out_h;
    out.width = out_w;
    out.pixels.resize(img.channels * out_h * out_w);

    std::vector<float> crop(crop_h * crop_w);
    for (std::size_t c = 0; c < img.channels; ++c) {
        const float* plane = img.pixels.data() + c * img.height * img.width;
        if (identity_crop) {
            detail::resize_plane(plane, img.height, img.width,
                                 out.pixels.data() + c * out_h * out_w, out_h, out_w);
            continue;
        }
        for (std::size_t y = 0; y < crop_h; ++y) {
            const float* src_row = plane + (off_y + y) * img.width + off_x;
            std::copy(src_row, src_row + crop_w, crop.data() + y * crop_w);
        }
        detail::resize_plane(crop.data(), crop_h, crop_w,
                             out.pixels.data() + c * out_h * out_w, out_h, out_w);
    }

    if (policy.flip_probability > 0.0 &&
        detail::field_unit(policy, draw_seed, detail::kFieldFlip) < policy.flip_probability) {
        for (std::size_t c = 0; c < out.channels; ++c) {
            float* plane = out.pixels.data() + c * out_h * out_w;
            for (std::size_t y = 0; y < out_h; ++y) {
                std::reverse(plane + y * out_w, plane + (y + 1) * out_w);
            }
        }
    }

    if (policy.jitter_strength > 0.0) {
        const double s = policy.jitter_strength;
        auto factor = [&](std::uint64_t field) {
            const double lo = std::max(0.0, 1.0 - s);
            return lo + (1.0 + s - lo) * detail::field_unit(policy, draw_seed, field);
        };
        const float brightness = static_cast<float>(factor(detail::kFieldBrightness));
        for (float& p : out.pixels) {
            p *= brightness;
        }
        const float contrast = static_cast<float>(factor(detail::kFieldContrast));
        double mean = 0.0;
        for (float p : out.pixels) {
            mean += p;
        }
        mean /= double(out.pixels.size());
        for (float& p : out.pixels) {
            p = static_cast<float>((p - mean) * contrast + mean);
        }
        if (out.channels == 3) {
            const float saturation = static_cast<float>(factor(detail::kFieldSaturation));
            const std::size_t plane_size = out_h * out_w;
            float* r = out.pixels.data();
            float* g = r + plane_size;
            float* b = g + plane_size;
            for (std::size_t i = 0; i < plane_size; ++i) {
                const float gray = (r[i] + g[i] + b[i]) / 3.0f;
                r[i] = gray + (r[i] - gray) * saturation;
                g[i] = gray + (g[i] - gray) * saturation;
                b[i] = gray + (b[i] - gray) * saturation;
            }
        }
    }

    if (out.channels == 3 && policy.grayscale_probability > 0.0 &&
        detail::field_unit(policy, draw_seed, detail::kFieldGrayscale) <
            policy.grayscale_probability) {
        const std::size_t plane_size = out_h * out_w;
        float* r = out.pixels.data();
        float* g = r + plane_size;
        float* b = g + plane_size;
        for (std::size_t i = 0; i < plane_size; ++i) {
            const float gray = (r[i] + g[i] + b[i]) / 3.0f;
            r[i] = gray;
            g[i] = gray;
            b[i] = gray;
        }
    }

    if (policy.jitter_strength > 0.0) {
        for (float& p : out.pixels) {
            p = std::clamp(p, 0.0f, 1.0f);
        }
    }
    return out;
}

// ---- combined dataset and epoch assembly ----

struct CombinedDataset {
    std::vector<ImageRecord> original_items;
    SemanticPairSet spps; // indices refer to original_items positions
    std::uint64_t epoch_seed = 0;

    void validate() const {
        for (const Pair& p : spps.pairs) {
            require(p.anchor < original_items.size() && p.positive < original_items.size(),
                    "combined dataset: pair (", p.anchor, ",", p.positive,
                    ") does not resolve to existing items (have ", original_items.size(),
                    ")");
        }
    }
};

/// One training item: a positive pair of views. Pixels are materialized on
/// demand from the recorded draw seeds, so epochs stay cheap to describe.
struct EpochItem {
    bool semantic = false;  // false: two views of one instance
    std::size_t a = 0;      // original_items index of the first view's source
    std::size_t b = 0;      // second view's source (== a for instance items)
    std::uint64_t seed_a = 0;
    std::uint64_t seed_b = 0;
};

/// Deterministic epoch stream: one item per original image (two independent
/// views of it) plus one item per semantic pair (one view of each member),
/// shuffled by (epoch_seed, epoch).
inline std::vector<EpochItem> build_epoch(const CombinedDataset& ds, std::size_t epoch) {
    ds.validate();
    const std::uint64_t base = rng::mix(ds.epoch_seed, epoch);
    std::vector<EpochItem> items;
    items.reserve(ds.original_items.size() + ds.spps.pairs.size());
    for (std::size_t i = 0; i < ds.original_items.size(); ++i) {
        EpochItem item;
        item.semantic = false;
        item.a = i;
        item.b = i;
        item.seed_a = rng::mix(base, rng::mix(i, 0));
        item.seed_b = rng::mix(base, rng::mix(i, 1));
        items.push_back(item);
    }
    for (std::size_t t = 0; t < ds.spps.pairs.size(); ++t) {
        const std::size_t canonical = ds.original_items.size() + t;
        EpochItem item;
        item.semantic = true;
        item.a = ds.spps.pairs[t].anchor;
        item.b = ds.spps.pairs[t].positive;
        item.seed_a = rng::mix(base, rng::mix(canonical, 0));
        item.seed_b = rng::mix(base, rng::mix(canonical, 1));
        items.push_back(item);
    }
    rng::shuffle(items, rng::mix(base, 0x5f1e));
    return items;
}

/// Materialize the two views of an epoch item.
inline std::pair<ImageRecord, ImageRecord> make_views(const CombinedDataset& ds,
                                                      const AugmentationPolicy& policy,
                                                      const EpochItem& item) {
    return {apply(policy, ds.original_items[item.a], item.seed_a),
            apply(policy, ds.original_items[item.b], item.seed_b)};
}

} // namespace sepp
