#pragma once

#include <iostream>

#include "frcnn/dataset.hpp"

namespace frcnn {

inline const std::vector<std::string>& synth_class_names() {
    static const std::vector<std::string> names{"background", "facade", "window", "door"};
    return names;
}

constexpr std::size_t kSynthBackground = 0;
constexpr std::size_t kSynthFacade = 1;
constexpr std::size_t kSynthWindow = 2;
constexpr std::size_t kSynthDoor = 3;

// Scene layout for the deformed-facade generator: windows/doors sit on a
// facade-plane grid, mapped through a height-direction shear composed with a
// per-column depth scale decay, so corner ground truth is analytically exact.
struct SceneParams {
    std::size_t width = 96, height = 96;
    std::size_t facade_count = 2;  // 1 or 2, the second mirrors the first
    std::size_t grid_rows = 3, grid_cols = 4;
    Scalar shear_min_deg = -40, shear_max_deg = 40;
    Scalar depth_decay = 0.85;  // column scale ratio, (0,1]
    Scalar noise_amp = 0.04;
    Scalar texture_amp = 0.025;
    std::uint64_t seed = 1;

    void validate() const {
        require(width >= 32 && height >= 32, "scene must be at least 32x32");
        require(facade_count == 1 || facade_count == 2, "facade count must be 1 or 2");
        require(grid_rows >= 1 && grid_cols >= 1, "grid must be non-empty");
        require(shear_min_deg > -60 && shear_max_deg < 60 && shear_min_deg <= shear_max_deg,
                "shear range must lie inside (-60, 60) degrees");
        require(depth_decay > 0 && depth_decay <= 1, "depth decay must be in (0,1]");
    }
};

namespace detail {

struct Rgb {
    Scalar r, g, b;
};

struct FacadeFrame {
    Scalar x_far, x_near;  // horizontal extent; depth increases toward x_far
    Scalar slope;          // dy/dx of the facade's horizontal lines
    Scalar y_base;         // top edge height at x_far
};

inline Scalar facade_top(const FacadeFrame& f, Scalar x) {
    return f.y_base + f.slope * (x - f.x_far);
}

// Quad of a grid cell spanning [x0,x1] horizontally and [v0,v1] in plane
// height units, scaled by the column factor.
inline std::vector<Vec2> cell_quad(const FacadeFrame& f, Scalar x0, Scalar x1, Scalar v0, Scalar v1,
                                   Scalar col_scale) {
    const auto y = [&](Scalar x, Scalar v) { return facade_top(f, x) + v * col_scale; };
    return {{x0, y(x0, v0)}, {x1, y(x1, v0)}, {x1, y(x1, v1)}, {x0, y(x0, v1)}};
}

inline AABox ring_envelope(const std::vector<Vec2>& ring) {
    AABox e{ring[0].x, ring[0].y, ring[0].x, ring[0].y};
    for (const Vec2& p : ring) {
        e.x_min = std::min(e.x_min, p.x);
        e.x_max = std::max(e.x_max, p.x);
        e.y_min = std::min(e.y_min, p.y);
        e.y_max = std::max(e.y_max, p.y);
    }
    return e;
}

}  // namespace detail

inline LabeledSample generate_scene(const SceneParams& params, std::size_t* skipped_out = nullptr) {
    params.validate();
    const std::size_t W = params.width, H = params.height;
    Rng rng(derive_seed(params.seed, 0x5ce7e));

    LabeledSample sample;
    sample.width = W;
    sample.height = H;
    sample.semantic.assign(W * H, kSynthBackground);

    // per-scene appearance
    const Scalar phi_deg = rng.uniform(params.shear_min_deg, params.shear_max_deg);
    const Scalar slope = std::tan(phi_deg * 3.14159265358979323846 / 180.0);
    const detail::Rgb sky{rng.uniform(0.65, 0.8), rng.uniform(0.7, 0.85), rng.uniform(0.85, 0.95)};
    const detail::Rgb facade_col{rng.uniform(0.5, 0.7), rng.uniform(0.45, 0.62), rng.uniform(0.4, 0.55)};
    const detail::Rgb window_col{rng.uniform(0.08, 0.2), rng.uniform(0.12, 0.25), rng.uniform(0.2, 0.38)};
    const detail::Rgb door_col{rng.uniform(0.3, 0.45), rng.uniform(0.16, 0.26), rng.uniform(0.08, 0.18)};

    std::vector<Scalar> img(3 * W * H);
    const auto paint = [&](std::size_t x, std::size_t y, const detail::Rgb& c) {
        img[0 * W * H + y * W + x] = c.r;
        img[1 * W * H + y * W + x] = c.g;
        img[2 * W * H + y * W + x] = c.b;
    };
    // sky gradient
    for (std::size_t y = 0; y < H; ++y) {
        const Scalar f = Scalar(1) - Scalar(0.25) * static_cast<Scalar>(y) / static_cast<Scalar>(H);
        for (std::size_t x = 0; x < W; ++x) paint(x, y, {sky.r * f, sky.g * f, sky.b * f});
    }

    std::vector<detail::FacadeFrame> frames;
    const Scalar margin = 2;
    if (params.facade_count == 1) {
        const Scalar x0 = std::floor(static_cast<Scalar>(W) / 6);
        const Scalar x1 = std::ceil(static_cast<Scalar>(W) * 5 / 6);
        frames.push_back({x1, x0, slope, 0});
    } else {
        // both facades recede toward the image center; the right one mirrors
        // the left
        const Scalar mid = static_cast<Scalar>(W) / 2;
        frames.push_back({mid - 3, margin, slope, 0});
        frames.push_back({mid + 3, static_cast<Scalar>(W) - margin, -slope, 0});
    }

    std::size_t skipped = 0;
    for (detail::FacadeFrame& f : frames) {
        const Scalar fw = std::abs(f.x_near - f.x_far);
        // anchor the top edge so it stays inside the frame across the span
        const Scalar drop = f.slope * (f.x_near - f.x_far);
        f.y_base = margin + rng.uniform(0, 4) + std::max(Scalar(0), -drop);
        const Scalar top_max = f.y_base + std::max(Scalar(0), drop);

        // facade region
        const Scalar xl = std::min(f.x_far, f.x_near), xr = std::max(f.x_far, f.x_near);
        Polygon facade_poly;
        facade_poly.vertices = {{xl, detail::facade_top(f, xl)},
                                {xr, detail::facade_top(f, xr)},
                                {xr, static_cast<Scalar>(H)},
                                {xl, static_cast<Scalar>(H)}};
        const PixelMask facade_mask = rasterize_convex_polygon(facade_poly, W, H);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                if (!facade_mask.at(x, y)) continue;
                sample.semantic[y * W + x] = kSynthFacade;
                const Scalar stripe = params.texture_amp *
                                      std::sin((static_cast<Scalar>(y) - f.slope * static_cast<Scalar>(x)) * 0.8);
                paint(x, y, {facade_col.r + stripe, facade_col.g + stripe, facade_col.b + stripe});
            }

        // column extents fill the span exactly: widths w0 * d^k
        const std::size_t cols = params.grid_cols, rows = params.grid_rows;
        const Scalar d = params.depth_decay;
        Scalar total = 0;
        for (std::size_t k = 0; k < cols; ++k) total += std::pow(d, static_cast<Scalar>(k));
        const Scalar w0 = fw / total;
        const Scalar dir = f.x_near > f.x_far ? Scalar(-1) : Scalar(1);  // near -> far direction

        const Scalar v_avail = static_cast<Scalar>(H) - margin - top_max;
        if (v_avail < 12) continue;  // facade too squashed for a grid
        const Scalar v0 = v_avail * rng.uniform(0.08, 0.16);
        const Scalar pitch = (v_avail - v0) / static_cast<Scalar>(rows);
        const Scalar wh = pitch * rng.uniform(0.5, 0.68);
        const Scalar wm = rng.uniform(0.14, 0.2);  // horizontal margin fraction

        Scalar x_edge = f.x_near;
        for (std::size_t k = 0; k < cols; ++k) {
            const Scalar cw = w0 * std::pow(d, static_cast<Scalar>(k));
            const Scalar cx0 = std::min(x_edge, x_edge + dir * cw) + wm * cw;
            const Scalar cx1 = std::max(x_edge, x_edge + dir * cw) - wm * cw;
            x_edge += dir * cw;
            const Scalar col_scale = std::pow(d, static_cast<Scalar>(k));
            for (std::size_t j = 0; j < rows; ++j) {
                const bool door = (j + 1 == rows) && rng.uniform() < 0.3;
                const Scalar vy0 = v0 + static_cast<Scalar>(j) * pitch;
                const Scalar vy1 = door ? v_avail - 1 : vy0 + wh;
                const auto ring = detail::cell_quad(f, cx0, cx1, vy0, vy1, col_scale);

                InstanceAnnotation inst;
                inst.class_id = door ? kSynthDoor : kSynthWindow;
                inst.polygon = ring;
                inst.mask = detail::rasterize_annotation_polygon(ring, W, H);
                const AABox env = detail::ring_envelope(ring);
                if (inst.mask.count() < 4 || env.width() < 2 || env.height() < 2) {
                    ++skipped;
                    std::cerr << "scene " << params.seed << ": skipping degenerate instance ("
                              << env.width() << "x" << env.height() << " px)\n";
                    continue;
                }
                inst.corners = gbbox_corners_from_mask(inst.mask);
                const detail::Rgb base = door ? door_col : window_col;
                const Scalar tint = rng.uniform(-0.04, 0.04);
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x)
                        if (inst.mask.at(x, y)) {
                            sample.semantic[y * W + x] = inst.class_id;
                            paint(x, y, {base.r + tint, base.g + tint, base.b + tint});
                        }
                sample.instances.push_back(std::move(inst));
            }
        }
    }

    // occluder blobs, placed clear of every instance so masks stay exact
    const std::size_t occluders = rng.uniform_index(3);
    for (std::size_t o = 0; o < occluders; ++o) {
        const Scalar cx = rng.uniform(6, static_cast<Scalar>(W) - 6);
        const Scalar cy = rng.uniform(static_cast<Scalar>(H) * 0.78, static_cast<Scalar>(H) - 4);
        const Scalar rx = rng.uniform(3, 7), ry = rng.uniform(2.5, 5);
        AABox blob{cx - rx - 1, cy - ry - 1, cx + rx + 1, cy + ry + 1};
        bool clear = true;
        for (const auto& inst : sample.instances)
            clear = clear && aabox_iou(blob, inst.corners.envelope()) == 0;
        if (!clear) continue;
        const detail::Rgb col{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const Scalar dx = (static_cast<Scalar>(x) + 0.5 - cx) / rx;
                const Scalar dy = (static_cast<Scalar>(y) + 0.5 - cy) / ry;
                if (dx * dx + dy * dy <= 1) {
                    sample.semantic[y * W + x] = kIgnoreIndex;
                    paint(x, y, col);
                }
            }
    }

    // pixel noise
    for (Scalar& v : img) v = std::clamp(v + params.noise_amp * rng.normal(), Scalar(0), Scalar(1));

    sample.image = Tensor::from_data({3, H, W}, std::move(img));
    sample.id = "scene_" + std::to_string(params.seed);
    if (skipped_out) *skipped_out = skipped;
    return sample;
}

}  // namespace frcnn
