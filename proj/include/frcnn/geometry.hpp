#pragma once

#include <cstdint>
#include <deque>
#include <limits>

#include "frcnn/common.hpp"

namespace frcnn {

struct Vec2 {
    Scalar x = 0, y = 0;
    friend bool operator==(const Vec2& a, const Vec2& b) { return a.x == b.x && a.y == b.y; }
};

// Row-major boolean grid.
struct PixelMask {
    std::size_t width = 0, height = 0;
    std::vector<std::uint8_t> bits;

    PixelMask() = default;
    PixelMask(std::size_t w, std::size_t h) : width(w), height(h), bits(w * h, 0) {}

    bool at(std::size_t x, std::size_t y) const { return bits[y * width + x] != 0; }
    void set(std::size_t x, std::size_t y, bool v = true) { bits[y * width + x] = v ? 1 : 0; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : bits) n += b != 0;
        return n;
    }
    bool empty() const { return count() == 0; }
    bool same_extent(const PixelMask& o) const { return width == o.width && height == o.height; }

    PixelMask intersect(const PixelMask& o) const {
        require(same_extent(o), "mask extent mismatch");
        PixelMask r(width, height);
        for (std::size_t i = 0; i < bits.size(); ++i) r.bits[i] = bits[i] && o.bits[i];
        return r;
    }
    void merge(const PixelMask& o) {
        require(same_extent(o), "mask extent mismatch");
        for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = bits[i] || o.bits[i];
    }
    friend bool operator==(const PixelMask& a, const PixelMask& b) {
        return a.width == b.width && a.height == b.height && a.bits == b.bits;
    }
};

// Convex polygon, counter-clockwise by the shoelace convention (positive
// signed area on plain x/y axes). Degenerate results (a point or segment)
// carry fewer than three vertices and the flag set.
struct Polygon {
    std::vector<Vec2> vertices;
    bool degenerate = false;
};

namespace detail {

struct IPoint {
    std::int64_t x, y;
    friend bool operator<(const IPoint& a, const IPoint& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    }
    friend bool operator==(const IPoint& a, const IPoint& b) { return a.x == b.x && a.y == b.y; }
};

inline std::int64_t icross(const IPoint& o, const IPoint& a, const IPoint& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// float inputs snap to a 1/16-pixel grid so the hull predicates stay exact
constexpr Scalar kSnap = 16.0;

inline IPoint snap(const Vec2& p) {
    return {static_cast<std::int64_t>(std::llround(p.x * kSnap)),
            static_cast<std::int64_t>(std::llround(p.y * kSnap))};
}

inline Vec2 unsnap(const IPoint& p) {
    return {static_cast<Scalar>(p.x) / kSnap, static_cast<Scalar>(p.y) / kSnap};
}

}  // namespace detail

// Andrew's monotone chain with exact integer cross products; collinear points
// are excluded from the boundary.
inline Polygon convex_hull(const std::vector<Vec2>& points) {
    require(!points.empty(), "convex_hull of an empty point set");
    std::vector<detail::IPoint> pts;
    pts.reserve(points.size());
    for (const Vec2& p : points) pts.push_back(detail::snap(p));
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());

    Polygon poly;
    if (pts.size() <= 2) {
        for (const auto& p : pts) poly.vertices.push_back(detail::unsnap(p));
        poly.degenerate = true;
        return poly;
    }
    bool collinear = true;
    for (std::size_t i = 2; i < pts.size() && collinear; ++i)
        collinear = detail::icross(pts[0], pts[1], pts[i]) == 0;
    if (collinear) {
        poly.vertices = {detail::unsnap(pts.front()), detail::unsnap(pts.back())};
        poly.degenerate = true;
        return poly;
    }

    const std::size_t n = pts.size();
    std::vector<detail::IPoint> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {  // lower
        while (k >= 2 && detail::icross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {  // upper
        while (k >= t && detail::icross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);  // last point repeats the first
    poly.vertices.reserve(hull.size());
    for (const auto& p : hull) poly.vertices.push_back(detail::unsnap(p));
    return poly;
}

// 4-connected components in deterministic order (smallest row-major set
// index first), each as a full-size mask.
inline std::vector<PixelMask> connected_components(const PixelMask& mask) {
    std::vector<PixelMask> comps;
    std::vector<std::uint8_t> visited(mask.bits.size(), 0);
    std::deque<std::size_t> queue;
    for (std::size_t start = 0; start < mask.bits.size(); ++start) {
        if (!mask.bits[start] || visited[start]) continue;
        PixelMask comp(mask.width, mask.height);
        visited[start] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t idx = queue.front();
            queue.pop_front();
            comp.bits[idx] = 1;
            const std::size_t x = idx % mask.width, y = idx / mask.width;
            const auto visit = [&](std::size_t nx, std::size_t ny) {
                const std::size_t ni = ny * mask.width + nx;
                if (mask.bits[ni] && !visited[ni]) {
                    visited[ni] = 1;
                    queue.push_back(ni);
                }
            };
            if (x > 0) visit(x - 1, y);
            if (x + 1 < mask.width) visit(x + 1, y);
            if (y > 0) visit(x, y - 1);
            if (y + 1 < mask.height) visit(x, y + 1);
        }
        comps.push_back(std::move(comp));
    }
    return comps;
}

namespace detail {

constexpr Scalar kGeomEps = 1e-9;

// +1 / -1 / 0 turning sign pattern check; tolerates collinear runs.
inline bool polygon_is_convex(const std::vector<Vec2>& v) {
    if (v.size() < 3) return false;
    bool pos = false, neg = false;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Vec2& a = v[i];
        const Vec2& b = v[(i + 1) % v.size()];
        const Vec2& c = v[(i + 2) % v.size()];
        const Scalar cr = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        if (cr > kGeomEps) pos = true;
        if (cr < -kGeomEps) neg = true;
    }
    return !(pos && neg);
}

// inside-or-on test for a convex ring of either orientation
inline bool inside_convex(const std::vector<Vec2>& v, Vec2 p, Scalar eps = kGeomEps) {
    bool all_le = true, all_ge = true;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Vec2& a = v[i];
        const Vec2& b = v[(i + 1) % v.size()];
        const Scalar cr = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if (cr > eps) all_le = false;
        if (cr < -eps) all_ge = false;
    }
    return all_le || all_ge;
}

inline Scalar dist_point_segment(Vec2 p, Vec2 a, Vec2 b) {
    const Scalar dx = b.x - a.x, dy = b.y - a.y;
    const Scalar len2 = dx * dx + dy * dy;
    Scalar t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : Scalar(0);
    t = std::clamp(t, Scalar(0), Scalar(1));
    const Scalar qx = a.x + t * dx - p.x, qy = a.y + t * dy - p.y;
    return std::sqrt(qx * qx + qy * qy);
}

}  // namespace detail

// Scanline rasterization: pixel (c,r) is set iff its center (c+0.5, r+0.5)
// lies inside or on the polygon.
inline PixelMask rasterize_convex_polygon(const Polygon& poly, std::size_t width, std::size_t height) {
    PixelMask out(width, height);
    const auto& v = poly.vertices;
    if (poly.degenerate) {
        if (v.empty()) return out;
        const Vec2 a = v.front();
        const Vec2 b = v.size() > 1 ? v[1] : v.front();
        for (std::size_t r = 0; r < height; ++r)
            for (std::size_t c = 0; c < width; ++c) {
                const Vec2 p{static_cast<Scalar>(c) + Scalar(0.5), static_cast<Scalar>(r) + Scalar(0.5)};
                if (detail::dist_point_segment(p, a, b) <= detail::kGeomEps) out.set(c, r);
            }
        return out;
    }
    require(v.size() >= 3, "polygon needs at least 3 vertices");
    require(detail::polygon_is_convex(v), "rasterize_convex_polygon requires a convex polygon");

    Scalar ymin = v[0].y, ymax = v[0].y;
    for (const Vec2& p : v) {
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    const std::ptrdiff_t r0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(ymin - Scalar(0.5))));
    const std::ptrdiff_t r1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(height) - 1,
                                                       static_cast<std::ptrdiff_t>(std::ceil(ymax)));
    for (std::ptrdiff_t r = r0; r <= r1; ++r) {
        const Scalar y = static_cast<Scalar>(r) + Scalar(0.5);
        Scalar xl = std::numeric_limits<Scalar>::infinity();
        Scalar xr = -std::numeric_limits<Scalar>::infinity();
        bool hit = false;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const Vec2& a = v[i];
            const Vec2& b = v[(i + 1) % v.size()];
            const Scalar lo = std::min(a.y, b.y), hi = std::max(a.y, b.y);
            if (y < lo - detail::kGeomEps || y > hi + detail::kGeomEps) continue;
            if (std::abs(b.y - a.y) <= detail::kGeomEps) {
                xl = std::min({xl, a.x, b.x});
                xr = std::max({xr, a.x, b.x});
            } else {
                const Scalar t = (y - a.y) / (b.y - a.y);
                const Scalar x = a.x + std::clamp(t, Scalar(0), Scalar(1)) * (b.x - a.x);
                xl = std::min(xl, x);
                xr = std::max(xr, x);
            }
            hit = true;
        }
        if (!hit) continue;
        const std::ptrdiff_t c0 = std::max<std::ptrdiff_t>(
            0, static_cast<std::ptrdiff_t>(std::ceil(xl - Scalar(0.5) - detail::kGeomEps)));
        const std::ptrdiff_t c1 = std::min<std::ptrdiff_t>(
            static_cast<std::ptrdiff_t>(width) - 1,
            static_cast<std::ptrdiff_t>(std::floor(xr - Scalar(0.5) + detail::kGeomEps)));
        for (std::ptrdiff_t c = c0; c <= c1; ++c) out.set(static_cast<std::size_t>(c), static_cast<std::size_t>(r));
    }
    return out;
}

// Pixel centers of the set pixels, the point set hulls are taken over.
inline std::vector<Vec2> mask_center_points(const PixelMask& mask) {
    std::vector<Vec2> pts;
    for (std::size_t r = 0; r < mask.height; ++r)
        for (std::size_t c = 0; c < mask.width; ++c)
            if (mask.at(c, r))
                pts.push_back({static_cast<Scalar>(c) + Scalar(0.5), static_cast<Scalar>(r) + Scalar(0.5)});
    return pts;
}

// ---------------------------------------------------------------------------
// Generalized (two-rectangle) bounding boxes
// ---------------------------------------------------------------------------

struct AABox {
    Scalar x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    bool valid() const { return x_min <= x_max && y_min <= y_max; }
    Scalar width() const { return x_max - x_min; }
    Scalar height() const { return y_max - y_min; }
    Scalar area() const { return std::max(Scalar(0), width()) * std::max(Scalar(0), height()); }
};

inline Scalar aabox_iou(const AABox& a, const AABox& b) {
    const Scalar ix = std::max(Scalar(0), std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
    const Scalar iy = std::max(Scalar(0), std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
    const Scalar inter = ix * iy;
    const Scalar uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : Scalar(0);
}

// Corner quadruple of a quadrilateral object, image coords (x right, y down).
struct QuadCorners {
    Vec2 tl, tr, bl, br;

    std::vector<Vec2> ring() const { return {tl, tr, br, bl}; }

    AABox envelope() const {
        AABox e;
        e.x_min = std::min({tl.x, tr.x, bl.x, br.x});
        e.x_max = std::max({tl.x, tr.x, bl.x, br.x});
        e.y_min = std::min({tl.y, tr.y, bl.y, br.y});
        e.y_max = std::max({tl.y, tr.y, bl.y, br.y});
        return e;
    }
};

// Simple (non-self-intersecting) with consistent turning and nonzero area.
inline bool quad_is_valid(const QuadCorners& q) {
    const auto v = q.ring();
    bool pos = false, neg = false;
    Scalar area2 = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        const Vec2& a = v[i];
        const Vec2& b = v[(i + 1) % 4];
        const Vec2& c = v[(i + 2) % 4];
        const Scalar cr = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
        if (cr > detail::kGeomEps) pos = true;
        if (cr < -detail::kGeomEps) neg = true;
        area2 += a.x * b.y - b.x * a.y;
    }
    return !(pos && neg) && std::abs(area2) > detail::kGeomEps;
}

// A quadrilateral encoded by its two diagonally-opposite corner pairs plus a
// class-probability vector; the score is the top class probability.
struct GeneralizedBBox {
    AABox box_tlbr;
    AABox box_trbl;
    std::vector<Scalar> class_probs;

    Scalar score() const {
        Scalar s = 0;
        for (Scalar p : class_probs) s = std::max(s, p);
        return s;
    }
    std::size_t argmax_class() const {
        std::size_t best = 0;
        for (std::size_t i = 1; i < class_probs.size(); ++i)
            if (class_probs[i] > class_probs[best]) best = i;
        return best;
    }
};

inline QuadCorners corners_from_boxes(const GeneralizedBBox& g) {
    QuadCorners q;
    q.tl = {g.box_tlbr.x_min, g.box_tlbr.y_min};
    q.br = {g.box_tlbr.x_max, g.box_tlbr.y_max};
    q.tr = {g.box_trbl.x_max, g.box_trbl.y_min};
    q.bl = {g.box_trbl.x_min, g.box_trbl.y_max};
    return q;
}

inline std::pair<AABox, AABox> boxes_from_corners(const QuadCorners& q) {
    AABox tlbr{q.tl.x, q.tl.y, q.br.x, q.br.y};
    AABox trbl{q.bl.x, q.tr.y, q.tr.x, q.bl.y};
    require(tlbr.valid() && trbl.valid(),
            "corner quadruple does not form valid diagonal rectangles");
    return {tlbr, trbl};
}

// Extreme-point corners of an instance mask: TL minimizes u+v, BR maximizes
// u+v, TR maximizes u-v, BL minimizes u-v; each extreme pixel contributes its
// outward corner so an axis-aligned rectangle recovers exactly.
inline QuadCorners gbbox_corners_from_mask(const PixelMask& mask) {
    require(!mask.empty(), "gbbox_corners_from_mask on an empty instance");
    std::ptrdiff_t best_sum_lo = 0, best_sum_hi = 0, best_dif_lo = 0, best_dif_hi = 0;
    std::size_t p_tl = 0, p_br = 0, p_tr = 0, p_bl = 0;
    bool first = true;
    for (std::size_t r = 0; r < mask.height; ++r) {
        for (std::size_t c = 0; c < mask.width; ++c) {
            if (!mask.at(c, r)) continue;
            const std::ptrdiff_t u = static_cast<std::ptrdiff_t>(c);
            const std::ptrdiff_t v = static_cast<std::ptrdiff_t>(r);
            const std::ptrdiff_t s = u + v, d = u - v;
            const std::size_t idx = r * mask.width + c;
            if (first || s < best_sum_lo) { best_sum_lo = s; p_tl = idx; }
            if (first || s > best_sum_hi) { best_sum_hi = s; p_br = idx; }
            if (first || d > best_dif_hi) { best_dif_hi = d; p_tr = idx; }
            if (first || d < best_dif_lo) { best_dif_lo = d; p_bl = idx; }
            first = false;
        }
    }
    const auto px = [&](std::size_t idx) {
        return Vec2{static_cast<Scalar>(idx % mask.width), static_cast<Scalar>(idx / mask.width)};
    };
    QuadCorners q;
    q.tl = px(p_tl);
    q.br = {px(p_br).x + 1, px(p_br).y + 1};
    q.tr = {px(p_tr).x + 1, px(p_tr).y};
    q.bl = {px(p_bl).x, px(p_bl).y + 1};
    return q;
}

// Rasterized IoU of two convex quadrilaterals: the joint bounding box is
// sampled on a resolution x resolution grid of cell centers.
inline Scalar quad_iou(const QuadCorners& a, const QuadCorners& b, std::size_t resolution = 32) {
    require(resolution >= 1, "quad_iou needs a positive resolution");
    const AABox ea = a.envelope(), eb = b.envelope();
    AABox box{std::min(ea.x_min, eb.x_min), std::min(ea.y_min, eb.y_min),
              std::max(ea.x_max, eb.x_max), std::max(ea.y_max, eb.y_max)};
    if (box.width() <= 0 || box.height() <= 0) return 0;
    const auto ra = a.ring(), rb = b.ring();
    const Scalar sx = box.width() / static_cast<Scalar>(resolution);
    const Scalar sy = box.height() / static_cast<Scalar>(resolution);
    std::size_t na = 0, nb = 0, ni = 0;
    for (std::size_t i = 0; i < resolution; ++i) {
        const Scalar y = box.y_min + (static_cast<Scalar>(i) + Scalar(0.5)) * sy;
        for (std::size_t j = 0; j < resolution; ++j) {
            const Scalar x = box.x_min + (static_cast<Scalar>(j) + Scalar(0.5)) * sx;
            const bool ia = detail::inside_convex(ra, {x, y});
            const bool ib = detail::inside_convex(rb, {x, y});
            na += ia;
            nb += ib;
            ni += ia && ib;
        }
    }
    const std::size_t nu = na + nb - ni;
    return nu == 0 ? Scalar(0) : static_cast<Scalar>(ni) / static_cast<Scalar>(nu);
}

}  // namespace frcnn
