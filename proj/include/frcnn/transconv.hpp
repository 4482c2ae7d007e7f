#pragma once

#include "frcnn/ops.hpp"

namespace frcnn {

// One realized member of the shearing group: a shear angle phi (degrees, the
// vertical displacement grows with the horizontal offset), a horizontal flip
// flag, and a quarter-turn count for the rotation ablation.
struct TransformMember {
    Scalar phi_deg = 0;
    int flip = 0;           // m in {0,1}
    int quarter_turns = 0;  // k in {0,1,2,3}

    bool is_identity() const { return phi_deg == 0 && flip == 0 && quarter_turns == 0; }
};

// The kernel transformation group. Members are the product of the configured
// shear angles, the flip pair and the quarter rotations; the identity is
// always member 0.
struct KernelGroupSpec {
    std::vector<TransformMember> members;

    static KernelGroupSpec identity() {
        KernelGroupSpec s;
        s.members.push_back({0, 0, 0});
        return s;
    }

    // angles: shear angles in [0,180) degrees, 0 added implicitly.
    static KernelGroupSpec build(const std::vector<Scalar>& angles, bool flip, bool rotate) {
        std::vector<Scalar> phis{0};
        for (Scalar a : angles) {
            require(a >= 0 && a < 180, "shear angle must lie in [0,180) degrees");
            require(a != 90, "shear angle 90 degrees is singular (tan unbounded)");
            if (std::find(phis.begin(), phis.end(), a) == phis.end()) phis.push_back(a);
        }
        std::vector<int> flips{0};
        if (flip) flips.push_back(1);
        std::vector<int> turns{0};
        if (rotate) turns.insert(turns.end(), {1, 2, 3});
        KernelGroupSpec s;
        for (int k : turns)
            for (int m : flips)
                for (Scalar phi : phis) s.members.push_back({phi, m, k});
        // keep the identity in front
        for (std::size_t i = 0; i < s.members.size(); ++i) {
            if (s.members[i].is_identity()) {
                std::swap(s.members[0], s.members[i]);
                break;
            }
        }
        s.validate();
        return s;
    }

    void validate() const {
        require(!members.empty(), "kernel group must be non-empty");
        bool has_identity = false;
        for (const auto& mb : members) has_identity = has_identity || mb.is_identity();
        require(has_identity, "kernel group must contain the identity transformation");
    }

    std::size_t size() const { return members.size(); }
};

namespace detail {

// Sparse linear map realizing one kernel transform on the spatial grid:
// out[cell.dst] = sum_i w_i * base[cell.src_i]. Precomputed once, shared by
// every (out-channel, in-channel) plane.
struct KernelWarpPlan {
    struct Entry {
        std::size_t dst, src;
        Scalar weight;
    };
    std::size_t side = 0;
    std::vector<Entry> entries;
};

inline KernelWarpPlan make_shear_flip_plan(std::size_t side, Scalar phi_deg, int flip) {
    require(side % 2 == 1, "kernel side must be odd, got " + std::to_string(side));
    require(phi_deg != 90, "shear angle 90 degrees is singular (tan unbounded)");
    require(phi_deg >= 0 && phi_deg < 180, "shear angle must lie in [0,180) degrees");
    KernelWarpPlan plan;
    plan.side = side;
    const Scalar t = std::tan(phi_deg * 3.14159265358979323846 / 180.0);
    const Scalar c0 = (static_cast<Scalar>(side) - 1) / 2;
    const Scalar sgn = flip ? Scalar(-1) : Scalar(1);
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            // output cell in centered coords: x right, y down
            const Scalar xs = static_cast<Scalar>(c) - c0;
            const Scalar ys = static_cast<Scalar>(r) - c0;
            // inverse of [x' ; y'] = [(-1)^m x ; tan(phi) x + y]
            const Scalar x = sgn * xs;
            const Scalar y = ys - t * x;
            const Scalar fc = x + c0;
            const Scalar fr = y + c0;
            const std::ptrdiff_t c1 = static_cast<std::ptrdiff_t>(std::floor(fc));
            const std::ptrdiff_t r1 = static_cast<std::ptrdiff_t>(std::floor(fr));
            const Scalar wc = fc - static_cast<Scalar>(c1);
            const Scalar wr = fr - static_cast<Scalar>(r1);
            const std::size_t dst = r * side + c;
            const auto add = [&](std::ptrdiff_t rr, std::ptrdiff_t cc, Scalar w) {
                // samples outside the support read as zero
                if (w == 0 || rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(side) ||
                    cc >= static_cast<std::ptrdiff_t>(side))
                    return;
                plan.entries.push_back({dst, static_cast<std::size_t>(rr) * side +
                                                 static_cast<std::size_t>(cc),
                                        w});
            };
            add(r1, c1, (1 - wr) * (1 - wc));
            add(r1, c1 + 1, (1 - wr) * wc);
            add(r1 + 1, c1, wr * (1 - wc));
            add(r1 + 1, c1 + 1, wr * wc);
        }
    }
    return plan;
}

inline KernelWarpPlan make_rotation_plan(std::size_t side, int quarter_turns) {
    KernelWarpPlan plan;
    plan.side = side;
    const std::size_t n = side - 1;
    for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
            std::size_t sr = r, sc = c;
            // exact index permutation, one quarter turn at a time
            for (int k = 0; k < (quarter_turns & 3); ++k) {
                const std::size_t pr = sr, pc = sc;
                sr = pc;
                sc = n - pr;
            }
            plan.entries.push_back({r * side + c, sr * side + sc, Scalar(1)});
        }
    }
    return plan;
}

inline KernelWarpPlan compose_plans(const KernelWarpPlan& outer, const KernelWarpPlan& inner) {
    // out = outer(inner(base)); both are sparse maps over the same grid
    std::vector<std::vector<std::pair<std::size_t, Scalar>>> inner_rows(inner.side * inner.side);
    for (const auto& e : inner.entries) inner_rows[e.dst].emplace_back(e.src, e.weight);
    KernelWarpPlan plan;
    plan.side = outer.side;
    for (const auto& e : outer.entries)
        for (const auto& [src, w] : inner_rows[e.src]) plan.entries.push_back({e.dst, src, e.weight * w});
    return plan;
}

inline KernelWarpPlan make_member_plan(std::size_t side, const TransformMember& m) {
    KernelWarpPlan plan = make_shear_flip_plan(side, m.phi_deg, m.flip);
    if (m.quarter_turns % 4 != 0)
        plan = compose_plans(make_rotation_plan(side, m.quarter_turns), plan);
    return plan;
}

inline Tensor apply_warp_plan(const Tensor& base, std::shared_ptr<KernelWarpPlan> plan,
                              const char* what) {
    const std::size_t K = base.extent(0), C = base.extent(1);
    const std::size_t cells = plan->side * plan->side;
    std::vector<Scalar> out(base.size(), Scalar(0));
    for (std::size_t p = 0; p < K * C; ++p) {
        const Scalar* src = base.data().data() + p * cells;
        Scalar* dst = out.data() + p * cells;
        for (const auto& e : plan->entries) dst[e.dst] += e.weight * src[e.src];
    }
    return make_op(
        base.shape(), std::move(out), {base},
        [plan, K, C, cells](const detail::TensorNode& self, const std::vector<Scalar>& g,
                            GradStore& store) {
            auto& pg = store.buffer(self.parents[0].get());
            for (std::size_t p = 0; p < K * C; ++p) {
                const Scalar* src = g.data() + p * cells;
                Scalar* dst = pg.data() + p * cells;
                for (const auto& e : plan->entries) dst[e.src] += e.weight * src[e.dst];
            }
        },
        what);
}

}  // namespace detail

// Shear/flip a [K,C,Wg,Wg] kernel: target coordinates follow
// x' = (-1)^m x, y' = tan(phi) x + y about the kernel center, values placed
// by inverse mapping with bilinear interpolation, zero outside the support.
inline Tensor transform_kernel(const Tensor& base, Scalar phi_deg, int flip) {
    require(base.rank() == 4 && base.extent(2) == base.extent(3),
            "transform_kernel expects [K,C,Wg,Wg], got " + detail::shape_str(base.shape()));
    require(base.extent(2) % 2 == 1, "kernel side must be odd, got " + std::to_string(base.extent(2)));
    require(phi_deg != 90, "shear angle 90 degrees is singular (tan unbounded)");
    require(phi_deg >= 0 && phi_deg < 180, "shear angle must lie in [0,180) degrees");
    if (phi_deg == 0 && flip == 0) {
        // bitwise identity
        Tensor out = make_op(
            base.shape(), base.data(), {base},
            [](const detail::TensorNode& self, const std::vector<Scalar>& g, GradStore& store) {
                auto& pg = store.buffer(self.parents[0].get());
                for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
            },
            "transform_kernel");
        return out;
    }
    auto plan = std::make_shared<detail::KernelWarpPlan>(
        detail::make_shear_flip_plan(base.extent(2), phi_deg, flip));
    return detail::apply_warp_plan(base, std::move(plan), "transform_kernel");
}

// Exact rotation of the spatial dims by k quarter turns (counter-clockwise in
// array terms), no interpolation.
inline Tensor rotate_kernel(const Tensor& base, int quarter_turns) {
    require(base.rank() == 4 && base.extent(2) == base.extent(3),
            "rotate_kernel expects [K,C,Wg,Wg]");
    require(quarter_turns >= 0 && quarter_turns <= 3, "quarter_turns must be in {0,1,2,3}");
    auto plan = std::make_shared<detail::KernelWarpPlan>(
        detail::make_rotation_plan(base.extent(2), quarter_turns));
    return detail::apply_warp_plan(base, std::move(plan), "rotate_kernel");
}

// Cached transform plans for a fixed group + kernel size; read-only after
// construction.
class TransKernel {
public:
    TransKernel() = default;
    TransKernel(std::size_t side, KernelGroupSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        plans_.reserve(spec_.members.size());
        for (const auto& m : spec_.members)
            plans_.push_back(std::make_shared<detail::KernelWarpPlan>(detail::make_member_plan(side, m)));
    }

    const KernelGroupSpec& spec() const { return spec_; }

    std::vector<Tensor> transformed(const Tensor& base) const {
        std::vector<Tensor> out;
        out.reserve(plans_.size());
        for (std::size_t i = 0; i < plans_.size(); ++i) {
            if (spec_.members[i].is_identity()) {
                out.push_back(transform_kernel(base, 0, 0));  // bitwise copy path
            } else {
                out.push_back(detail::apply_warp_plan(base, plans_[i], "transform_kernel"));
            }
        }
        return out;
    }

private:
    KernelGroupSpec spec_;
    std::vector<std::shared_ptr<detail::KernelWarpPlan>> plans_;
};

// Group-summed convolution: the responses of every transformed copy of the
// base kernel are added into one output map. Gradients flow to the base
// through every copy.
inline Tensor transconv_forward(const Tensor& input, const Tensor& base, const TransKernel& tk,
                                std::size_t stride = 1, std::size_t pad = 0,
                                std::size_t dilation = 1) {
    std::vector<Tensor> responses;
    for (const Tensor& k : tk.transformed(base))
        responses.push_back(conv2d(input, k, stride, pad, dilation));
    return responses.size() == 1 ? responses[0] : add_all(responses);
}

inline Tensor transconv_forward(const Tensor& input, const Tensor& base, const KernelGroupSpec& spec,
                                std::size_t stride = 1, std::size_t pad = 0,
                                std::size_t dilation = 1) {
    return transconv_forward(input, base, TransKernel(base.extent(2), spec), stride, pad, dilation);
}

}  // namespace frcnn
