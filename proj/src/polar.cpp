#include "ddnet/polar.hpp"

#include <cmath>
#include <stdexcept>

namespace ddnet {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

PolarGridSpec PolarGridSpec::defaults(int h, int w) {
    PolarGridSpec s;
    s.input_h = h;
    s.input_w = w;
    s.center_u = h / 2.0;
    s.center_v = w / 2.0;
    s.out_h = h;
    s.out_w = w;
    s.radial_extent = std::min(h, w) / 2.0;
    return s;
}

void PolarGridSpec::validate() const {
    if (input_h <= 0 || input_w <= 0 || out_h <= 0 || out_w <= 0)
        throw std::invalid_argument("PolarGridSpec: non-positive sizes");
    if (!(radial_extent > 0.0))
        throw std::invalid_argument("PolarGridSpec: radial extent must be > 0");
    if (!std::isfinite(center_u) || !std::isfinite(center_v))
        throw std::invalid_argument("PolarGridSpec: non-finite centre");
}

SampleGrid build_polar_grid(const PolarGridSpec& spec) {
    spec.validate();
    SampleGrid g;
    g.out_h = spec.out_h;
    g.out_w = spec.out_w;
    const std::size_t n = static_cast<std::size_t>(spec.out_h) * spec.out_w;
    g.u.resize(n);
    g.v.resize(n);
    g.valid.assign(n, 1);
    std::size_t at = 0;
    for (int i = 0; i < spec.out_h; ++i) {
        double r = (i + 0.5) * spec.radial_extent / spec.out_h;
        for (int j = 0; j < spec.out_w; ++j) {
            double theta = -kPi + 2.0 * kPi * (j + 0.5) / spec.out_w;
            g.u[at] = spec.center_u + r * std::sin(theta);
            g.v[at] = spec.center_v + r * std::cos(theta);
            ++at;
        }
    }
    return g;
}

SampleGrid build_inverse_polar_grid(const PolarGridSpec& spec) {
    spec.validate();
    SampleGrid g;
    g.out_h = spec.input_h;
    g.out_w = spec.input_w;
    const std::size_t n = static_cast<std::size_t>(g.out_h) * g.out_w;
    g.u.resize(n);
    g.v.resize(n);
    g.valid.resize(n);
    std::size_t at = 0;
    for (int a = 0; a < g.out_h; ++a) {
        double du = (a + 0.5) - spec.center_u;
        for (int b = 0; b < g.out_w; ++b) {
            double dv = (b + 0.5) - spec.center_v;
            double r = std::hypot(du, dv);
            double theta = std::atan2(du, dv);
            // Stored as fractional index + 0.5, same convention the sampler
            // expects for continuous coordinates.
            g.u[at] = r * spec.out_h / spec.radial_extent;
            g.v[at] = (theta + kPi) * spec.out_w / (2.0 * kPi);
            g.valid[at] = r <= spec.radial_extent ? 1 : 0;
            ++at;
        }
    }
    return g;
}

Tensor bilinear_sample(const Tensor& image, const SampleGrid& grid,
                       bool angular_wrap) {
    if (image.rank() != 4)
        throw std::invalid_argument("bilinear_sample: expected NCHW image");
    const int N = image.dim(0), C = image.dim(1), H = image.dim(2),
              W = image.dim(3);
    const std::size_t npos = static_cast<std::size_t>(grid.out_h) * grid.out_w;
    if (grid.u.size() != npos || grid.v.size() != npos)
        throw std::invalid_argument("bilinear_sample: malformed grid");

    // Per-position taps, shared across N and C.
    struct Tap {
        int i0 = -1, i1 = -1, j0 = -1, j1 = -1;  // -1 = out of bounds
        double wi = 0.0, wj = 0.0;
    };
    auto taps = std::make_shared<std::vector<Tap>>(npos);
    for (std::size_t p = 0; p < npos; ++p) {
        if (!grid.valid.empty() && !grid.valid[p]) continue;
        double ui = grid.u[p] - 0.5;  // continuous -> index coordinates
        double vj = grid.v[p] - 0.5;
        if (!std::isfinite(ui) || !std::isfinite(vj))
            throw std::runtime_error("bilinear_sample: non-finite coordinate");
        Tap t;
        double fi = std::floor(ui), fj = std::floor(vj);
        t.wi = ui - fi;
        t.wj = vj - fj;
        int i0 = static_cast<int>(fi), j0 = static_cast<int>(fj);
        t.i0 = (i0 >= 0 && i0 < H) ? i0 : -1;
        t.i1 = (i0 + 1 >= 0 && i0 + 1 < H) ? i0 + 1 : -1;
        if (angular_wrap) {
            t.j0 = ((j0 % W) + W) % W;
            t.j1 = (t.j0 + 1) % W;
        } else {
            t.j0 = (j0 >= 0 && j0 < W) ? j0 : -1;
            t.j1 = (j0 + 1 >= 0 && j0 + 1 < W) ? j0 + 1 : -1;
        }
        (*taps)[p] = t;
    }

    Tensor out({N, C, grid.out_h, grid.out_w});
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* img =
                image.data().data() + (static_cast<std::size_t>(n) * C + c) * hw;
            double* o = out.data().data() +
                        (static_cast<std::size_t>(n) * C + c) * npos;
            for (std::size_t p = 0; p < npos; ++p) {
                const Tap& t = (*taps)[p];
                if (t.i0 < 0 && t.i1 < 0) {
                    o[p] = 0.0;
                    continue;
                }
                double acc = 0.0;
                if (t.i0 >= 0) {
                    if (t.j0 >= 0) acc += (1 - t.wi) * (1 - t.wj) * img[t.i0 * W + t.j0];
                    if (t.j1 >= 0) acc += (1 - t.wi) * t.wj * img[t.i0 * W + t.j1];
                }
                if (t.i1 >= 0) {
                    if (t.j0 >= 0) acc += t.wi * (1 - t.wj) * img[t.i1 * W + t.j0];
                    if (t.j1 >= 0) acc += t.wi * t.wj * img[t.i1 * W + t.j1];
                }
                o[p] = acc;
            }
        }

    if (image.requires_grad()) {
        auto ii = image.impl(), oi = out.impl();
        oi->requires_grad = true;
        GradTape::active().record([=]() {
            ii->ensure_grad();
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c) {
                    double* g = ii->grad.data() +
                                (static_cast<std::size_t>(n) * C + c) * hw;
                    const double* go = oi->grad.data() +
                                       (static_cast<std::size_t>(n) * C + c) * npos;
                    for (std::size_t p = 0; p < npos; ++p) {
                        const Tap& t = (*taps)[p];
                        if (t.i0 < 0 && t.i1 < 0) continue;
                        double gv = go[p];
                        if (t.i0 >= 0) {
                            if (t.j0 >= 0) g[t.i0 * W + t.j0] += gv * (1 - t.wi) * (1 - t.wj);
                            if (t.j1 >= 0) g[t.i0 * W + t.j1] += gv * (1 - t.wi) * t.wj;
                        }
                        if (t.i1 >= 0) {
                            if (t.j0 >= 0) g[t.i1 * W + t.j0] += gv * t.wi * (1 - t.wj);
                            if (t.j1 >= 0) g[t.i1 * W + t.j1] += gv * t.wi * t.wj;
                        }
                    }
                }
        });
    }
    return out;
}

Tensor polar_transform(const Tensor& x, const PolarGridSpec& spec) {
    if (x.rank() != 4)
        throw std::invalid_argument("polar_transform: expected NCHW tensor");
    if (x.dim(2) != spec.input_h || x.dim(3) != spec.input_w)
        throw std::invalid_argument("polar_transform: spec built for " +
                                    std::to_string(spec.input_h) + "x" +
                                    std::to_string(spec.input_w) + ", image is " +
                                    shape_str(x.shape()));
    return bilinear_sample(x, build_polar_grid(spec), false);
}

Tensor inverse_polar_transform(const Tensor& p, const PolarGridSpec& spec) {
    if (p.rank() != 4)
        throw std::invalid_argument("inverse_polar_transform: expected NCHW tensor");
    if (p.dim(2) != spec.out_h || p.dim(3) != spec.out_w)
        throw std::invalid_argument(
            "inverse_polar_transform: polar image does not match spec");
    return bilinear_sample(p, build_inverse_polar_grid(spec), true);
}

SegMask polar_transform_labels(const SegMask& mask, const PolarGridSpec& spec) {
    spec.validate();
    if (mask.h != spec.input_h || mask.w != spec.input_w)
        throw std::invalid_argument("polar_transform_labels: size mismatch");
    SampleGrid g = build_polar_grid(spec);
    SegMask out(spec.out_h, spec.out_w, kBackground);
    for (std::size_t p = 0; p < g.u.size(); ++p) {
        int i = static_cast<int>(std::lround(g.u[p] - 0.5));
        int j = static_cast<int>(std::lround(g.v[p] - 0.5));
        if (i >= 0 && i < mask.h && j >= 0 && j < mask.w)
            out.labels[p] = mask.at(i, j);
    }
    return out;
}

SegMask inverse_polar_transform_labels(const SegMask& polar_mask,
                                       const PolarGridSpec& spec) {
    spec.validate();
    if (polar_mask.h != spec.out_h || polar_mask.w != spec.out_w)
        throw std::invalid_argument("inverse_polar_transform_labels: size mismatch");
    SampleGrid g = build_inverse_polar_grid(spec);
    SegMask out(spec.input_h, spec.input_w, kBackground);
    for (std::size_t p = 0; p < g.u.size(); ++p) {
        if (!g.valid[p]) continue;
        int i = static_cast<int>(std::lround(g.u[p] - 0.5));
        int j = static_cast<int>(std::lround(g.v[p] - 0.5));
        j = ((j % spec.out_w) + spec.out_w) % spec.out_w;
        if (i >= 0 && i < polar_mask.h) out.labels[p] = polar_mask.at(i, j);
    }
    return out;
}

}  // namespace ddnet
