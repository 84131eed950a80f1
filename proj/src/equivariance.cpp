#include "ddnet/equivariance.hpp"

#include <cmath>
#include <stdexcept>

namespace ddnet {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Tensor rot_quarter(const Tensor& x) {
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(H == W, "apply_action: rotation requires square spatial dims");
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src =
                x.data().data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            double* dst = out.data().data() +
                          (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    dst[static_cast<std::size_t>(i) * W + j] =
                        src[static_cast<std::size_t>(H - 1 - j) * W + i];
        }
    return out;
}

// Receptive field extent (input pixels) and cumulative stride per stage.
struct StageGeometry {
    int rf;      // receptive field size
    int stride;  // cumulative stride
};

std::vector<StageGeometry> stage_geometry(const EncoderConfig& cfg) {
    std::vector<StageGeometry> out;
    int rf = 1, jump = 1;
    for (int l = 0; l < cfg.num_stages(); ++l) {
        for (int c = 0; c < cfg.convs_per_stage; ++c) {
            int stride = (c == 0 && l > 0) ? cfg.downsample : 1;
            rf += 2 * jump;  // 3x3 kernel
            jump *= stride;
        }
        out.push_back({rf, jump});
    }
    return out;
}

EquivarianceReport make_report(std::string property, int stage, double max_err,
                               double mean_err, double tol) {
    EquivarianceReport r;
    r.property = std::move(property);
    r.stage = stage;
    r.max_abs_error = max_err;
    r.mean_abs_error = mean_err;
    r.tolerance = tol;
    r.pass = max_err < tol;
    return r;
}

}  // namespace

GroupAction GroupAction::translation(int dy, int dx) {
    GroupAction a;
    a.kind = Kind::Translation;
    a.dy = dy;
    a.dx = dx;
    return a;
}

GroupAction GroupAction::rotation(int quarter_turns) {
    GroupAction a;
    a.kind = Kind::Rotation;
    a.quarter_turns = quarter_turns;
    return a;
}

Tensor apply_action(const Tensor& x, const GroupAction& a) {
    require(x.rank() == 4, "apply_action: expected NCHW tensor");
    if (a.kind == GroupAction::Kind::Rotation) {
        require(a.quarter_turns >= 1 && a.quarter_turns <= 3,
                "apply_action: rotation must be 1..3 quarter turns");
        Tensor out = x;
        for (int k = 0; k < a.quarter_turns; ++k) out = rot_quarter(out);
        return out;
    }
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out(x.shape());
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const double* src =
                x.data().data() + (static_cast<std::size_t>(n) * C + c) * H * W;
            double* dst = out.data().data() +
                          (static_cast<std::size_t>(n) * C + c) * H * W;
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    int si = i - a.dy, sj = j - a.dx;
                    dst[static_cast<std::size_t>(i) * W + j] =
                        (si >= 0 && si < H && sj >= 0 && sj < W)
                            ? src[static_cast<std::size_t>(si) * W + sj]
                            : 0.0;
                }
        }
    return out;
}

std::vector<EquivarianceReport> check_eq4(const EncoderParams& encoder,
                                          const EncoderConfig& cfg,
                                          const Tensor& x, int dy, int dx,
                                          double tolerance) {
    require(cfg.valid_padding,
            "check_eq4: encoder must use valid convolutions");
    const int ts = cfg.total_stride();
    require(dy % ts == 0 && dx % ts == 0,
            "check_eq4: translation must be a multiple of the total stride " +
                std::to_string(ts));
    Tensor xt = apply_action(x, GroupAction::translation(dy, dx));
    auto a = encode_branch(xt, encoder, cfg, Domain::Cartesian);
    auto b = encode_branch(x, encoder, cfg, Domain::Cartesian);
    auto geo = stage_geometry(cfg);

    std::vector<EquivarianceReport> reports;
    for (std::size_t l = 0; l < a.size(); ++l) {
        const Tensor& A = a[l].t;
        const Tensor& B = b[l].t;
        const int C = A.dim(1), Hl = A.dim(2), Wl = A.dim(3);
        const int s = geo[l].stride;
        const int ty = dy / s, tx = dx / s;
        const int margin = (geo[l].rf / 2 + s - 1) / s;
        int i_lo = std::max(margin, margin + ty), i_hi = std::min(Hl - margin, Hl - margin + ty);
        int j_lo = std::max(margin, margin + tx), j_hi = std::min(Wl - margin, Wl - margin + tx);
        double max_err = 0, sum_err = 0;
        std::size_t count = 0;
        for (int c = 0; c < C; ++c) {
            const double* pa = A.data().data() + static_cast<std::size_t>(c) * Hl * Wl;
            const double* pb = B.data().data() + static_cast<std::size_t>(c) * Hl * Wl;
            for (int i = i_lo; i < i_hi; ++i)
                for (int j = j_lo; j < j_hi; ++j) {
                    double d = std::abs(pa[static_cast<std::size_t>(i) * Wl + j] -
                                        pb[static_cast<std::size_t>(i - ty) * Wl + (j - tx)]);
                    max_err = std::max(max_err, d);
                    sum_err += d;
                    ++count;
                }
        }
        reports.push_back(make_report("eq4", static_cast<int>(l) + 1, max_err,
                                      count ? sum_err / static_cast<double>(count) : 0.0,
                                      tolerance));
    }
    return reports;
}

EquivarianceReport check_eq5(const Tensor& x, int quarter_turns,
                             double tolerance) {
    require(x.dim(2) == x.dim(3), "check_eq5: square input required");
    PolarGridSpec spec = PolarGridSpec::defaults(x.dim(2), x.dim(3));
    require(spec.out_w % 4 == 0, "check_eq5: polar width must be divisible by 4");
    Tensor p = polar_transform(x, spec);
    Tensor pr =
        polar_transform(apply_action(x, GroupAction::rotation(quarter_turns)), spec);
    const int W = spec.out_w, s = quarter_turns * W / 4;
    const int NC = x.dim(0) * x.dim(1), Hl = spec.out_h;
    double max_err = 0, sum_err = 0;
    for (int nc = 0; nc < NC; ++nc) {
        const double* a = pr.data().data() + static_cast<std::size_t>(nc) * Hl * W;
        const double* b = p.data().data() + static_cast<std::size_t>(nc) * Hl * W;
        for (int i = 0; i < Hl; ++i)
            for (int j = 0; j < W; ++j) {
                double d = std::abs(a[static_cast<std::size_t>(i) * W + j] -
                                    b[static_cast<std::size_t>(i) * W + ((j - s + W) % W)]);
                max_err = std::max(max_err, d);
                sum_err += d;
            }
    }
    return make_report("eq5", 0, max_err,
                       sum_err / static_cast<double>(static_cast<std::size_t>(NC) * Hl * W),
                       tolerance);
}

std::vector<EquivarianceReport> check_eq6(const EncoderParams& polar_branch,
                                          const EncoderConfig& cfg,
                                          const Tensor& x, int quarter_turns,
                                          double tolerance) {
    if (cfg.channels.empty())  // no stages: reduces to the PTL property
        return {check_eq5(x, quarter_turns, tolerance)};
    require(cfg.valid_padding, "check_eq6: encoder must use valid convolutions");
    require(x.dim(2) == x.dim(3), "check_eq6: square input required");
    PolarGridSpec spec = PolarGridSpec::defaults(x.dim(2), x.dim(3));
    const int roll = quarter_turns * spec.out_w / 4;
    require(spec.out_w % 4 == 0, "check_eq6: polar width must be divisible by 4");

    Tensor p = polar_transform(x, spec);
    Tensor pr =
        polar_transform(apply_action(x, GroupAction::rotation(quarter_turns)), spec);
    auto g = encode_branch(p, polar_branch, cfg, Domain::Polar);
    auto gr = encode_branch(pr, polar_branch, cfg, Domain::Polar);
    auto geo = stage_geometry(cfg);

    std::vector<EquivarianceReport> reports;
    for (std::size_t l = 0; l < g.size(); ++l) {
        const int s = geo[l].stride;
        require(roll % s == 0,
                "check_eq6: column roll not divisible by stage stride");
        const int sl = roll / s;
        const Tensor& A = gr[l].t;
        const Tensor& B = g[l].t;
        const int C = A.dim(1), Hl = A.dim(2), Wl = A.dim(3);
        // Columns whose receptive field stays clear of the array seam.
        const int margin = (geo[l].rf / 2 + s - 1) / s;
        int j_lo = sl + margin, j_hi = Wl - margin;
        double max_err = 0, sum_err = 0;
        std::size_t count = 0;
        for (int c = 0; c < C; ++c) {
            const double* pa = A.data().data() + static_cast<std::size_t>(c) * Hl * Wl;
            const double* pb = B.data().data() + static_cast<std::size_t>(c) * Hl * Wl;
            for (int i = 0; i < Hl; ++i)
                for (int j = j_lo; j < j_hi; ++j) {
                    double d = std::abs(pa[static_cast<std::size_t>(i) * Wl + j] -
                                        pb[static_cast<std::size_t>(i) * Wl + (j - sl)]);
                    max_err = std::max(max_err, d);
                    sum_err += d;
                    ++count;
                }
        }
        reports.push_back(make_report("eq6", static_cast<int>(l) + 1, max_err,
                                      count ? sum_err / static_cast<double>(count) : 0.0,
                                      tolerance));
    }
    return reports;
}

}  // namespace ddnet
