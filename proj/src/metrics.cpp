#include "ddnet/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace ddnet {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kRayStep = 0.25;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

bool region_empty(const std::vector<std::uint8_t>& r) {
    for (std::uint8_t v : r)
        if (v) return false;
    return true;
}

double population_std(const std::vector<double>& xs, double mean) {
    double acc = 0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / static_cast<double>(xs.size()));
}

}  // namespace

std::vector<std::uint8_t> region_of(const SegMask& mask, Region r) {
    std::vector<std::uint8_t> out(mask.labels.size(), 0);
    for (std::size_t i = 0; i < mask.labels.size(); ++i) {
        std::uint8_t v = mask.labels[i];
        switch (r) {
            case Region::Disc: out[i] = (v == kRim || v == kCup); break;
            case Region::Cup: out[i] = (v == kCup); break;
            case Region::Rim: out[i] = (v == kRim); break;
        }
    }
    return out;
}

double overlap_error(const SegMask& pred, const SegMask& gt, Region region) {
    require(pred.h == gt.h && pred.w == gt.w,
            "overlap_error: mask size mismatch");
    auto p = region_of(pred, region), g = region_of(gt, region);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] && g[i]);
        uni += (p[i] || g[i]);
    }
    if (uni == 0) return 0.0;
    return 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
}

void region_centroid(const std::vector<std::uint8_t>& region, int h, int w,
                     double* row, double* col) {
    double sr = 0, sc = 0;
    std::size_t count = 0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (region[static_cast<std::size_t>(i) * w + j]) {
                sr += i;
                sc += j;
                ++count;
            }
    require(count > 0, "region_centroid: empty region");
    *row = sr / static_cast<double>(count);
    *col = sc / static_cast<double>(count);
}

BoundaryProfile boundary_profile(const std::vector<std::uint8_t>& region, int h,
                                 int w, double centroid_row, double centroid_col,
                                 int n) {
    require(n >= 1, "boundary_profile: n must be >= 1");
    require(centroid_row >= 0 && centroid_row < h && centroid_col >= 0 &&
                centroid_col < w,
            "boundary_profile: centroid outside image");
    BoundaryProfile prof;
    prof.centroid_row = centroid_row;
    prof.centroid_col = centroid_col;
    prof.radii.resize(static_cast<std::size_t>(n), 0.0);
    const double max_r = std::hypot(static_cast<double>(h), static_cast<double>(w));
    for (int k = 0; k < n; ++k) {
        double alpha = 2.0 * kPi * k / n;
        double dr = std::sin(alpha), dc = std::cos(alpha);
        double farthest = 0.0;
        for (double r = 0.0; r <= max_r; r += kRayStep) {
            double pr = centroid_row + r * dr, pc = centroid_col + r * dc;
            int ir = static_cast<int>(std::lround(pr));
            int ic = static_cast<int>(std::lround(pc));
            if (ir < 0 || ir >= h || ic < 0 || ic >= w) break;
            if (region[static_cast<std::size_t>(ir) * w + ic]) farthest = r;
        }
        prof.radii[static_cast<std::size_t>(k)] = farthest;
    }
    return prof;
}

BleResult ble(const SegMask& pred, const SegMask& gt, Region region, int n) {
    require(pred.h == gt.h && pred.w == gt.w, "ble: mask size mismatch");
    auto g = region_of(gt, region);
    require(!region_empty(g), "ble: empty ground-truth region");
    auto p = region_of(pred, region);
    double cr, cc;
    region_centroid(g, gt.h, gt.w, &cr, &cc);
    BoundaryProfile pg = boundary_profile(g, gt.h, gt.w, cr, cc, n);
    BoundaryProfile pp = boundary_profile(p, gt.h, gt.w, cr, cc, n);
    BleResult out;
    out.per_direction.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        double d = std::abs(pp.radii[static_cast<std::size_t>(k)] -
                            pg.radii[static_cast<std::size_t>(k)]);
        out.per_direction[static_cast<std::size_t>(k)] = d;
        out.mean += d;
    }
    out.mean /= n;
    return out;
}

double vertical_cdr(const SegMask& mask) {
    int disc_min = mask.h, disc_max = -1, cup_min = mask.h, cup_max = -1;
    for (int i = 0; i < mask.h; ++i)
        for (int j = 0; j < mask.w; ++j) {
            std::uint8_t v = mask.at(i, j);
            if (v == kRim || v == kCup) {
                disc_min = std::min(disc_min, i);
                disc_max = std::max(disc_max, i);
            }
            if (v == kCup) {
                cup_min = std::min(cup_min, i);
                cup_max = std::max(cup_max, i);
            }
        }
    require(disc_max >= 0, "vertical_cdr: empty disc region");
    if (cup_max < 0) return 0.0;
    return static_cast<double>(cup_max - cup_min + 1) /
           static_cast<double>(disc_max - disc_min + 1);
}

MetricsReport evaluate(const std::vector<SegMask>& preds,
                       const std::vector<SegMask>& gts,
                       const std::vector<double>* gt_cdrs) {
    require(preds.size() == gts.size(), "evaluate: pred/gt count mismatch");
    require(!preds.empty(), "evaluate: empty input");
    if (gt_cdrs)
        require(gt_cdrs->size() == gts.size(), "evaluate: CDR count mismatch");
    MetricsReport rep;
    std::vector<double> bles_disc, bles_cup;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ImageMetrics m;
        m.e_disc = overlap_error(preds[i], gts[i], Region::Disc);
        m.e_cup = overlap_error(preds[i], gts[i], Region::Cup);
        m.e_rim = overlap_error(preds[i], gts[i], Region::Rim);
        m.ble_disc = ble(preds[i], gts[i], Region::Disc).mean;
        m.ble_cup = ble(preds[i], gts[i], Region::Cup).mean;
        double ref_cdr = gt_cdrs ? (*gt_cdrs)[i] : vertical_cdr(gts[i]);
        // an all-background prediction scores as CDR 0 instead of throwing
        bool pred_has_disc = false;
        for (std::uint8_t v : preds[i].labels)
            if (v != kBackground) { pred_has_disc = true; break; }
        m.cdr_error = std::abs((pred_has_disc ? vertical_cdr(preds[i]) : 0.0) -
                               ref_cdr);
        rep.mean_e_disc += m.e_disc;
        rep.mean_e_cup += m.e_cup;
        rep.mean_e_rim += m.e_rim;
        rep.mean_ble_disc += m.ble_disc;
        rep.mean_ble_cup += m.ble_cup;
        rep.mean_cdr_error += m.cdr_error;
        bles_disc.push_back(m.ble_disc);
        bles_cup.push_back(m.ble_cup);
        rep.per_image.push_back(m);
    }
    const double n = static_cast<double>(preds.size());
    rep.mean_e_disc /= n;
    rep.mean_e_cup /= n;
    rep.mean_e_rim /= n;
    rep.mean_ble_disc /= n;
    rep.mean_ble_cup /= n;
    rep.mean_cdr_error /= n;
    rep.std_ble_disc = population_std(bles_disc, rep.mean_ble_disc);
    rep.std_ble_cup = population_std(bles_cup, rep.mean_ble_cup);
    return rep;
}

}  // namespace ddnet
