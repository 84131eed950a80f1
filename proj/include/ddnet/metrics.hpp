#ifndef DDNET_METRICS_HPP
#define DDNET_METRICS_HPP

#include <optional>
#include <vector>

#include "ddnet/segmask.hpp"

namespace ddnet {

enum class Region { Disc, Cup, Rim };

// Binary view of a region; disc = rim ∪ cup.
std::vector<std::uint8_t> region_of(const SegMask& mask, Region r);

// E = 1 - |P ∩ G| / |P ∪ G|; 0 when both regions are empty.
double overlap_error(const SegMask& pred, const SegMask& gt, Region region);

struct BoundaryProfile {
    double centroid_row = 0, centroid_col = 0;
    std::vector<double> radii;  // per direction, 0 when no foreground hit
};

// Radius profile by ray marching from the centroid in n uniformly spaced
// directions (step 0.25 px); radius = farthest foreground sample on the ray.
BoundaryProfile boundary_profile(const std::vector<std::uint8_t>& region, int h,
                                 int w, double centroid_row, double centroid_col,
                                 int n);

struct BleResult {
    double mean = 0;
    std::vector<double> per_direction;
};

// Boundary location error over n directions; the ground-truth centroid is
// used for both profiles. Throws on empty ground truth.
BleResult ble(const SegMask& pred, const SegMask& gt, Region region, int n = 24);

// Cup vertical diameter / disc vertical diameter (row spans, inclusive).
double vertical_cdr(const SegMask& mask);

struct ImageMetrics {
    double e_disc = 0, e_cup = 0, e_rim = 0;
    double ble_disc = 0, ble_cup = 0;
    double cdr_error = 0;
};

struct MetricsReport {
    std::vector<ImageMetrics> per_image;
    double mean_e_disc = 0, mean_e_cup = 0, mean_e_rim = 0;
    double mean_ble_disc = 0, std_ble_disc = 0;  // population std across images
    double mean_ble_cup = 0, std_ble_cup = 0;
    double mean_cdr_error = 0;
};

// gt_cdrs, when given, are the reference CDR values; otherwise the CDR is
// measured from the ground-truth masks.
MetricsReport evaluate(const std::vector<SegMask>& preds,
                       const std::vector<SegMask>& gts,
                       const std::vector<double>* gt_cdrs = nullptr);

void region_centroid(const std::vector<std::uint8_t>& region, int h, int w,
                     double* row, double* col);

}  // namespace ddnet

#endif
