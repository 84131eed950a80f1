#ifndef DDNET_POLAR_HPP
#define DDNET_POLAR_HPP

#include <cstdint>
#include <vector>

#include "ddnet/segmask.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

// Geometry of the polar transform layer: output rows are radial bins,
// output columns are angular bins covering [-pi, pi) once. Coordinates are
// continuous pixel units with pixel (a,b) centred at (a+0.5, b+0.5), so the
// default centre (h/2, w/2) coincides with the lattice centre and exact 90°
// lattice rotations map to exact column rolls.
struct PolarGridSpec {
    int input_h = 0, input_w = 0;
    double center_u = 0.0, center_v = 0.0;  // (row, col)
    int out_h = 0, out_w = 0;               // radial bins, angular bins
    double radial_extent = 0.0;

    static PolarGridSpec defaults(int h, int w);
    void validate() const;
};

// Continuous source coordinates per output pixel, row-major (out_h, out_w).
// Invalid entries (inverse-transform pixels beyond the radial extent) are
// filled with zero / background by the samplers.
struct SampleGrid {
    int out_h = 0, out_w = 0;
    std::vector<double> u, v;
    std::vector<std::uint8_t> valid;
};

// Output (i,j) samples radius (i+0.5)*R/out_h at angle -pi + 2*pi*(j+0.5)/out_w;
// source u = u0 + r*sin(theta), v = v0 + r*cos(theta).
SampleGrid build_polar_grid(const PolarGridSpec& spec);

// Fractional polar indices per Cartesian pixel; r > R marked invalid.
SampleGrid build_inverse_polar_grid(const PolarGridSpec& spec);

// Bilinear sampling of the 4 neighbours; out-of-bounds neighbours contribute
// zero. With angular_wrap the column axis interpolates modulo W (used when
// sampling from a polar image). Differentiable w.r.t. image values.
Tensor bilinear_sample(const Tensor& image, const SampleGrid& grid,
                       bool angular_wrap = false);

Tensor polar_transform(const Tensor& x, const PolarGridSpec& spec);
Tensor inverse_polar_transform(const Tensor& p, const PolarGridSpec& spec);

// Nearest-neighbour counterparts for class-label masks; out-of-bounds and
// out-of-circle pixels become background.
SegMask polar_transform_labels(const SegMask& mask, const PolarGridSpec& spec);
SegMask inverse_polar_transform_labels(const SegMask& polar_mask,
                                       const PolarGridSpec& spec);

}  // namespace ddnet

#endif
