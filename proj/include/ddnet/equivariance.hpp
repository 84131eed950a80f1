#ifndef DDNET_EQUIVARIANCE_HPP
#define DDNET_EQUIVARIANCE_HPP

#include <string>
#include <vector>

#include "ddnet/model.hpp"
#include "ddnet/polar.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

struct GroupAction {
    enum class Kind { Translation, Rotation };
    Kind kind = Kind::Translation;
    int dy = 0, dx = 0;        // translation, pixels
    int quarter_turns = 0;     // rotation, in {1,2,3}

    static GroupAction translation(int dy, int dx);
    static GroupAction rotation(int quarter_turns);
};

struct EquivarianceReport {
    std::string property;  // "eq4", "eq5", "eq6"
    int stage = 0;         // 0 for eq5
    double max_abs_error = 0;
    double mean_abs_error = 0;
    double tolerance = 0;
    bool pass = false;
};

// Translation shifts content with zero fill; rotation permutes the pixel
// lattice exactly (out(i,j) = in(H-1-j, i) per quarter turn, square only).
Tensor apply_action(const Tensor& x, const GroupAction& a);

// Translation equivariance of the Cartesian branch: f(Lt∘X) vs Lt∘f(X) on
// the interior overlap, one report per stage. Requires valid convolutions
// and stride-multiple translations.
std::vector<EquivarianceReport> check_eq4(const EncoderParams& encoder,
                                          const EncoderConfig& cfg,
                                          const Tensor& x, int dy, int dx,
                                          double tolerance = 1e-12);

// Rotation-to-translation of the polar transform: PTL(Lr∘X) vs column roll
// of PTL(X) by quarter_turns*out_w/4.
EquivarianceReport check_eq5(const Tensor& x, int quarter_turns,
                             double tolerance = 1e-9);

// Rotation equivariance of the polar branch: g(Lr∘X) vs stage-scaled column
// roll of g(X) on interior columns.
std::vector<EquivarianceReport> check_eq6(const EncoderParams& polar_branch,
                                          const EncoderConfig& cfg,
                                          const Tensor& x, int quarter_turns,
                                          double tolerance = 1e-6);

}  // namespace ddnet

#endif
