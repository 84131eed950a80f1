#ifndef DDNET_MODEL_HPP
#define DDNET_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ddnet/ops.hpp"
#include "ddnet/polar.hpp"
#include "ddnet/segmask.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

struct EncoderConfig {
    int in_channels = 3;
    std::vector<int> channels = {8, 16, 32};  // per stage
    int convs_per_stage = 2;                  // 3x3 + relu each
    int downsample = 2;  // strided first conv of stages >= 2
    // Valid (unpadded) convolutions; used by the equivariance harness,
    // training uses same-padding.
    bool valid_padding = false;

    int num_stages() const { return static_cast<int>(channels.size()); }
    int total_stride() const;
    int stage_stride(int stage) const;  // cumulative stride at stage (1-based)
    void validate() const;
};

enum class Domain { Cartesian, Polar };

struct FeatureMap {
    Domain domain;
    int stage = 0;  // 1-based
    Tensor t;
};

struct ConvParams {
    Tensor weight, bias;
};

struct EncoderParams {
    // stages[l][c]: c-th conv of stage l.
    std::vector<std::vector<ConvParams>> stages;
};

// CBAM-style importance block plus the 1x1 fusion conv for one stage.
struct FusionParams {
    Tensor mlp_w1, mlp_w2;  // shared channel MLP, reduction ratio r
    ConvParams loc_conv;    // 7x7, 2 -> 1 channels
    ConvParams fuse_conv;   // 1x1, 2K -> K
};

struct DecoderParams {
    ConvParams conv3;  // 3x3 over concatenated stages
    ConvParams conv1;  // 1x1 to 3 class logits
};

struct ImportanceMaps {
    Tensor channel;   // [N, 2K, 1, 1], values in (0,1)
    Tensor location;  // [N, 1, H, W], values in (0,1)
};

inline constexpr int kFusionReduction = 8;
inline constexpr int kNumClasses = 3;
inline constexpr int kDecoderWidth = 8;

struct DdnetModel {
    EncoderConfig cfg;
    EncoderParams cartesian, polar;
    std::vector<FusionParams> fusion;  // one per stage
    DecoderParams decoder;

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

// A single branch with its own decoder; the stage-A model of the two-stage
// training procedure, and the single-domain baseline.
struct BranchModel {
    EncoderConfig cfg;
    Domain domain = Domain::Cartesian;
    EncoderParams encoder;
    DecoderParams decoder;

    std::vector<Tensor> parameters() const;
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
};

EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed);
FusionParams init_fusion(int stage_channels, std::uint64_t seed);
DecoderParams init_decoder(int concat_channels, std::uint64_t seed);
DdnetModel init_model(const EncoderConfig& cfg, std::uint64_t seed);
BranchModel init_branch_model(const EncoderConfig& cfg, Domain domain,
                              std::uint64_t seed);

// Per-stage feature maps f^(1..L) or g^(1..L); for Domain::Polar the input
// must already be on the polar grid.
std::vector<FeatureMap> encode_branch(const Tensor& x,
                                      const EncoderParams& params,
                                      const EncoderConfig& cfg, Domain domain);

ImportanceMaps importance_maps(const Tensor& f_in, const FusionParams& params);

// Importance-weighted fusion with the maps given explicitly; fuse_stage is
// the usual entry point, this split exists so tests can pin the maps.
Tensor fuse_with_maps(const Tensor& f_in, const Tensor& channel_map,
                      const Tensor& location_map, const ConvParams& fuse_conv);

FeatureMap fuse_stage(const FeatureMap& f_l, const FeatureMap& g_l,
                      const FusionParams& params, const PolarGridSpec& spec);

Tensor decode(const std::vector<FeatureMap>& fused, int out_h, int out_w,
              const DecoderParams& params);

Tensor forward(const Tensor& x, const DdnetModel& model);
Tensor forward_branch(const Tensor& x, const BranchModel& model);

Tensor ce_loss(const Tensor& logits, const SegMask& target);
Tensor ce_loss(const Tensor& logits, const std::vector<SegMask>& targets);

// argmax over polar logits, then inverse polar transform of the labels.
SegMask predict(const Tensor& x, const DdnetModel& model);
SegMask argmax_mask(const Tensor& logits, int n = 0);

}  // namespace ddnet

#endif
