#include "ddnet/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace ddnet {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Tensor he_init(std::vector<int> shape, std::mt19937_64& rng) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < shape.size(); ++i)
        fan_in *= static_cast<std::size_t>(shape[i]);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = dist(rng);
    t.set_requires_grad(true);
    return t;
}

Tensor zeros_param(std::vector<int> shape) {
    Tensor t(std::move(shape));
    t.set_requires_grad(true);
    return t;
}

Tensor zero_bias(int k) { return Tensor({k}); }

void push_named(std::vector<std::pair<std::string, Tensor>>& out,
                const std::string& prefix, const EncoderParams& enc) {
    for (std::size_t l = 0; l < enc.stages.size(); ++l)
        for (std::size_t c = 0; c < enc.stages[l].size(); ++c) {
            std::string base = prefix + ".stage" + std::to_string(l + 1) +
                               ".conv" + std::to_string(c);
            out.emplace_back(base + ".weight", enc.stages[l][c].weight);
            out.emplace_back(base + ".bias", enc.stages[l][c].bias);
        }
}

void push_named(std::vector<std::pair<std::string, Tensor>>& out,
                const std::string& prefix, const DecoderParams& dec) {
    out.emplace_back(prefix + ".conv3.weight", dec.conv3.weight);
    out.emplace_back(prefix + ".conv3.bias", dec.conv3.bias);
    out.emplace_back(prefix + ".conv1.weight", dec.conv1.weight);
    out.emplace_back(prefix + ".conv1.bias", dec.conv1.bias);
}

}  // namespace

int EncoderConfig::total_stride() const { return stage_stride(num_stages()); }

int EncoderConfig::stage_stride(int stage) const {
    int s = 1;
    for (int l = 2; l <= stage; ++l) s *= downsample;
    return s;
}

void EncoderConfig::validate() const {
    require(!channels.empty(), "EncoderConfig: no stages");
    for (int c : channels) require(c > 0, "EncoderConfig: non-positive channels");
    require(in_channels > 0 && convs_per_stage >= 1 && downsample >= 1,
            "EncoderConfig: bad fields");
}

EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    EncoderParams p;
    int in_c = cfg.in_channels;
    for (int l = 0; l < cfg.num_stages(); ++l) {
        std::vector<ConvParams> stage;
        for (int c = 0; c < cfg.convs_per_stage; ++c) {
            int out_c = cfg.channels[static_cast<std::size_t>(l)];
            stage.push_back({he_init({out_c, in_c, 3, 3}, rng), zeros_param({out_c})});
            in_c = out_c;
        }
        p.stages.push_back(std::move(stage));
    }
    return p;
}

FusionParams init_fusion(int stage_channels, std::uint64_t seed) {
    const int c2 = 2 * stage_channels;
    require(c2 >= kFusionReduction,
            "init_fusion: 2K=" + std::to_string(c2) + " below reduction ratio " +
                std::to_string(kFusionReduction));
    std::mt19937_64 rng(seed);
    FusionParams p;
    const int hidden = c2 / kFusionReduction;
    // Neutral start: mlp_w2 and loc_conv at zero pin both importance maps to
    // exactly 0.5, and the fusion conv forwards the polar half of the concat
    // scaled by 1/(1 + 0.5*0.5). A warm-started stage-B model therefore
    // reproduces the pretrained polar branch; the Cartesian path and the
    // attention terms engage as those weights move off zero.
    p.mlp_w1 = he_init({hidden, c2, 1, 1}, rng);
    p.mlp_w2 = zeros_param({c2, hidden, 1, 1});
    p.loc_conv = {zeros_param({1, 2, 7, 7}), zeros_param({1})};
    p.fuse_conv = {zeros_param({stage_channels, c2, 1, 1}),
                   zeros_param({stage_channels})};
    for (int k = 0; k < stage_channels; ++k)
        p.fuse_conv.weight.data()[static_cast<std::size_t>(k) * c2 +
                                  stage_channels + k] = 0.8;
    return p;
}

DecoderParams init_decoder(int concat_channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DecoderParams p;
    p.conv3 = {he_init({kDecoderWidth, concat_channels, 3, 3}, rng),
               zeros_param({kDecoderWidth})};
    p.conv1 = {he_init({kNumClasses, kDecoderWidth, 1, 1}, rng),
               zeros_param({kNumClasses})};
    return p;
}

DdnetModel init_model(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DdnetModel m;
    m.cfg = cfg;
    m.cartesian = init_encoder(cfg, seed);
    m.polar = init_encoder(cfg, seed + 1);
    int concat_c = 0;
    for (int l = 0; l < cfg.num_stages(); ++l) {
        m.fusion.push_back(
            init_fusion(cfg.channels[static_cast<std::size_t>(l)], seed + 2 + static_cast<std::uint64_t>(l)));
        concat_c += cfg.channels[static_cast<std::size_t>(l)];
    }
    m.decoder = init_decoder(concat_c, seed + 100);
    return m;
}

BranchModel init_branch_model(const EncoderConfig& cfg, Domain domain,
                              std::uint64_t seed) {
    cfg.validate();
    BranchModel m;
    m.cfg = cfg;
    m.domain = domain;
    m.encoder = init_encoder(cfg, seed);
    int concat_c = 0;
    for (int c : cfg.channels) concat_c += c;
    m.decoder = init_decoder(concat_c, seed + 100);
    return m;
}

std::vector<std::pair<std::string, Tensor>> DdnetModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    push_named(out, "cartesian", cartesian);
    push_named(out, "polar", polar);
    for (std::size_t l = 0; l < fusion.size(); ++l) {
        std::string base = "fusion.stage" + std::to_string(l + 1);
        out.emplace_back(base + ".mlp_w1", fusion[l].mlp_w1);
        out.emplace_back(base + ".mlp_w2", fusion[l].mlp_w2);
        out.emplace_back(base + ".loc_conv.weight", fusion[l].loc_conv.weight);
        out.emplace_back(base + ".loc_conv.bias", fusion[l].loc_conv.bias);
        out.emplace_back(base + ".fuse_conv.weight", fusion[l].fuse_conv.weight);
        out.emplace_back(base + ".fuse_conv.bias", fusion[l].fuse_conv.bias);
    }
    push_named(out, "decoder", decoder);
    return out;
}

std::vector<Tensor> DdnetModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<std::pair<std::string, Tensor>> BranchModel::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    push_named(out, domain == Domain::Cartesian ? "cartesian" : "polar", encoder);
    push_named(out, "decoder", decoder);
    return out;
}

std::vector<Tensor> BranchModel::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::vector<FeatureMap> encode_branch(const Tensor& x,
                                      const EncoderParams& params,
                                      const EncoderConfig& cfg, Domain domain) {
    cfg.validate();
    require(x.rank() == 4, "encode_branch: expected NCHW input");
    require(x.dim(1) == cfg.in_channels, "encode_branch: channel mismatch");
    if (!cfg.valid_padding) {
        int ts = cfg.total_stride();
        require(x.dim(2) % ts == 0 && x.dim(3) % ts == 0,
                "encode_branch: spatial size " + std::to_string(x.dim(2)) + "x" +
                    std::to_string(x.dim(3)) + " not divisible by total stride " +
                    std::to_string(ts));
    }
    const int pad = cfg.valid_padding ? 0 : 1;
    std::vector<FeatureMap> out;
    Tensor h = x;
    for (int l = 0; l < cfg.num_stages(); ++l) {
        for (int c = 0; c < cfg.convs_per_stage; ++c) {
            int stride = (c == 0 && l > 0) ? cfg.downsample : 1;
            const ConvParams& cp = params.stages[static_cast<std::size_t>(l)][static_cast<std::size_t>(c)];
            h = relu(conv2d(h, cp.weight, cp.bias, stride, pad));
        }
        out.push_back({domain, l + 1, h});
    }
    return out;
}

ImportanceMaps importance_maps(const Tensor& f_in, const FusionParams& params) {
    require(f_in.rank() == 4, "importance_maps: expected NCHW input");
    const int c2 = f_in.dim(1);
    require(c2 % 2 == 0, "importance_maps: channel count must be even");
    require(c2 >= kFusionReduction,
            "importance_maps: channel count below reduction ratio");
    const int hidden = params.mlp_w1.dim(0);
    auto mlp = [&](const Tensor& t) {
        Tensor h = relu(conv2d(t, params.mlp_w1, zero_bias(hidden)));
        return conv2d(h, params.mlp_w2, zero_bias(c2));
    };
    Tensor channel =
        sigmoid(add(mlp(global_avg_pool(f_in)), mlp(global_max_pool(f_in))));
    Tensor f_c = mul(channel, f_in);
    Tensor pooled = concat_channels({channel_mean(f_c), channel_max(f_c)});
    Tensor location =
        sigmoid(conv2d(pooled, params.loc_conv.weight, params.loc_conv.bias,
                       /*stride=*/1, /*padding=*/3));
    return {channel, location};
}

Tensor fuse_with_maps(const Tensor& f_in, const Tensor& channel_map,
                      const Tensor& location_map, const ConvParams& fuse_conv) {
    Tensor f_c = mul(channel_map, f_in);
    Tensor f_cl = mul(location_map, f_c);
    return conv2d(add(f_cl, f_in), fuse_conv.weight, fuse_conv.bias);
}

FeatureMap fuse_stage(const FeatureMap& f_l, const FeatureMap& g_l,
                      const FusionParams& params, const PolarGridSpec& spec) {
    require(f_l.domain == Domain::Cartesian && g_l.domain == Domain::Polar,
            "fuse_stage: expects (cartesian, polar) feature maps in that order");
    require(f_l.stage == g_l.stage, "fuse_stage: stage mismatch");
    require(f_l.t.shape() == g_l.t.shape(), "fuse_stage: shape mismatch");
    Tensor f_polar = polar_transform(f_l.t, spec);
    Tensor f_in = concat_channels({f_polar, g_l.t});
    ImportanceMaps maps = importance_maps(f_in, params);
    Tensor out = fuse_with_maps(f_in, maps.channel, maps.location, params.fuse_conv);
    return {Domain::Polar, f_l.stage, out};
}

Tensor decode(const std::vector<FeatureMap>& fused, int out_h, int out_w,
              const DecoderParams& params) {
    require(!fused.empty(), "decode: empty feature map list");
    const int base_h = fused[0].t.dim(2), base_w = fused[0].t.dim(3);
    std::vector<Tensor> resized;
    for (const FeatureMap& f : fused)
        resized.push_back(bilinear_resize(f.t, base_h, base_w));
    Tensor h = relu(conv2d(concat_channels(resized), params.conv3.weight,
                           params.conv3.bias, /*stride=*/1, /*padding=*/1));
    Tensor logits = conv2d(h, params.conv1.weight, params.conv1.bias);
    return bilinear_resize(logits, out_h, out_w);
}

Tensor forward(const Tensor& x, const DdnetModel& model) {
    require(x.rank() == 4, "forward: expected NCHW input");
    const int H = x.dim(2), W = x.dim(3);
    PolarGridSpec in_spec = PolarGridSpec::defaults(H, W);
    Tensor x_polar = polar_transform(x, in_spec);
    std::vector<FeatureMap> f =
        encode_branch(x, model.cartesian, model.cfg, Domain::Cartesian);
    std::vector<FeatureMap> g =
        encode_branch(x_polar, model.polar, model.cfg, Domain::Polar);
    std::vector<FeatureMap> fused;
    for (std::size_t l = 0; l < f.size(); ++l) {
        PolarGridSpec spec_l =
            PolarGridSpec::defaults(f[l].t.dim(2), f[l].t.dim(3));
        fused.push_back(fuse_stage(f[l], g[l], model.fusion[l], spec_l));
    }
    return decode(fused, H, W, model.decoder);
}

Tensor forward_branch(const Tensor& x, const BranchModel& model) {
    std::vector<FeatureMap> maps =
        encode_branch(x, model.encoder, model.cfg, model.domain);
    return decode(maps, x.dim(2), x.dim(3), model.decoder);
}

Tensor ce_loss(const Tensor& logits, const SegMask& target) {
    return ce_loss(logits, std::vector<SegMask>{target});
}

Tensor ce_loss(const Tensor& logits, const std::vector<SegMask>& targets) {
    require(logits.rank() == 4 && logits.dim(1) == kNumClasses,
            "ce_loss: logits must be [N,3,H,W]");
    require(static_cast<std::size_t>(logits.dim(0)) == targets.size(),
            "ce_loss: batch size mismatch");
    std::vector<int> flat;
    flat.reserve(logits.numel() / kNumClasses);
    for (const SegMask& m : targets) {
        require(m.h == logits.dim(2) && m.w == logits.dim(3),
                "ce_loss: mask size mismatch");
        for (std::uint8_t v : m.labels) {
            if (v > 2)
                throw std::invalid_argument("ce_loss: label " + std::to_string(v) +
                                            " outside {0,1,2}");
            flat.push_back(v);
        }
    }
    return cross_entropy_loss(logits, flat);
}

SegMask argmax_mask(const Tensor& logits, int n) {
    require(logits.rank() == 4, "argmax_mask: expected NCHW logits");
    const int C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    const std::size_t hw = static_cast<std::size_t>(H) * W;
    SegMask out(H, W);
    for (std::size_t i = 0; i < hw; ++i) {
        int best = 0;
        double bv = logits.data()[(static_cast<std::size_t>(n) * C) * hw + i];
        for (int c = 1; c < C; ++c) {
            double v = logits.data()[(static_cast<std::size_t>(n) * C + c) * hw + i];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        out.labels[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

SegMask predict(const Tensor& x, const DdnetModel& model) {
    Tensor logits = forward(x, model);
    SegMask polar_mask = argmax_mask(logits);
    return inverse_polar_transform_labels(
        polar_mask, PolarGridSpec::defaults(x.dim(2), x.dim(3)));
}

}  // namespace ddnet
