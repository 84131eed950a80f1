#include "ddnet/train.hpp"

#include <stdexcept>

namespace ddnet {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<Sample> draw_batch(const std::vector<Sample>& data,
                               const RunConfig& cfg, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<Sample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch));
    for (int n = 0; n < cfg.batch; ++n) {
        const Sample& s = data[pick(rng)];
        batch.push_back(cfg.augment ? augment(s, rng) : s);
    }
    return batch;
}

Tensor stack_batch(const std::vector<Sample>& batch) {
    std::vector<const Sample*> ptrs;
    for (const Sample& s : batch) ptrs.push_back(&s);
    return stack_images(ptrs);
}

void copy_params(const EncoderParams& src, EncoderParams& dst) {
    for (std::size_t l = 0; l < src.stages.size(); ++l)
        for (std::size_t c = 0; c < src.stages[l].size(); ++c) {
            dst.stages[l][c].weight.data() = src.stages[l][c].weight.data();
            dst.stages[l][c].bias.data() = src.stages[l][c].bias.data();
        }
}

}  // namespace

EncoderConfig encoder_config_of(const RunConfig& cfg) {
    EncoderConfig e;
    e.channels = cfg.channels;
    e.convs_per_stage = cfg.convs_per_stage;
    return e;
}

Tensor stack_images(const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw std::invalid_argument("stack_images: empty batch");
    const int H = batch[0]->image.dim(1), W = batch[0]->image.dim(2);
    Tensor x({static_cast<int>(batch.size()), 3, H, W});
    const std::size_t per = static_cast<std::size_t>(3) * H * W;
    for (std::size_t n = 0; n < batch.size(); ++n) {
        if (batch[n]->image.numel() != per)
            throw std::invalid_argument("stack_images: mixed sample sizes");
        std::copy(batch[n]->image.data().begin(), batch[n]->image.data().end(),
                  x.data().begin() + static_cast<long>(n * per));
    }
    return x;
}

BranchModel train_branch(const std::vector<Sample>& data, const RunConfig& cfg,
                         Domain domain, int iterations, double lr,
                         std::uint64_t seed, std::vector<double>* loss_curve) {
    if (data.empty()) throw std::invalid_argument("train_branch: empty dataset");
    EncoderConfig ecfg = encoder_config_of(cfg);
    BranchModel model = init_branch_model(ecfg, domain, seed);
    Sgd opt(model.parameters(), lr, cfg.momentum, cfg.weight_decay);
    std::mt19937_64 rng(mix(seed, 0xA));
    PolarGridSpec spec = PolarGridSpec::defaults(cfg.size, cfg.size);
    for (int it = 0; it < iterations; ++it) {
        std::vector<Sample> batch = draw_batch(data, cfg, rng);
        Tensor x = stack_batch(batch);
        std::vector<SegMask> targets;
        for (const Sample& s : batch)
            targets.push_back(domain == Domain::Polar
                                  ? polar_transform_labels(s.mask, spec)
                                  : s.mask);
        if (domain == Domain::Polar) x = polar_transform(x, spec);
        tape_clear();
        Tensor loss = ce_loss(forward_branch(x, model), targets);
        backward(loss);
        if (loss_curve) loss_curve->push_back(loss.item());
        opt.step();
    }
    tape_clear();
    return model;
}

TwoStageResult train_two_stage(const std::vector<Sample>& data,
                               const RunConfig& cfg) {
    if (data.empty())
        throw std::invalid_argument("train_two_stage: empty dataset");
    EncoderConfig ecfg = encoder_config_of(cfg);
    TwoStageResult out;

    BranchModel cart =
        train_branch(data, cfg, Domain::Cartesian, cfg.iterations_a, cfg.lr_a,
                     mix(cfg.seed, 1), &out.cart_curve);
    BranchModel polar =
        train_branch(data, cfg, Domain::Polar, cfg.iterations_a, cfg.lr_a,
                     mix(cfg.seed, 2), &out.polar_curve);

    out.model = init_model(ecfg, mix(cfg.seed, 3));
    copy_params(cart.encoder, out.model.cartesian);
    copy_params(polar.encoder, out.model.polar);
    // With the neutral fusion init the polar branch passes straight through,
    // so inheriting its decoder makes the warm-started model reproduce the
    // pretrained branch exactly at the first stage-B iteration.
    out.model.decoder.conv3.weight.data() = polar.decoder.conv3.weight.data();
    out.model.decoder.conv3.bias.data() = polar.decoder.conv3.bias.data();
    out.model.decoder.conv1.weight.data() = polar.decoder.conv1.weight.data();
    out.model.decoder.conv1.bias.data() = polar.decoder.conv1.bias.data();

    Sgd opt(out.model.parameters(), cfg.lr_b, cfg.momentum, cfg.weight_decay);
    std::mt19937_64 rng(mix(cfg.seed, 0xB));
    PolarGridSpec spec = PolarGridSpec::defaults(cfg.size, cfg.size);
    for (int it = 0; it < cfg.iterations_b; ++it) {
        std::vector<Sample> batch = draw_batch(data, cfg, rng);
        Tensor x = stack_batch(batch);
        std::vector<SegMask> targets;
        for (const Sample& s : batch)
            targets.push_back(polar_transform_labels(s.mask, spec));
        tape_clear();
        Tensor loss = ce_loss(forward(x, out.model), targets);
        backward(loss);
        out.stage_b_curve.push_back(loss.item());
        if (it == 0) out.initial_stage_b_loss = loss.item();
        opt.step();
    }
    if (cfg.iterations_b == 0) {
        // still report the cold loss so warm starts can be compared
        std::mt19937_64 probe_rng(mix(cfg.seed, 0xB));
        std::vector<Sample> batch = draw_batch(data, cfg, probe_rng);
        std::vector<SegMask> targets;
        for (const Sample& s : batch)
            targets.push_back(polar_transform_labels(s.mask, spec));
        tape_clear();
        out.initial_stage_b_loss =
            ce_loss(forward(stack_batch(batch), out.model), targets).item();
    }
    tape_clear();
    return out;
}

MetricsReport evaluate_model(const DdnetModel& model,
                             const std::vector<Sample>& test) {
    std::vector<SegMask> preds, gts;
    std::vector<double> cdrs;
    for (const Sample& s : test) {
        Tensor x({1, 3, s.image.dim(1), s.image.dim(2)});
        x.data() = s.image.data();
        tape_clear();
        preds.push_back(predict(x, model));
        gts.push_back(s.mask);
        cdrs.push_back(s.true_cdr);
    }
    tape_clear();
    return evaluate(preds, gts, &cdrs);
}

}  // namespace ddnet
