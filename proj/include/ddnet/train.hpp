#ifndef DDNET_TRAIN_HPP
#define DDNET_TRAIN_HPP

#include <cstdint>
#include <vector>

#include "ddnet/config.hpp"
#include "ddnet/data.hpp"
#include "ddnet/metrics.hpp"
#include "ddnet/model.hpp"

namespace ddnet {

EncoderConfig encoder_config_of(const RunConfig& cfg);

// Batch tensor [N,3,H,W] from sample pointers.
Tensor stack_images(const std::vector<const Sample*>& batch);

// Single-domain training (the stage-A warm-up and the single-branch
// baselines). For Domain::Polar the images and masks are moved onto the
// polar grid before the loss. Per-iteration losses append to loss_curve.
BranchModel train_branch(const std::vector<Sample>& data, const RunConfig& cfg,
                         Domain domain, int iterations, double lr,
                         std::uint64_t seed,
                         std::vector<double>* loss_curve = nullptr);

struct TwoStageResult {
    DdnetModel model;
    std::vector<double> cart_curve, polar_curve;  // stage A
    std::vector<double> stage_b_curve;
    double initial_stage_b_loss = 0;  // first stage-B batch, before any update
};

// Stage A trains each branch with a throwaway decoder; stage B copies the
// branch encoders into a fresh DDNet and trains end-to-end on polar masks.
// iterations_a = 0 gives a random (cold) start for stage B.
TwoStageResult train_two_stage(const std::vector<Sample>& data,
                               const RunConfig& cfg);

// predict() on every sample, scored against the ground truth masks and the
// generator's true CDR values.
MetricsReport evaluate_model(const DdnetModel& model,
                             const std::vector<Sample>& test);

}  // namespace ddnet

#endif
