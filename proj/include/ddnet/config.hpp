#ifndef DDNET_CONFIG_HPP
#define DDNET_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace ddnet {

// Run settings shared by all subcommands. File format: one key=value per
// line, '#' comments, unknown keys rejected. Training defaults: batch 4,
// momentum 0.9, weight decay 4e-5, lr 0.007 (stage A) / 0.001 (stage B).
struct RunConfig {
    // model
    std::vector<int> channels = {8, 16, 32};
    int convs_per_stage = 2;

    // data
    int size = 128;
    int train_count = 200, test_count = 50;
    std::uint64_t train_seed = 1, test_seed = 1000001;

    // training
    int batch = 4;
    double lr_a = 0.007, lr_b = 0.001;
    int iterations_a = 150, iterations_b = 2000;
    double momentum = 0.9, weight_decay = 4e-5;
    std::uint64_t seed = 0;
    bool augment = true;

    // Assign one key; throws std::invalid_argument on unknown keys or
    // unparseable values.
    void set(const std::string& key, const std::string& value);

    static RunConfig from_file(const std::string& path);

    // Full key=value dump, one per line, for run logs.
    std::string resolved() const;
};

}  // namespace ddnet

#endif
