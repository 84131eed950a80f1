#ifndef DDNET_SEGMASK_HPP
#define DDNET_SEGMASK_HPP

#include <cstdint>
#include <vector>

namespace ddnet {

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kRim = 1;
inline constexpr std::uint8_t kCup = 2;

// Per-pixel class labels. Disc region = rim ∪ cup.
struct SegMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> labels;  // row-major, values in {0,1,2}

    SegMask() = default;
    SegMask(int h_, int w_, std::uint8_t fill = kBackground)
        : h(h_), w(w_), labels(static_cast<std::size_t>(h_) * w_, fill) {}

    std::uint8_t& at(int i, int j) {
        return labels[static_cast<std::size_t>(i) * w + j];
    }
    std::uint8_t at(int i, int j) const {
        return labels[static_cast<std::size_t>(i) * w + j];
    }
    bool operator==(const SegMask&) const = default;
};

}  // namespace ddnet

#endif
