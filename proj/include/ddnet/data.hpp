#ifndef DDNET_DATA_HPP
#define DDNET_DATA_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ddnet/segmask.hpp"
#include "ddnet/tensor.hpp"

namespace ddnet {

struct SynthParams {
    int size = 128;
    double disc_frac_min = 0.25, disc_frac_max = 0.35;  // radius / height
    double cdr_min = 0.3, cdr_max = 0.8;
    double ecc_jitter = 0.10;     // per-axis ellipse jitter
    double center_jitter = 0.05;  // fraction of size
    int vessels_min = 4, vessels_max = 8;
    double noise_sigma = 0.02;
    std::uint64_t seed = 0;
};

struct Sample {
    Tensor image;  // [3,H,W], values in [0,1]
    SegMask mask;
    double true_cdr = 0;
};

// Deterministic synthetic fundus-like samples: reddish gradient background,
// bright disc ellipse, brighter cup ellipse, dark vessel curves, Gaussian
// noise. The mask comes from the noiseless ellipses.
std::vector<Sample> generate(const SynthParams& params, int count);

// Random horizontal flip (p=0.5) then scale by U[0.9,1.1] about the centre;
// bilinear for the image, nearest for the mask.
Sample augment(const Sample& s, std::mt19937_64& rng);

// Deterministic variant with the draw made explicit.
Sample augment_with(const Sample& s, bool flip, double factor);

// Crop a window centred on the ground-truth disc centroid, clamped to the
// image borders.
Sample crop_od_window(const Sample& s, int window);

// Binary netpbm I/O. Masks encode classes {0,1,2} as gray values {0,127,255}.
void save_ppm(const std::string& path, const Tensor& image);
Tensor load_ppm(const std::string& path);
void save_pgm_mask(const std::string& path, const SegMask& mask);
SegMask load_pgm_mask(const std::string& path);

struct ManifestEntry {
    std::string filename;
    std::uint64_t seed = 0;
    double true_cdr = 0;
};

void write_manifest(const std::string& path,
                    const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace ddnet

#endif
