#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vssmseg/rng.hpp"
#include "vssmseg/tensor.hpp"

namespace vssmseg::data {

// Image in [0,1] plus an exact binary mask. Stands in for the clinical
// datasets: 1-3 bright ellipses over a textured darker background.
struct SyntheticSample {
    Tensor<float> image;  // [3,H,W]
    Tensor<float> mask;   // [1,H,W], values in {0,1}
};

using Dataset = std::vector<SyntheticSample>;

// Deterministic per (n, h, w, seed). Mask foreground fraction is kept within
// [0.02, 0.6] by construction.
Dataset gen_synthetic(int64_t n, int64_t h, int64_t w, uint64_t seed);

// The discrete transform set: horizontal/vertical flips and 90-degree
// rotations, applied identically to image and mask.
SyntheticSample augment_apply(const SyntheticSample& s, bool hflip, bool vflip, int rot90_k);

// 50% flips on each axis and a uniform 90k rotation drawn from rng.
SyntheticSample augment(const SyntheticSample& s, Rng& rng);

// Directory layout: index.txt plus one VTNS tensor container per image and
// mask.
void save_dataset(const std::string& dir, const Dataset& ds, uint64_t seed);
Dataset load_dataset(const std::string& dir);

}  // namespace vssmseg::data
