#pragma once

#include <cstdint>
#include <vector>

#include "cgiqa/image.hpp"
#include "cgiqa/rng.hpp"
#include "cgiqa/subjective.hpp"

namespace cgiqa {

// Simulated rating panel: subject i rates stimulus j as
//   clamp(2.5 + gain_i * (q_j - 2.5) + bias_i + noise, 0, 5)
// rounded to the 0.1 grid. True qualities come in mirrored pairs (q, 5 - q).
struct PanelSpec {
  std::size_t subjects = 20;
  std::size_t stimuli = 100;
  double quality_low = 1.0;
  double quality_high = 4.0;
  double bias_std = 0.5;
  double gain_low = 0.8;
  double gain_high = 1.2;
  double noise_std = 0.1;
  // Appends one subject who rates 5 - x, x being the panel's mean rating.
  bool inverse_rater = false;
  std::uint64_t seed = 0;
};

struct SyntheticPanel {
  std::vector<RatingRecord> records;
  std::vector<double> true_quality;  // per stimulus, ids "s000", "s001", ...
};

SyntheticPanel make_panel(const PanelSpec& spec);

// Random flat-shaded scene: rectangles, discs and stripes over a gradient.
Image random_scene(std::size_t width, std::size_t height, Rng& rng);

// Square grid of cell x cell blocks, each a uniformly random RGB colour.
Image random_mosaic(std::size_t size, std::size_t cell, Rng& rng);

// Mosaics blurred with a Gaussian of random sigma in [0, max_sigma];
// mos = mos_sharp + mos_per_sigma * sigma.
struct BlurSetSpec {
  std::size_t count = 80;
  std::size_t size = 64;
  std::size_t cell = 4;
  double max_sigma = 3.0;
  double mos_sharp = 4.5;
  double mos_per_sigma = -1.2;
  std::uint64_t seed = 0;
};

struct BlurSet {
  std::vector<Image> images;
  std::vector<double> sigma;
  std::vector<double> mos;
};

BlurSet make_blur_set(const BlurSetSpec& spec);

// Stand-in aesthetic corpus: scenes scored 5 * mean luma.
struct AestheticSet {
  std::vector<Image> images;
  std::vector<double> scores;
};

AestheticSet make_aesthetic_set(std::size_t count, std::size_t size, std::uint64_t seed);

}  // namespace cgiqa
