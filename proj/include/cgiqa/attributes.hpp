#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cgiqa/image.hpp"

namespace cgiqa {

// Quality-related attributes of one image.
//  light        mean Rec.601 luma, normalised to [0, 1]
//  contrast     RMS contrast (population std of normalised luma)
//  colorfulness Hasler-Suesstrunk on the 0-255 scale
//  blur         1 / (1 + var(Laplacian of luma)); 1 means no detail at all
//  si           std of the Sobel gradient magnitude of luma
struct AttributeVector {
  double light = 0.0;
  double contrast = 0.0;
  double colorfulness = 0.0;
  double blur = 0.0;
  double si = 0.0;

  static constexpr std::size_t kCount = 5;
  static constexpr std::array<const char*, kCount> kNames{"light", "contrast", "colorfulness",
                                                          "blur", "si"};
  std::array<double, kCount> values() const { return {light, contrast, colorfulness, blur, si}; }
};

// Throws ValidationError for rasters smaller than 8x8 or with inconsistent storage.
AttributeVector compute_attributes(const Image& image);

struct AttributeHistogram {
  std::string name;
  std::vector<double> edges;  // bins + 1 values
  std::vector<double> mass;   // sums to 1
};

struct AttributeHistogramSet {
  std::array<AttributeHistogram, AttributeVector::kCount> histograms;
};

// Bin `value` into `bins` equal-width bins spanning [lo, hi]; `hi` lands in
// the last bin and a zero-width range maps everything to bin 0.
std::size_t bin_index(double value, double lo, double hi, std::size_t bins);

AttributeHistogramSet attribute_histograms(const std::vector<AttributeVector>& pool,
                                           std::size_t bins);

struct SampleResult {
  std::vector<std::size_t> indices;  // sorted
  double distance = 0.0;
};

struct SampleOptions {
  std::size_t bins = 10;
  std::size_t trials = 8;
  // Random swap proposals per trial, as a multiple of the pool size.
  std::size_t swaps_per_item = 40;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

// Sum over attributes of the L1 distance between the subset's normalised
// histogram and the pool's, using bin edges taken from the whole pool.
double subset_distance(const std::vector<AttributeVector>& pool,
                       const std::vector<std::size_t>& subset, std::size_t bins);

// Picks k items whose attribute histograms track the pool's: random starts
// refined by greedy swaps, best trial wins.
SampleResult match_sample(const std::vector<AttributeVector>& pool, std::size_t k,
                          const SampleOptions& options = {});

}  // namespace cgiqa
