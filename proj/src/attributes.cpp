#include "cgiqa/attributes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgiqa/error.hpp"
#include "cgiqa/parallel.hpp"
#include "cgiqa/rng.hpp"

namespace cgiqa {
namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population
};

template <typename Range>
Moments moments(const Range& values) {
  Moments m;
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  for (double v : values) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(values.size());
  return m;
}

}  // namespace

AttributeVector compute_attributes(const Image& image) {
  if (image.width < 8 || image.height < 8) {
    throw ValidationError("attributes: image must be at least 8x8, got " +
                          std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  if (image.rgb.size() != image.width * image.height * 3) {
    throw ValidationError("attributes: raster is not packed 8-bit RGB");
  }
  const std::size_t w = image.width, h = image.height, n = w * h;
  std::vector<double> luma(n), rg(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = image.rgb[3 * i], g = image.rgb[3 * i + 1], b = image.rgb[3 * i + 2];
    luma[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
    rg[i] = r - g;
    yb[i] = 0.5 * (r + g) - b;
  }
  AttributeVector a;
  const Moments lm = moments(luma);
  a.light = std::clamp(lm.mean, 0.0, 1.0);
  a.contrast = std::sqrt(lm.var);
  const Moments rgm = moments(rg), ybm = moments(yb);
  a.colorfulness = std::sqrt(rgm.var + ybm.var) +
                   0.3 * std::sqrt(rgm.mean * rgm.mean + ybm.mean * ybm.mean);

  std::vector<double> lap, sobel;
  lap.reserve((w - 2) * (h - 2));
  sobel.reserve((w - 2) * (h - 2));
  auto L = [&](std::size_t x, std::size_t y) { return luma[y * w + x]; };
  for (std::size_t y = 1; y + 1 < h; ++y) {
    for (std::size_t x = 1; x + 1 < w; ++x) {
      lap.push_back(L(x - 1, y) + L(x + 1, y) + L(x, y - 1) + L(x, y + 1) - 4.0 * L(x, y));
      const double gx = (L(x + 1, y - 1) + 2 * L(x + 1, y) + L(x + 1, y + 1)) -
                        (L(x - 1, y - 1) + 2 * L(x - 1, y) + L(x - 1, y + 1));
      const double gy = (L(x - 1, y + 1) + 2 * L(x, y + 1) + L(x + 1, y + 1)) -
                        (L(x - 1, y - 1) + 2 * L(x, y - 1) + L(x + 1, y - 1));
      sobel.push_back(std::sqrt(gx * gx + gy * gy));
    }
  }
  a.blur = 1.0 / (1.0 + moments(lap).var);
  a.si = std::sqrt(moments(sobel).var);
  return a;
}

std::size_t bin_index(double value, double lo, double hi, std::size_t bins) {
  if (!(hi > lo)) return 0;
  const double t = (value - lo) / (hi - lo) * static_cast<double>(bins);
  if (!(t > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(t), bins - 1);
}

namespace {

struct PoolBins {
  std::size_t bins;
  // bin of item i for attribute a at [i * kCount + a]
  std::vector<std::size_t> item_bins;
  // normalised pool mass per attribute, [a * bins + b]
  std::vector<double> pool_mass;
  std::array<double, AttributeVector::kCount> lo{}, hi{};
};

PoolBins bin_pool(const std::vector<AttributeVector>& pool, std::size_t bins) {
  if (pool.empty()) throw ValidationError("attribute pool is empty");
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  constexpr std::size_t A = AttributeVector::kCount;
  PoolBins pb{bins, std::vector<std::size_t>(pool.size() * A), std::vector<double>(A * bins, 0.0)};
  for (std::size_t a = 0; a < A; ++a) {
    pb.lo[a] = pb.hi[a] = pool.front().values()[a];
  }
  for (const AttributeVector& v : pool) {
    const auto vals = v.values();
    for (std::size_t a = 0; a < A; ++a) {
      pb.lo[a] = std::min(pb.lo[a], vals[a]);
      pb.hi[a] = std::max(pb.hi[a], vals[a]);
    }
  }
  const double inv = 1.0 / static_cast<double>(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto vals = pool[i].values();
    for (std::size_t a = 0; a < A; ++a) {
      const std::size_t b = bin_index(vals[a], pb.lo[a], pb.hi[a], bins);
      pb.item_bins[i * A + a] = b;
      pb.pool_mass[a * bins + b] += 1.0;
    }
  }
  for (double& m : pb.pool_mass) m *= inv;
  return pb;
}

double distance_from_counts(const PoolBins& pb, const std::vector<double>& counts,
                            std::size_t k) {
  double d = 0.0;
  const double inv = 1.0 / static_cast<double>(k);
  for (std::size_t i = 0; i < counts.size(); ++i) d += std::abs(counts[i] * inv - pb.pool_mass[i]);
  return d;
}

}  // namespace

AttributeHistogramSet attribute_histograms(const std::vector<AttributeVector>& pool,
                                           std::size_t bins) {
  const PoolBins pb = bin_pool(pool, bins);
  AttributeHistogramSet set;
  for (std::size_t a = 0; a < AttributeVector::kCount; ++a) {
    AttributeHistogram& h = set.histograms[a];
    h.name = AttributeVector::kNames[a];
    for (std::size_t b = 0; b <= bins; ++b) {
      h.edges.push_back(pb.lo[a] + (pb.hi[a] - pb.lo[a]) * static_cast<double>(b) /
                                       static_cast<double>(bins));
    }
    h.mass.assign(pb.pool_mass.begin() + static_cast<std::ptrdiff_t>(a * bins),
                  pb.pool_mass.begin() + static_cast<std::ptrdiff_t>((a + 1) * bins));
  }
  return set;
}

double subset_distance(const std::vector<AttributeVector>& pool,
                       const std::vector<std::size_t>& subset, std::size_t bins) {
  if (subset.empty()) throw ValidationError("subset is empty");
  const PoolBins pb = bin_pool(pool, bins);
  constexpr std::size_t A = AttributeVector::kCount;
  std::vector<double> counts(A * bins, 0.0);
  for (std::size_t i : subset) {
    if (i >= pool.size()) throw ValidationError("subset index out of range");
    for (std::size_t a = 0; a < A; ++a) counts[a * bins + pb.item_bins[i * A + a]] += 1.0;
  }
  return distance_from_counts(pb, counts, subset.size());
}

SampleResult match_sample(const std::vector<AttributeVector>& pool, std::size_t k,
                          const SampleOptions& options) {
  if (k == 0 || k > pool.size()) {
    throw ValidationError("match_sample: k = " + std::to_string(k) + " with a pool of " +
                          std::to_string(pool.size()));
  }
  const PoolBins pb = bin_pool(pool, options.bins);
  constexpr std::size_t A = AttributeVector::kCount;
  const std::size_t n = pool.size();
  const std::size_t bins = options.bins;
  const std::size_t trials = std::max<std::size_t>(options.trials, 1);

  std::vector<SampleResult> results(trials);
  parallel_for(trials, options.threads, [&](std::size_t trial) {
    Rng rng(derive_seed(options.seed, trial));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    // order[0, k) is the subset, order[k, n) the rest
    std::vector<double> counts(A * bins, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t a = 0; a < A; ++a) counts[a * bins + pb.item_bins[order[i] * A + a]] += 1.0;
    }
    const double inv = 1.0 / static_cast<double>(k);
    auto cell_cost = [&](std::size_t cell, double count) {
      return std::abs(count * inv - pb.pool_mass[cell]);
    };
    double current = distance_from_counts(pb, counts, k);
    if (k < n) {
      std::uniform_int_distribution<std::size_t> pick_in(0, k - 1), pick_out(k, n - 1);
      const std::size_t proposals = options.swaps_per_item * n;
      for (std::size_t step = 0; step < proposals && current > 0.0; ++step) {
        const std::size_t pi = pick_in(rng), po = pick_out(rng);
        const std::size_t leave = order[pi], enter = order[po];
        double delta = 0.0;
        for (std::size_t a = 0; a < A; ++a) {
          const std::size_t bl = a * bins + pb.item_bins[leave * A + a];
          const std::size_t be = a * bins + pb.item_bins[enter * A + a];
          if (bl == be) continue;
          delta += cell_cost(bl, counts[bl] - 1) - cell_cost(bl, counts[bl]);
          delta += cell_cost(be, counts[be] + 1) - cell_cost(be, counts[be]);
        }
        if (delta < -1e-12) {
          for (std::size_t a = 0; a < A; ++a) {
            counts[a * bins + pb.item_bins[leave * A + a]] -= 1.0;
            counts[a * bins + pb.item_bins[enter * A + a]] += 1.0;
          }
          std::swap(order[pi], order[po]);
          current = distance_from_counts(pb, counts, k);
        }
      }
    }
    SampleResult& r = results[trial];
    r.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(r.indices.begin(), r.indices.end());
    r.distance = current;
  });

  std::size_t best = 0;
  for (std::size_t t = 1; t < trials; ++t) {
    if (results[t].distance < results[best].distance) best = t;
  }
  return results[best];
}

}  // namespace cgiqa
