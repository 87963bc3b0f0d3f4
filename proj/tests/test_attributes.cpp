#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cgiqa/attributes.hpp"
#include "cgiqa/error.hpp"
#include "cgiqa/image.hpp"
#include "cgiqa/rng.hpp"
#include "test_util.hpp"

using cgiqa::testing::TempDir;

using namespace cgiqa;

namespace {

Image constant_image(std::size_t w, std::size_t h, std::uint8_t r, std::uint8_t g,
                     std::uint8_t b) {
  Image img(w, h);
  for (std::size_t i = 0; i < w * h; ++i) {
    img.rgb[3 * i] = r;
    img.rgb[3 * i + 1] = g;
    img.rgb[3 * i + 2] = b;
  }
  return img;
}

Image random_image(std::size_t w, std::size_t h, Rng& rng) {
  Image img(w, h);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& v : img.rgb) v = static_cast<std::uint8_t>(d(rng));
  return img;
}

AttributeVector random_attrs(Rng& rng) {
  return {uniform(rng, 0, 1), uniform(rng, 0, 0.5), uniform(rng, 0, 120), uniform(rng, 0, 1),
          uniform(rng, 0, 2)};
}

double oracle_distance(const std::vector<AttributeVector>& pool,
                       const std::vector<std::size_t>& subset, std::size_t bins) {
  double total = 0.0;
  for (std::size_t a = 0; a < AttributeVector::kCount; ++a) {
    double lo = 1e300, hi = -1e300;
    for (const auto& v : pool) {
      lo = std::min(lo, v.values()[a]);
      hi = std::max(hi, v.values()[a]);
    }
    auto bin_of = [&](double x) -> std::size_t {
      if (hi == lo) return 0;
      for (std::size_t b = 0; b + 1 < bins; ++b) {
        if (x < lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(bins)) return b;
      }
      return bins - 1;
    };
    std::vector<double> p(bins, 0.0), q(bins, 0.0);
    for (const auto& v : pool) p[bin_of(v.values()[a])] += 1.0 / static_cast<double>(pool.size());
    for (std::size_t i : subset) {
      q[bin_of(pool[i].values()[a])] += 1.0 / static_cast<double>(subset.size());
    }
    for (std::size_t b = 0; b < bins; ++b) total += std::abs(p[b] - q[b]);
  }
  return total;
}

}  // namespace

TEST(Attributes, BlackImage) {
  const AttributeVector a = compute_attributes(constant_image(16, 16, 0, 0, 0));
  EXPECT_EQ(a.light, 0.0);
  EXPECT_EQ(a.contrast, 0.0);
  EXPECT_EQ(a.colorfulness, 0.0);
  EXPECT_EQ(a.si, 0.0);
  EXPECT_EQ(a.blur, 1.0);
}

TEST(Attributes, PureRedColorfulness) {
  const AttributeVector a = compute_attributes(constant_image(12, 9, 255, 0, 0));
  EXPECT_NEAR(a.colorfulness, 0.3 * std::sqrt(255.0 * 255.0 + 127.5 * 127.5), 1e-9);
  EXPECT_NEAR(a.colorfulness, 85.53, 5e-3);
}

TEST(Attributes, CheckerboardLightAndContrast) {
  Image img(10, 10);
  for (std::size_t y = 0; y < 10; ++y) {
    for (std::size_t x = 0; x < 10; ++x) {
      const std::uint8_t v = (x + y) % 2 ? 255 : 0;
      std::fill(img.pixel(x, y), img.pixel(x, y) + 3, v);
    }
  }
  const AttributeVector a = compute_attributes(img);
  EXPECT_NEAR(a.light, 0.5, 1e-12);
  EXPECT_NEAR(a.contrast, 0.5, 1e-12);
  EXPECT_LT(a.blur, 0.1);
}

TEST(Attributes, RejectsSmallOrMalformedRasters) {
  EXPECT_THROW(compute_attributes(constant_image(7, 16, 1, 2, 3)), ValidationError);
  EXPECT_THROW(compute_attributes(Image{}), ValidationError);
  Image bad(8, 8);
  bad.rgb.pop_back();
  EXPECT_THROW(compute_attributes(bad), ValidationError);
}

TEST(Attributes, RangesOnRandomImages) {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const AttributeVector a = compute_attributes(random_image(8 + i, 9 + 2 * i, rng));
    for (double v : a.values()) EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(a.light, 0.0);
    EXPECT_LE(a.light, 1.0);
    EXPECT_GE(a.contrast, 0.0);
    EXPECT_GE(a.colorfulness, 0.0);
    EXPECT_GT(a.blur, 0.0);
    EXPECT_LE(a.blur, 1.0);
    EXPECT_GE(a.si, 0.0);
  }
}

TEST(Attributes, HorizontalFlipInvariance) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const Image img = random_image(17, 13, rng);
    const AttributeVector a = compute_attributes(img);
    const AttributeVector b = compute_attributes(flip_horizontal(img));
    EXPECT_NEAR(a.light, b.light, 1e-12);
    EXPECT_NEAR(a.contrast, b.contrast, 1e-12);
    EXPECT_NEAR(a.colorfulness, b.colorfulness, 1e-9);
    EXPECT_NEAR(a.si, b.si, 1e-9);
    EXPECT_NEAR(a.blur, b.blur, 1e-9);
  }
}

TEST(Attributes, BoxFilterMonotonicity) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    const Image img = random_image(24, 20, rng);
    const AttributeVector before = compute_attributes(img);
    const AttributeVector after = compute_attributes(box_filter3(img));
    EXPECT_GE(after.blur, before.blur) << "image " << i;
    EXPECT_LE(after.si, before.si) << "image " << i;
  }
}

TEST(Histograms, BinIndexEdges) {
  EXPECT_EQ(bin_index(0.0, 0.0, 1.0, 4), 0u);
  EXPECT_EQ(bin_index(0.25, 0.0, 1.0, 4), 1u);
  EXPECT_EQ(bin_index(1.0, 0.0, 1.0, 4), 3u);
  EXPECT_EQ(bin_index(0.7, 0.7, 0.7, 4), 0u);
}

TEST(Histograms, SingleItemHasUnitMassInOneBin) {
  const auto set = attribute_histograms({AttributeVector{0.3, 0.1, 10, 0.5, 0.2}}, 10);
  for (const auto& h : set.histograms) {
    EXPECT_EQ(h.edges.size(), 11u);
    EXPECT_EQ(std::count(h.mass.begin(), h.mass.end(), 1.0), 1);
  }
}

TEST(Histograms, TwoLightValuesSplitEvenly) {
  std::vector<AttributeVector> pool(2);
  pool[0].light = 0.2;
  pool[1].light = 0.8;
  const auto set = attribute_histograms(pool, 2);
  EXPECT_EQ(set.histograms[0].name, "light");
  EXPECT_EQ(set.histograms[0].mass, (std::vector<double>{0.5, 0.5}));
}

TEST(Histograms, MassSumsToOne) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AttributeVector> pool;
    const std::size_t n = 1 + trial * 7;
    for (std::size_t i = 0; i < n; ++i) pool.push_back(random_attrs(rng));
    const auto set = attribute_histograms(pool, 1 + trial % 12);
    for (const auto& h : set.histograms) {
      EXPECT_NEAR(std::accumulate(h.mass.begin(), h.mass.end(), 0.0), 1.0, 1e-9);
    }
  }
}

TEST(Histograms, Errors) {
  EXPECT_THROW(attribute_histograms({}, 10), ValidationError);
  EXPECT_THROW(attribute_histograms({AttributeVector{}}, 0), ValidationError);
}

TEST(Sampler, DistanceMatchesOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AttributeVector> pool;
    for (int i = 0; i < 40; ++i) pool.push_back(random_attrs(rng));
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < pool.size(); i += 1 + trial % 4) subset.push_back(i);
    EXPECT_NEAR(subset_distance(pool, subset, 10), oracle_distance(pool, subset, 10), 1e-12);
  }
}

TEST(Sampler, FullPoolHasZeroDistance) {
  Rng rng(1);
  std::vector<AttributeVector> pool;
  for (int i = 0; i < 30; ++i) pool.push_back(random_attrs(rng));
  const SampleResult r = match_sample(pool, pool.size());
  EXPECT_EQ(r.distance, 0.0);
  std::vector<std::size_t> all(pool.size());
  std::iota(all.begin(), all.end(), 0);
  EXPECT_EQ(r.indices, all);
}

TEST(Sampler, TwoIdenticalClustersReachNearZero) {
  std::vector<AttributeVector> pool;
  Rng rng(4);
  std::vector<AttributeVector> cluster;
  for (int i = 0; i < 20; ++i) cluster.push_back(random_attrs(rng));
  pool.insert(pool.end(), cluster.begin(), cluster.end());
  pool.insert(pool.end(), cluster.begin(), cluster.end());
  const SampleResult r = match_sample(pool, 20, {.seed = 7});
  EXPECT_LT(r.distance, 0.05);
  EXPECT_NEAR(r.distance, oracle_distance(pool, r.indices, 10), 1e-12);
}

TEST(Sampler, BeatsRandomBaselineMedian) {
  Rng rng(17);
  std::vector<AttributeVector> pool;
  for (int i = 0; i < 200; ++i) pool.push_back(random_attrs(rng));
  const std::size_t k = 50;
  const SampleResult r = match_sample(pool, k, {.seed = 2});
  std::vector<double> baseline;
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int t = 0; t < 100; ++t) {
    std::shuffle(idx.begin(), idx.end(), rng);
    baseline.push_back(oracle_distance(pool, {idx.begin(), idx.begin() + k}, 10));
  }
  std::nth_element(baseline.begin(), baseline.begin() + 50, baseline.end());
  EXPECT_LE(r.distance, baseline[50]);
}

TEST(Sampler, DeterministicAndThreadIndependent) {
  Rng rng(8);
  std::vector<AttributeVector> pool;
  for (int i = 0; i < 60; ++i) pool.push_back(random_attrs(rng));
  const SampleResult a = match_sample(pool, 15, {.seed = 99});
  const SampleResult b = match_sample(pool, 15, {.seed = 99});
  const SampleResult c = match_sample(pool, 15, {.seed = 99, .threads = 3});
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.distance, b.distance);
  EXPECT_EQ(a.indices, c.indices);
  EXPECT_EQ(a.indices.size(), 15u);
  EXPECT_TRUE(std::is_sorted(a.indices.begin(), a.indices.end()));
  EXPECT_EQ(std::adjacent_find(a.indices.begin(), a.indices.end()), a.indices.end());
}

TEST(Sampler, Errors) {
  std::vector<AttributeVector> pool(5);
  EXPECT_THROW(match_sample(pool, 6), ValidationError);
  EXPECT_THROW(match_sample(pool, 0), ValidationError);
  EXPECT_THROW(match_sample({}, 1), ValidationError);
  EXPECT_THROW(subset_distance(pool, {7}, 10), ValidationError);
}

TEST(ImageIo, RoundTripsLosslessFormats) {
  TempDir dir("img");
  Rng rng(2);
  const Image img = random_image(13, 11, rng);
  for (const char* ext : {".png", ".ppm"}) {
    const auto path = dir.path() / (std::string("img") + ext);
    save_image(path, img);
    EXPECT_EQ(load_image(path), img) << ext;
  }
  EXPECT_EQ(decode_ppm(encode_ppm(img)), img);
  EXPECT_EQ(image_content_type("a.JPG"), "image/jpeg");
  EXPECT_EQ(image_content_type("a.png"), "image/png");
  EXPECT_EQ(image_content_type("a.txt"), "");
}

TEST(ImageIo, JpegIsCloseToSource) {
  TempDir dir("img");
  const Image img = constant_image(16, 16, 200, 100, 50);
  const auto path = dir.path() / "c.jpg";
  save_image(path, img);
  const Image back = load_image(path);
  ASSERT_EQ(back.width, 16u);
  ASSERT_EQ(back.height, 16u);
  for (std::size_t i = 0; i < back.rgb.size(); ++i) {
    EXPECT_NEAR(back.rgb[i], img.rgb[i], 4);
  }
}

TEST(ImageIo, MissingOrCorruptFilesThrow) {
  TempDir dir("img");
  EXPECT_THROW(load_image(dir.path() / "nope.png"), IoError);
  EXPECT_THROW(decode_ppm("P6\n2 2\n255\nab"), IoError);
  EXPECT_THROW(load_image(dir.path() / "x.bmp"), IoError);
}

TEST(ImageOps, ResizeAndCrop) {
  Rng rng(6);
  const Tensor t = image_to_tensor(random_image(10, 8, rng));
  EXPECT_EQ(t.shape(), (Shape{3, 8, 10}));
  EXPECT_EQ(resize_bilinear(t, 8, 10), t);
  const Tensor c = center_crop(t, 6);
  EXPECT_EQ(c.shape(), (Shape{3, 6, 6}));
  EXPECT_EQ(c[0], t[1 * 10 + 2]);
  EXPECT_THROW(crop(t, 4, 0, 6), DimensionError);
  const Tensor up = resize_bilinear(image_to_tensor(constant_image(4, 4, 51, 51, 51)), 9, 7);
  for (double v : up.data()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(ImageOps, GaussianBlurPreservesConstantsAndReducesDetail) {
  const Image flat = constant_image(12, 12, 90, 30, 10);
  EXPECT_EQ(gaussian_blur(flat, 2.0), flat);
  Rng rng(12);
  const Image img = random_image(32, 32, rng);
  EXPECT_EQ(gaussian_blur(img, 0.0), img);
  double prev = compute_attributes(img).blur;
  for (double s : {0.5, 1.0, 2.0, 3.0}) {
    const double b = compute_attributes(gaussian_blur(img, s)).blur;
    EXPECT_GT(b, prev);
    prev = b;
  }
}
