#include "cgiqa/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cgiqa/error.hpp"
#include "cgiqa/attributes.hpp"

namespace cgiqa {
namespace {

std::string numbered(char prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%03zu", prefix, i);
  return buf;
}

double to_grid(double v) { return std::clamp(std::round(v * 10.0) / 10.0, 0.0, 5.0); }

}  // namespace

SyntheticPanel make_panel(const PanelSpec& spec) {
  if (spec.subjects == 0 || spec.stimuli == 0) throw ConfigError("panel needs subjects and stimuli");
  Rng rng(spec.seed);
  SyntheticPanel panel;
  panel.true_quality.resize(spec.stimuli);
  for (std::size_t j = 0; j < spec.stimuli; j += 2) {
    const double q = uniform(rng, spec.quality_low, spec.quality_high);
    panel.true_quality[j] = q;
    if (j + 1 < spec.stimuli) panel.true_quality[j + 1] = 5.0 - q;
  }
  std::vector<double> panel_mean(spec.stimuli, 0.0);
  std::int64_t clock = 0;
  for (std::size_t i = 0; i < spec.subjects; ++i) {
    const double bias = normal(rng, 0.0, spec.bias_std);
    const double gain = uniform(rng, spec.gain_low, spec.gain_high);
    for (std::size_t j = 0; j < spec.stimuli; ++j) {
      const double r = to_grid(2.5 + gain * (panel.true_quality[j] - 2.5) + bias +
                               normal(rng, 0.0, spec.noise_std));
      panel_mean[j] += r / static_cast<double>(spec.subjects);
      panel.records.push_back({numbered('u', i), numbered('s', j), r, ++clock});
    }
  }
  if (spec.inverse_rater) {
    for (std::size_t j = 0; j < spec.stimuli; ++j) {
      panel.records.push_back(
          {numbered('u', spec.subjects), numbered('s', j), to_grid(5.0 - panel_mean[j]), ++clock});
    }
  }
  return panel;
}

Image random_scene(std::size_t width, std::size_t height, Rng& rng) {
  Image img(width, height);
  double base[3], ramp[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = uniform(rng, 20.0, 235.0);
    ramp[c] = uniform(rng, -60.0, 60.0);
  }
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double t = (static_cast<double>(x) + static_cast<double>(y)) /
                       static_cast<double>(width + height);
      for (int c = 0; c < 3; ++c) {
        img.pixel(x, y)[c] = static_cast<std::uint8_t>(std::clamp(base[c] + ramp[c] * t, 0.0, 255.0));
      }
    }
  }
  const int shapes = 6 + static_cast<int>(uniform(rng, 0.0, 8.0));
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  for (int s = 0; s < shapes; ++s) {
    std::uint8_t color[3];
    for (auto& c : color) c = static_cast<std::uint8_t>(uniform(rng, 0.0, 256.0));
    const int kind = static_cast<int>(uniform(rng, 0.0, 3.0));
    const double cx = uniform(rng, 0.0, w), cy = uniform(rng, 0.0, h);
    const double rx = uniform(rng, 0.05, 0.3) * w, ry = uniform(rng, 0.05, 0.3) * h;
    const double period = uniform(rng, 3.0, 10.0);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        bool inside = false;
        if (kind == 0) {
          inside = std::abs(dx) < rx && std::abs(dy) < ry;
        } else if (kind == 1) {
          inside = (dx * dx) / (rx * rx) + (dy * dy) / (ry * ry) < 1.0;
        } else {
          inside = std::abs(dy) < ry &&
                   std::fmod(static_cast<double>(x) + 1000.0 * period, period) < period / 2;
        }
        if (inside) std::copy(color, color + 3, img.pixel(x, y));
      }
    }
  }
  return img;
}

Image random_mosaic(std::size_t size, std::size_t cell, Rng& rng) {
  if (cell == 0) throw ConfigError("mosaic cell size must be positive");
  Image img(size, size);
  for (std::size_t by = 0; by < size; by += cell) {
    for (std::size_t bx = 0; bx < size; bx += cell) {
      std::uint8_t colour[3];
      for (auto& v : colour) v = static_cast<std::uint8_t>(uniform(rng, 0.0, 256.0));
      for (std::size_t y = by; y < std::min(size, by + cell); ++y) {
        for (std::size_t x = bx; x < std::min(size, bx + cell); ++x) {
          std::copy(colour, colour + 3, img.pixel(x, y));
        }
      }
    }
  }
  return img;
}

BlurSet make_blur_set(const BlurSetSpec& spec) {
  if (spec.count == 0 || spec.size < 8) throw ConfigError("blur set needs images of at least 8x8");
  Rng rng(spec.seed);
  BlurSet set;
  for (std::size_t i = 0; i < spec.count; ++i) {
    const double sigma = uniform(rng, 0.0, spec.max_sigma);
    set.images.push_back(gaussian_blur(random_mosaic(spec.size, spec.cell, rng), sigma));
    set.sigma.push_back(sigma);
    set.mos.push_back(spec.mos_sharp + spec.mos_per_sigma * sigma);
  }
  return set;
}

AestheticSet make_aesthetic_set(std::size_t count, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  AestheticSet set;
  for (std::size_t i = 0; i < count; ++i) {
    set.images.push_back(random_scene(size, size, rng));
    set.scores.push_back(5.0 * compute_attributes(set.images.back()).light);
  }
  return set;
}

}  // namespace cgiqa
