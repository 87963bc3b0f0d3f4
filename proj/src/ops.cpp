#include "cgiqa/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cgiqa/error.hpp"

namespace cgiqa::ops {
namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, k, kh, kw, oh, ow;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, Conv2dSpec spec) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (weight.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, got " + std::to_string(input.dim(1)));
  }
  if (spec.stride == 0) throw DimensionError("conv2d: stride must be positive");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3),
                 weight.dim(0), weight.dim(2), weight.dim(3), 0, 0};
  if (g.h + 2 * spec.padding < g.kh || g.w + 2 * spec.padding < g.kw) {
    throw DimensionError("conv2d: kernel larger than padded input " +
                         shape_string(input.shape()));
  }
  g.oh = (g.h + 2 * spec.padding - g.kh) / spec.stride + 1;
  g.ow = (g.w + 2 * spec.padding - g.kw) / spec.stride + 1;
  return g;
}

// Range [lo, hi) of output positions whose tap `j` lands inside [0, extent).
std::pair<std::size_t, std::size_t> valid_outputs(std::size_t out, std::size_t extent,
                                                  std::size_t tap, Conv2dSpec spec) {
  // in = o*stride + tap - padding must satisfy 0 <= in < extent
  const long long s = static_cast<long long>(spec.stride);
  const long long off = static_cast<long long>(tap) - static_cast<long long>(spec.padding);
  long long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long long hi_incl = (static_cast<long long>(extent) - 1 - off);
  long long hi = hi_incl < 0 ? 0 : hi_incl / s + 1;
  lo = std::min<long long>(lo, static_cast<long long>(out));
  hi = std::min<long long>(hi, static_cast<long long>(out));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void require_nchw(const Tensor& t, const char* what) {
  require_rank(t, 4, what);
  if (t.dim(2) == 0 || t.dim(3) == 0) {
    throw DimensionError(std::string(what) + ": empty spatial extent " +
                         shape_string(t.shape()));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(input, weight, spec);
  if (bias.size() != g.k) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias.size()) +
                         " != output channels " + std::to_string(g.k));
  }
  Tensor out({g.n, g.k, g.oh, g.ow});
  const auto x = input.data();
  const auto wt = weight.data();
  auto y = out.data();
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t k = 0; k < g.k; ++k) {
      double* yp = y.data() + (n * g.k + k) * plane;
      std::fill(yp, yp + plane, bias[k]);
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* xp = x.data() + (n * g.c + c) * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
          const auto [oh_lo, oh_hi] = valid_outputs(g.oh, g.h, i, spec);
          for (std::size_t j = 0; j < g.kw; ++j) {
            const double wv = wt[((k * g.c + c) * g.kh + i) * g.kw + j];
            if (wv == 0.0) continue;
            const auto [ow_lo, ow_hi] = valid_outputs(g.ow, g.w, j, spec);
            for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::size_t ih = oh * spec.stride + i - spec.padding;
              const double* xrow = xp + ih * g.w;
              double* yrow = yp + oh * g.ow;
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                yrow[ow] += wv * xrow[ow * spec.stride + j - spec.padding];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& grad_out, Conv2dSpec spec) {
  const ConvGeometry g = conv_geometry(input, weight, spec);
  if (grad_out.shape() != Shape{g.n, g.k, g.oh, g.ow}) {
    throw DimensionError("conv2d_backward: grad shape " + shape_string(grad_out.shape()));
  }
  Conv2dGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Tensor({g.k})};
  const auto x = input.data();
  const auto wt = weight.data();
  const auto dy = grad_out.data();
  auto dx = grads.input.data();
  auto dw = grads.weight.data();
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t k = 0; k < g.k; ++k) {
      const double* dyp = dy.data() + (n * g.k + k) * plane;
      double bsum = 0.0;
      for (std::size_t p = 0; p < plane; ++p) bsum += dyp[p];
      grads.bias[k] += bsum;
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* xp = x.data() + (n * g.c + c) * g.h * g.w;
        double* dxp = dx.data() + (n * g.c + c) * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
          const auto [oh_lo, oh_hi] = valid_outputs(g.oh, g.h, i, spec);
          for (std::size_t j = 0; j < g.kw; ++j) {
            const std::size_t widx = ((k * g.c + c) * g.kh + i) * g.kw + j;
            const double wv = wt[widx];
            const auto [ow_lo, ow_hi] = valid_outputs(g.ow, g.w, j, spec);
            double wacc = 0.0;
            for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::size_t ih = oh * spec.stride + i - spec.padding;
              const double* xrow = xp + ih * g.w;
              double* dxrow = dxp + ih * g.w;
              const double* dyrow = dyp + oh * g.ow;
              for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                const std::size_t iw = ow * spec.stride + j - spec.padding;
                wacc += xrow[iw] * dyrow[ow];
                dxrow[iw] += wv * dyrow[ow];
              }
            }
            dw[widx] += wacc;
          }
        }
      }
    }
  }
  return grads;
}

namespace {

std::size_t window_start(std::size_t i, std::size_t in, std::size_t out) {
  return (i * in) / out;
}
std::size_t window_end(std::size_t i, std::size_t in, std::size_t out) {
  return ((i + 1) * in + out - 1) / out;
}

}  // namespace

Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w) {
  require_nchw(input, "adaptive_avg_pool");
  if (out_h == 0 || out_w == 0) {
    throw DimensionError("adaptive_avg_pool: target size must be positive");
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out({n, c, out_h, out_w});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < out_h; ++i) {
        const std::size_t r0 = window_start(i, h, out_h), r1 = window_end(i, h, out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const std::size_t c0 = window_start(j, w, out_w), c1 = window_end(j, w, out_w);
          double acc = 0.0;
          for (std::size_t r = r0; r < r1; ++r) {
            for (std::size_t q = c0; q < c1; ++q) acc += input.at(b, ch, r, q);
          }
          out.at(b, ch, i, j) = acc / static_cast<double>((r1 - r0) * (c1 - c0));
        }
      }
    }
  }
  return out;
}

Tensor adaptive_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  require_rank(grad_out, 4, "adaptive_avg_pool_backward");
  if (input_shape.size() != 4 || input_shape[0] != grad_out.dim(0) ||
      input_shape[1] != grad_out.dim(1)) {
    throw DimensionError("adaptive_avg_pool_backward: incompatible shapes");
  }
  const std::size_t h = input_shape[2], w = input_shape[3];
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  Tensor dx(input_shape);
  for (std::size_t b = 0; b < input_shape[0]; ++b) {
    for (std::size_t ch = 0; ch < input_shape[1]; ++ch) {
      for (std::size_t i = 0; i < out_h; ++i) {
        const std::size_t r0 = window_start(i, h, out_h), r1 = window_end(i, h, out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const std::size_t c0 = window_start(j, w, out_w), c1 = window_end(j, w, out_w);
          const double g =
              grad_out.at(b, ch, i, j) / static_cast<double>((r1 - r0) * (c1 - c0));
          for (std::size_t r = r0; r < r1; ++r) {
            for (std::size_t q = c0; q < c1; ++q) dx.at(b, ch, r, q) += g;
          }
        }
      }
    }
  }
  return dx;
}

Tensor global_avg_pool(const Tensor& input) {
  require_nchw(input, "global_avg_pool");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  Tensor out({n, c, 1, 1});
  const auto x = input.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
    out[i] = acc / static_cast<double>(plane);
  }
  return out;
}

Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out) {
  if (input_shape.size() != 4 || grad_out.size() != input_shape[0] * input_shape[1]) {
    throw DimensionError("global_avg_pool_backward: incompatible shapes");
  }
  const std::size_t plane = input_shape[2] * input_shape[3];
  Tensor dx(input_shape);
  auto d = dx.data();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double g = grad_out[i] / static_cast<double>(plane);
    std::fill(d.begin() + static_cast<std::ptrdiff_t>(i * plane),
              d.begin() + static_cast<std::ptrdiff_t>((i + 1) * plane), g);
  }
  return dx;
}

MaxPoolResult global_max_pool(const Tensor& input) {
  require_nchw(input, "global_max_pool");
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  MaxPoolResult res{Tensor({n, c, 1, 1}), std::vector<std::size_t>(n * c)};
  const auto x = input.data();
  for (std::size_t i = 0; i < n * c; ++i) {
    std::size_t best = i * plane;
    for (std::size_t p = 1; p < plane; ++p) {
      if (x[i * plane + p] > x[best]) best = i * plane + p;
    }
    res.output[i] = x[best];
    res.argmax[i] = best;
  }
  return res;
}

Tensor global_max_pool_backward(const Shape& input_shape,
                                std::span<const std::size_t> argmax,
                                const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) {
    throw DimensionError("global_max_pool_backward: argmax/grad length mismatch");
  }
  Tensor dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += grad_out[i];
  return dx;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "linear input");
  require_rank(weight, 2, "linear weight");
  const std::size_t n = input.dim(0), d = input.dim(1), e = weight.dim(1);
  if (weight.dim(0) != d || bias.size() != e) {
    throw DimensionError("linear: input " + shape_string(input.shape()) + ", weight " +
                         shape_string(weight.shape()) + ", bias " +
                         shape_string(bias.shape()));
  }
  Tensor out({n, e});
  for (std::size_t r = 0; r < n; ++r) {
    double* yrow = out.data().data() + r * e;
    for (std::size_t j = 0; j < e; ++j) yrow[j] = bias[j];
    for (std::size_t k = 0; k < d; ++k) {
      const double xv = input[r * d + k];
      if (xv == 0.0) continue;
      const double* wrow = weight.data().data() + k * e;
      for (std::size_t j = 0; j < e; ++j) yrow[j] += xv * wrow[j];
    }
  }
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& grad_out) {
  require_rank(input, 2, "linear_backward input");
  const std::size_t n = input.dim(0), d = input.dim(1), e = weight.dim(1);
  if (grad_out.shape() != Shape{n, e} || weight.dim(0) != d) {
    throw DimensionError("linear_backward: grad shape " + shape_string(grad_out.shape()));
  }
  LinearGrads g{Tensor(input.shape()), Tensor(weight.shape()), Tensor({e})};
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyrow = grad_out.data().data() + r * e;
    for (std::size_t j = 0; j < e; ++j) g.bias[j] += dyrow[j];
    for (std::size_t k = 0; k < d; ++k) {
      const double xv = input[r * d + k];
      const double* wrow = weight.data().data() + k * e;
      double* dwrow = g.weight.data().data() + k * e;
      double acc = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        acc += wrow[j] * dyrow[j];
        dwrow[j] += xv * dyrow[j];
      }
      g.input[r * d + k] = acc;
    }
  }
  return g;
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor dx(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) dx[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return dx;
}

Tensor sigmoid(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double v = input[i];
    if (v >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  return out;
}

Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out) {
  require_same_shape(output, grad_out, "sigmoid_backward");
  Tensor dx(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) {
    dx[i] = grad_out[i] * output[i] * (1.0 - output[i]);
  }
  return dx;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  out += b;
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  require_rank(first, 4, "concat_channels");
  std::size_t channels = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 4, "concat_channels");
    if (p.dim(0) != first.dim(0) || p.dim(2) != first.dim(2) || p.dim(3) != first.dim(3)) {
      throw DimensionError("concat_channels: " + shape_string(p.shape()) + " vs " +
                           shape_string(first.shape()));
    }
    channels += p.dim(1);
  }
  const std::size_t n = first.dim(0);
  const std::size_t plane = first.dim(2) * first.dim(3);
  Tensor out({n, channels, first.dim(2), first.dim(3)});
  auto y = out.data();
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t offset = b * channels * plane;
    for (const Tensor& p : parts) {
      const std::size_t block = p.dim(1) * plane;
      const auto src = p.data().subspan(b * block, block);
      std::copy(src.begin(), src.end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += block;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& joined,
                                   std::span<const std::size_t> channels) {
  require_rank(joined, 4, "split_channels");
  std::size_t total = 0;
  for (std::size_t c : channels) total += c;
  if (total != joined.dim(1)) {
    throw DimensionError("split_channels: channel counts sum to " + std::to_string(total) +
                         ", tensor has " + std::to_string(joined.dim(1)));
  }
  const std::size_t n = joined.dim(0);
  const std::size_t plane = joined.dim(2) * joined.dim(3);
  std::vector<Tensor> parts;
  parts.reserve(channels.size());
  for (std::size_t c : channels) parts.emplace_back(Shape{n, c, joined.dim(2), joined.dim(3)});
  const auto x = joined.data();
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t offset = b * total * plane;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::size_t block = channels[i] * plane;
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(offset), block,
                  parts[i].data().begin() + static_cast<std::ptrdiff_t>(b * block));
      offset += block;
    }
  }
  return parts;
}

Tensor mul_broadcast(const Tensor& a, const Tensor& b) {
  require_rank(b, 4, "mul_broadcast");
  if (a.size() != b.dim(0) * b.dim(1)) {
    throw DimensionError("mul_broadcast: gate " + shape_string(a.shape()) +
                         " does not match " + shape_string(b.shape()));
  }
  const std::size_t plane = b.dim(2) * b.dim(3);
  Tensor out(b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t p = 0; p < plane; ++p) out[i * plane + p] = a[i] * b[i * plane + p];
  }
  return out;
}

MulGrads mul_broadcast_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out) {
  require_same_shape(b, grad_out, "mul_broadcast_backward");
  const std::size_t plane = b.dim(2) * b.dim(3);
  MulGrads g{Tensor(a.shape()), Tensor(b.shape())};
  for (std::size_t i = 0; i < a.size(); ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      acc += grad_out[i * plane + p] * b[i * plane + p];
      g.b[i * plane + p] = grad_out[i * plane + p] * a[i];
    }
    g.a[i] = acc;
  }
  return g;
}

double mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size()) {
    throw DimensionError("mse_loss: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) throw DimensionError("mse_loss: empty batch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.size());
}

Tensor mse_loss_backward(const Tensor& pred, const Tensor& target) {
  if (pred.size() != target.size() || pred.empty()) {
    throw DimensionError("mse_loss_backward: length mismatch");
  }
  Tensor g(pred.shape());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) g[i] = scale * (pred[i] - target[i]);
  return g;
}

}  // namespace cgiqa::ops
