#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cgiqa/tensor.hpp"

// Differentiable primitives. Each forward has a matching *_backward that maps
// the gradient of a scalar loss w.r.t. the output onto the inputs.
namespace cgiqa::ops {

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// Cross-correlation. input [N,C,H,W], weight [K,C,kh,kw], bias [K].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              Conv2dSpec spec = {});
Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& grad_out, Conv2dSpec spec = {});

// Output cell (i,j) averages rows [floor(i*H/oh), ceil((i+1)*H/oh)) and the
// analogous columns.
Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_h, std::size_t out_w);
Tensor adaptive_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& grad_out);

struct MaxPoolResult {
  Tensor output;
  // Flat input offset of the winning element per (n, c); first in scan order.
  std::vector<std::size_t> argmax;
};
MaxPoolResult global_max_pool(const Tensor& input);
Tensor global_max_pool_backward(const Shape& input_shape,
                                std::span<const std::size_t> argmax,
                                const Tensor& grad_out);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

// input [N,D], weight [D,E], bias [E] -> [N,E]
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
LinearGrads linear_backward(const Tensor& input, const Tensor& weight,
                            const Tensor& grad_out);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

Tensor sigmoid(const Tensor& input);
// Takes the sigmoid *output*.
Tensor sigmoid_backward(const Tensor& output, const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);

Tensor concat_channels(std::span<const Tensor> parts);
std::vector<Tensor> split_channels(const Tensor& joined,
                                   std::span<const std::size_t> channels);

struct MulGrads {
  Tensor a;
  Tensor b;
};

// a [N,C,1,1] broadcast over the spatial axes of b [N,C,H,W].
Tensor mul_broadcast(const Tensor& a, const Tensor& b);
MulGrads mul_broadcast_backward(const Tensor& a, const Tensor& b, const Tensor& grad_out);

// (1/m) * sum (pred - target)^2 over vectors of equal length m >= 1.
double mse_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss_backward(const Tensor& pred, const Tensor& target);

}  // namespace cgiqa::ops
