#pragma once

// Small 2D U-shaped encoder-decoder for binary segmentation.
//
// Layout for depth D and base width f (widths f_l = f * 2^l):
//   enc0:        conv3x3(in -> f_0), relu, conv3x3(f_0 -> f_0), relu
//   enc1..encD:  maxpool2x, conv3x3(f_{l-1} -> f_l), relu, conv3x3(f_l -> f_l), relu
//   dec(D-1..0): upsample2x, concat skip, conv3x3(f_{l+1} + f_l -> f_l), relu,
//                conv3x3(f_l -> f_l), relu
//   head:        conv1x1(f_0 -> out), sigmoid
// Every conv carries a bias. Spatial dims must be divisible by 2^D.
//
// Parameter count (conv(a->b, k) = a*b*k*k + b):
//   conv(in,f0,3) + conv(f0,f0,3)
//   + sum_{l=1..D}   [conv(f_{l-1},f_l,3) + conv(f_l,f_l,3)]
//   + sum_{l=0..D-1} [conv(f_{l+1}+f_l,f_l,3) + conv(f_l,f_l,3)]
//   + conv(f0,out,1)
// which is 29617 for the defaults (in=1, f=8, D=2, out=1).

#include <cstddef>
#include <cstdint>

#include "pmt/gradcore/param_set.hpp"
#include "pmt/gradcore/tensor.hpp"

namespace pmt::segnet {

struct SegNetConfig {
  int in_channels = 1;
  int base_filters = 8;
  int depth = 2;
  int out_channels = 1;

  void validate() const;
  std::size_t downsample_factor() const { return std::size_t{1} << depth; }
  bool operator==(const SegNetConfig&) const = default;
};

std::size_t parameter_count(const SegNetConfig& config);

// He-uniform conv weights (bound sqrt(6 / fan_in)), zero biases.
template <typename T>
BasicParamSet<T> init_params(const SegNetConfig& config, std::uint64_t seed);

// Per-pixel foreground probabilities [N, out, H, W] for input [N, in, H, W].
// Records a graph only when grad mode is on and parameters require grad.
template <typename T>
BasicTensor<T> forward(const SegNetConfig& config, const BasicParamSet<T>& params,
                       const BasicTensor<T>& x);

}  // namespace pmt::segnet
