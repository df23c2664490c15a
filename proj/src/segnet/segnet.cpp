#include "pmt/segnet/segnet.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "pmt/core/error.hpp"
#include "pmt/core/random.hpp"
#include "pmt/gradcore/ops.hpp"

namespace pmt::segnet {
namespace {

std::size_t conv_params(std::size_t in, std::size_t out, std::size_t k) {
  return in * out * k * k + out;
}

std::size_t width(const SegNetConfig& c, int level) {
  return static_cast<std::size_t>(c.base_filters) << level;
}

template <typename T>
void add_conv(BasicParamSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
              std::size_t k, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in * k * k));
  std::vector<T> w(out * in * k * k);
  for (T& v : w) v = static_cast<T>(uniform(rng, -bound, bound));
  params.add(name + ".weight", BasicTensor<T>(Shape{out, in, k, k}, std::move(w), true));
  params.add(name + ".bias", BasicTensor<T>::zeros(Shape{out}, true));
}

template <typename T>
BasicTensor<T> conv(const BasicParamSet<T>& params, const std::string& name,
                    const BasicTensor<T>& x) {
  const BasicTensor<T>& w = params.at(name + ".weight");
  return conv2d(x, w, params.at(name + ".bias"), 1, w.dim(2) / 2);
}

template <typename T>
BasicTensor<T> block(const BasicParamSet<T>& params, const std::string& name,
                     const BasicTensor<T>& x) {
  BasicTensor<T> h = relu(conv(params, name + ".conv1", x));
  return relu(conv(params, name + ".conv2", h));
}

}  // namespace

void SegNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model.in_channels must be >= 1");
  if (base_filters < 1) throw ConfigError("model.base_filters must be >= 1");
  if (depth < 1 || depth > 8) throw ConfigError("model.depth must be in [1, 8]");
  if (out_channels < 1) throw ConfigError("model.out_channels must be >= 1");
}

std::size_t parameter_count(const SegNetConfig& c) {
  c.validate();
  std::size_t n = conv_params(c.in_channels, width(c, 0), 3) + conv_params(width(c, 0), width(c, 0), 3);
  for (int l = 1; l <= c.depth; ++l) {
    n += conv_params(width(c, l - 1), width(c, l), 3) + conv_params(width(c, l), width(c, l), 3);
  }
  for (int l = 0; l < c.depth; ++l) {
    n += conv_params(width(c, l + 1) + width(c, l), width(c, l), 3) +
         conv_params(width(c, l), width(c, l), 3);
  }
  return n + conv_params(width(c, 0), c.out_channels, 1);
}

template <typename T>
BasicParamSet<T> init_params(const SegNetConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(mix_seed(seed, 0x5e6e7));
  BasicParamSet<T> p;
  add_conv(p, "enc0.conv1", c.in_channels, width(c, 0), 3, rng);
  add_conv(p, "enc0.conv2", width(c, 0), width(c, 0), 3, rng);
  for (int l = 1; l <= c.depth; ++l) {
    const std::string name = "enc" + std::to_string(l);
    add_conv(p, name + ".conv1", width(c, l - 1), width(c, l), 3, rng);
    add_conv(p, name + ".conv2", width(c, l), width(c, l), 3, rng);
  }
  for (int l = c.depth - 1; l >= 0; --l) {
    const std::string name = "dec" + std::to_string(l);
    add_conv(p, name + ".conv1", width(c, l + 1) + width(c, l), width(c, l), 3, rng);
    add_conv(p, name + ".conv2", width(c, l), width(c, l), 3, rng);
  }
  add_conv(p, "head", width(c, 0), c.out_channels, 1, rng);
  return p;
}

template <typename T>
BasicTensor<T> forward(const SegNetConfig& c, const BasicParamSet<T>& params,
                       const BasicTensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != static_cast<std::size_t>(c.in_channels)) {
    throw ShapeError("segnet input must be [N," + std::to_string(c.in_channels) +
                     ",H,W], got " + shape_str(x.shape()));
  }
  const std::size_t factor = c.downsample_factor();
  if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
    throw ShapeError("segnet spatial dims " + shape_str(x.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  std::vector<BasicTensor<T>> skips;
  BasicTensor<T> h = block(params, "enc0", x);
  for (int l = 1; l <= c.depth; ++l) {
    skips.push_back(h);
    h = block(params, "enc" + std::to_string(l), maxpool2x(h));
  }
  for (int l = c.depth - 1; l >= 0; --l) {
    h = concat(std::vector<BasicTensor<T>>{upsample2x(h), skips[l]}, 1);
    h = block(params, "dec" + std::to_string(l), h);
  }
  return sigmoid(conv(params, "head", h));
}

template BasicParamSet<float> init_params<float>(const SegNetConfig&, std::uint64_t);
template BasicParamSet<double> init_params<double>(const SegNetConfig&, std::uint64_t);
template BasicTensor<float> forward<float>(const SegNetConfig&, const BasicParamSet<float>&,
                                           const BasicTensor<float>&);
template BasicTensor<double> forward<double>(const SegNetConfig&, const BasicParamSet<double>&,
                                             const BasicTensor<double>&);

}  // namespace pmt::segnet
