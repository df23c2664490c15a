// conv2d forward/backward on top of the row-pointer kernels.
//
// Stride-1 convolutions address the zero-padded input directly: the window
// row for reduction index (c, ky, kx) at output row oy is a contiguous run of
// the padded plane, so no im2col buffer is needed. The input gradient of a
// stride-1 convolution is itself a stride-1 convolution of the padded output
// gradient with the spatially flipped, channel-transposed kernel. Other
// strides fall back to an explicit im2col/col2im.

#include <algorithm>
#include <string>
#include <vector>

#include "op_support.hpp"
#include "pmt/gradcore/ops.hpp"

namespace pmt {

using detail::make_result;
using detail::Node;
using detail::parent_grad;

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w;  // input
  std::size_t f, k;        // filters, kernel extent
  std::size_t stride, pad;
  std::size_t oh, ow;      // output
  std::size_t ph() const { return h + 2 * pad; }
  std::size_t pw() const { return w + 2 * pad; }
  std::size_t ckk() const { return c * k * k; }
  bool direct() const { return stride == 1; }
};

template <typename T>
ConvGeometry check_conv(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                        const BasicTensor<T>& bias, std::size_t stride,
                        std::size_t padding) {
  if (input.rank() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_str(input.shape()));
  if (weight.rank() != 4) throw ShapeError("conv2d weight must be [F,C,k,k], got " + shape_str(weight.shape()));
  ConvGeometry g{};
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.f = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = padding;
  if (weight.dim(1) != g.c) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(g.c) +
                     ", weight expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != g.k || g.k % 2 == 0) {
    throw ShapeError("conv2d kernel must be square with odd extent, got " + shape_str(weight.shape()));
  }
  if (bias.shape() != Shape{g.f}) {
    throw ShapeError("conv2d bias must be [" + std::to_string(g.f) + "], got " + shape_str(bias.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
  if (g.ph() < g.k || g.pw() < g.k) {
    throw ShapeError("conv2d produces zero-size output for input " + shape_str(input.shape()));
  }
  g.oh = (g.ph() - g.k) / stride + 1;
  g.ow = (g.pw() - g.k) / stride + 1;
  return g;
}

// Copies one sample [C,H,W] into a zero-padded [C,H+2p,W+2p] buffer.
template <typename T>
void pad_sample(const T* src, std::size_t c, std::size_t h, std::size_t w, std::size_t p,
                std::vector<T>& dst) {
  const std::size_t ph = h + 2 * p, pw = w + 2 * p;
  dst.assign(c * ph * pw, T(0));
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      std::copy_n(src + (ch * h + y) * w, w, dst.data() + (ch * ph + y + p) * pw + p);
    }
  }
}

// Window row pointers into a padded buffer for output row oy (stride 1):
// rows[(c*k + ky)*k + kx] = &padded[c][oy + ky][kx].
template <typename T>
void window_rows(const T* padded, std::size_t c, std::size_t ph, std::size_t pw, std::size_t k,
                 std::size_t oy, const T** rows) {
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      const T* base = padded + (ch * ph + oy + ky) * pw;
      for (std::size_t kx = 0; kx < k; ++kx) *rows++ = base + kx;
    }
  }
}

// cols[(c*k+ky)*k+kx][oy*ow+ox] = padded[c][oy*s+ky][ox*s+kx]
template <typename T>
void im2col(const T* padded, const ConvGeometry& g, std::vector<T>& cols) {
  const std::size_t ohw = g.oh * g.ow;
  cols.resize(g.ckk() * ohw);
  for (std::size_t ch = 0; ch < g.c; ++ch) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* dst = cols.data() + ((ch * g.k + ky) * g.k + kx) * ohw;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const T* src = padded + (ch * g.ph() + oy * g.stride + ky) * g.pw() + kx;
          for (std::size_t ox = 0; ox < g.ow; ++ox) dst[oy * g.ow + ox] = src[ox * g.stride];
        }
      }
    }
  }
}

// Forward correlation of one padded sample into out [F, oh*ow] (accumulating).
template <typename T>
void correlate_sample(const T* padded, const T* weight, const ConvGeometry& g, T* out,
                      std::vector<const T*>& rows, std::vector<T>& cols) {
  const auto& k = kernels::active<T>();
  const std::size_t ckk = g.ckk();
  if (g.direct()) {
    rows.resize(ckk);
    for (std::size_t oy = 0; oy < g.oh; ++oy) {
      window_rows(padded, g.c, g.ph(), g.pw(), g.k, oy, rows.data());
      k.gemm_rows(g.f, g.ow, ckk, weight, ckk, rows.data(), out + oy * g.ow, g.oh * g.ow);
    }
  } else {
    im2col(padded, g, cols);
    const std::size_t ohw = g.oh * g.ow;
    rows.resize(ckk);
    for (std::size_t p = 0; p < ckk; ++p) rows[p] = cols.data() + p * ohw;
    k.gemm_rows(g.f, ohw, ckk, weight, ckk, rows.data(), out, ohw);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = check_conv(input, weight, bias, stride, padding);
  const auto& xv = input.node()->value;
  const auto& wv = weight.node()->value;
  const auto& bv = bias.node()->value;
  const std::size_t ohw = g.oh * g.ow;

  std::vector<T> out(g.n * g.f * ohw);
  std::vector<T> padded, cols;
  std::vector<const T*> rows;
  for (std::size_t s = 0; s < g.n; ++s) {
    T* o = out.data() + s * g.f * ohw;
    for (std::size_t f = 0; f < g.f; ++f) std::fill_n(o + f * ohw, ohw, bv[f]);
    pad_sample(xv.data() + s * g.c * g.h * g.w, g.c, g.h, g.w, g.pad, padded);
    correlate_sample(padded.data(), wv.data(), g, o, rows, cols);
  }

  Shape shape{g.n, g.f, g.oh, g.ow};
  return make_result<T>(std::move(shape), std::move(out), "conv2d", {&input, &weight, &bias},
                        [g](Node<T>& self) {
    const auto& k = kernels::active<T>();
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    const auto& gv = self.grad;
    const std::size_t ohw = g.oh * g.ow;
    const std::size_t ckk = g.ckk();
    std::vector<T>* gx = parent_grad(self, 0);
    std::vector<T>* gw = parent_grad(self, 1);
    std::vector<T>* gb = parent_grad(self, 2);

    if (gb) {
      for (std::size_t s = 0; s < g.n; ++s) {
        for (std::size_t f = 0; f < g.f; ++f) {
          (*gb)[f] += static_cast<T>(k.sum(gv.data() + (s * g.f + f) * ohw, ohw));
        }
      }
    }

    std::vector<T> padded, cols;
    std::vector<const T*> rows;
    if (gw) {
      for (std::size_t s = 0; s < g.n; ++s) {
        const T* gs = gv.data() + s * g.f * ohw;
        pad_sample(xv.data() + s * g.c * g.h * g.w, g.c, g.h, g.w, g.pad, padded);
        if (g.direct()) {
          rows.resize(g.oh * ckk);
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            window_rows(padded.data(), g.c, g.ph(), g.pw(), g.k, oy, rows.data() + oy * ckk);
          }
          k.corr_rows(g.f, ckk, g.oh, g.ow, gs, ohw, g.ow, rows.data(), gw->data());
        } else {
          im2col(padded.data(), g, cols);
          rows.resize(ckk);
          for (std::size_t p = 0; p < ckk; ++p) rows[p] = cols.data() + p * ohw;
          k.corr_rows(g.f, ckk, 1, ohw, gs, ohw, 0, rows.data(), gw->data());
        }
      }
    }

    if (!gx) return;
    const std::size_t hw = g.h * g.w;
    if (g.direct() && g.pad + 1 <= g.k) {
      // Transposed geometry: F input channels, C filters, padding k-1-p.
      ConvGeometry t{};
      t.n = 1;
      t.c = g.f;
      t.h = g.oh;
      t.w = g.ow;
      t.f = g.c;
      t.k = g.k;
      t.stride = 1;
      t.pad = g.k - 1 - g.pad;
      t.oh = g.h;
      t.ow = g.w;
      const std::size_t kk = g.k * g.k;
      std::vector<T> flipped(g.c * g.f * kk);
      for (std::size_t f = 0; f < g.f; ++f) {
        for (std::size_t c = 0; c < g.c; ++c) {
          for (std::size_t q = 0; q < kk; ++q) {
            flipped[(c * g.f + f) * kk + (kk - 1 - q)] = wv[(f * g.c + c) * kk + q];
          }
        }
      }
      for (std::size_t s = 0; s < g.n; ++s) {
        pad_sample(gv.data() + s * g.f * ohw, g.f, g.oh, g.ow, t.pad, padded);
        correlate_sample(padded.data(), flipped.data(), t, gx->data() + s * g.c * hw, rows, cols);
      }
    } else {
      // dcols[p][j] = sum_f W[f][p] * grad[f][j], then scatter back (col2im).
      std::vector<T> wt(ckk * g.f);
      for (std::size_t f = 0; f < g.f; ++f) {
        for (std::size_t p = 0; p < ckk; ++p) wt[p * g.f + f] = wv[f * ckk + p];
      }
      std::vector<T> dcols(ckk * ohw);
      rows.resize(g.f);
      for (std::size_t s = 0; s < g.n; ++s) {
        const T* gs = gv.data() + s * g.f * ohw;
        for (std::size_t f = 0; f < g.f; ++f) rows[f] = gs + f * ohw;
        std::fill(dcols.begin(), dcols.end(), T(0));
        k.gemm_rows(ckk, ohw, g.f, wt.data(), g.f, rows.data(), dcols.data(), ohw);
        T* dx = gx->data() + s * g.c * hw;
        for (std::size_t c = 0; c < g.c; ++c) {
          for (std::size_t ky = 0; ky < g.k; ++ky) {
            for (std::size_t kx = 0; kx < g.k; ++kx) {
              const T* src = dcols.data() + ((c * g.k + ky) * g.k + kx) * ohw;
              for (std::size_t oy = 0; oy < g.oh; ++oy) {
                const std::size_t py = oy * g.stride + ky;
                if (py < g.pad || py >= g.pad + g.h) continue;
                for (std::size_t ox = 0; ox < g.ow; ++ox) {
                  const std::size_t px = ox * g.stride + kx;
                  if (px < g.pad || px >= g.pad + g.w) continue;
                  dx[(c * g.h + py - g.pad) * g.w + px - g.pad] += src[oy * g.ow + ox];
                }
              }
            }
          }
        }
      }
    }
  });
}

template BasicTensor<float> conv2d<float>(const BasicTensor<float>&, const BasicTensor<float>&,
                                          const BasicTensor<float>&, std::size_t, std::size_t);
template BasicTensor<double> conv2d<double>(const BasicTensor<double>&, const BasicTensor<double>&,
                                            const BasicTensor<double>&, std::size_t, std::size_t);

}  // namespace pmt
