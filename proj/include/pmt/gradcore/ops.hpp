#pragma once

// Differentiable tensor operations.
//
// Elementwise binary ops accept either exactly matching shapes or a rank-0
// operand, which broadcasts. Anything else throws ShapeError. Every op checks
// its result for NaN/Inf and throws NumericError if one appears.
//
// Image tensors are NCHW.

#include <cstddef>
#include <vector>

#include "pmt/gradcore/tensor.hpp"

namespace pmt {

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, T s);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, T s);
// s - a
template <typename T> BasicTensor<T> rsub(T s, const BasicTensor<T>& a);

// a^e elementwise. Non-integer exponents need a > 0.
template <typename T> BasicTensor<T> pow(const BasicTensor<T>& a, T e);
template <typename T> BasicTensor<T> exp(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> neg(const BasicTensor<T>& a);
// Gradient is zero where the value was clipped.
template <typename T> BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi);

// Full reductions to a rank-0 tensor.
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
// Sums over every axis but the first: [N, ...] -> [N].
template <typename T> BasicTensor<T> sum_rows(const BasicTensor<T>& a);

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis);
// Half-open range [begin, end) along `axis`.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, std::size_t begin,
                     std::size_t end);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);

// 1 where a > threshold, else 0. Not differentiable; the result is a constant.
template <typename T> BasicTensor<T> threshold(const BasicTensor<T>& a, T thr);

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
// Nearest-neighbour 2x upsampling of NCHW.
template <typename T> BasicTensor<T> upsample2x(const BasicTensor<T>& a);
// 2x2/2 max pooling of NCHW with even H, W. Ties go to the first element in
// scan order.
template <typename T> BasicTensor<T> maxpool2x(const BasicTensor<T>& a);

// Cross-correlation. input [N,C,H,W], weight [F,C,k,k] (k odd), bias [F].
// Output [N,F,(H+2p-k)/s+1,(W+2p-k)/s+1].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride,
                      std::size_t padding);

template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, const BasicTensor<T>& b) { return add(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a, const BasicTensor<T>& b) { return sub(a, b); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, const BasicTensor<T>& b) { return mul(a, b); }
template <typename T>
BasicTensor<T> operator/(const BasicTensor<T>& a, const BasicTensor<T>& b) { return div(a, b); }
template <typename T>
BasicTensor<T> operator-(const BasicTensor<T>& a) { return neg(a); }
template <typename T>
BasicTensor<T> operator+(const BasicTensor<T>& a, T s) { return add(a, s); }
template <typename T>
BasicTensor<T> operator*(const BasicTensor<T>& a, T s) { return mul(a, s); }
template <typename T>
BasicTensor<T> operator*(T s, const BasicTensor<T>& a) { return mul(a, s); }
template <typename T>
BasicTensor<T> operator-(T s, const BasicTensor<T>& a) { return rsub(s, a); }

}  // namespace pmt
