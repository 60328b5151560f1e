// Copyright 2026 The dafe-fd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <limits>
#include <new>
#include <string>
#include <vector>

namespace dafe {

// (batch, channels, height, width). All dimensions are >= 1.
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// Dense 4-D array of doubles stored row-major in (N, C, H, W) order, with an
// optional gradient buffer of identical shape.
//
// Storage is 64-byte aligned so that vectorized kernels see the same
// alignment, and therefore sum in the same order, on every call.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  Buffer& values() { return data_; }
  const Buffer& values() const { return data_; }

  std::size_t index(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w +
           w;
  }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const {
    return data_[index(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const { return !grad_.empty(); }
  void ensure_grad();
  void zero_grad();
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  void fill(double v);
  double sum() const;

 private:
  Shape shape_{};
  Buffer data_;
  Buffer grad_;
};

// Convolution parameters. The operation is a cross-correlation (the kernel
// is not flipped): out[n,o,y,x] = bias[o] + sum_{c,i,j} w[o,c,i,j] *
// in[n, c, y*stride - pad + i*dilation, x*stride - pad + j*dilation], with
// zero padding outside the input.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  Tensor weights;             // (out, in, kh, kw)
  std::vector<double> bias;   // length out

  static ConvSpec make(int in, int out, int kernel, int stride = 1,
                       int padding = 0, int dilation = 1);

  // Throws unless the spec is self-consistent.
  void validate() const;
  // Output shape for `in`; throws ShapeError when the kernel does not fit.
  Shape output_shape(const Shape& in) const;
};

Tensor conv2d(const Tensor& input, const ConvSpec& spec);

struct ConvGrads {
  Tensor input_grad;
  Tensor weight_grad;
  std::vector<double> bias_grad;
};

// With `need_input_grad == false` the returned input_grad is empty.
ConvGrads conv2d_backward(const Tensor& input, const ConvSpec& spec,
                          const Tensor& upstream_grad,
                          bool need_input_grad = true);

// 2x2 max pooling with stride 2. Odd sizes are padded with -inf on the
// bottom/right, so the output is ceil(H/2) x ceil(W/2).
Tensor maxpool2(const Tensor& input);
// Routes each upstream value to the first (row-major) argmax of its window.
Tensor maxpool2_backward(const Tensor& input, const Tensor& upstream_grad);

// Align-corners bilinear interpolation: src = dst * (in - 1) / (out - 1).
Tensor bilinear_upsample(const Tensor& input, int out_h, int out_w);
Tensor bilinear_upsample_backward(const Tensor& upstream_grad, int in_h,
                                  int in_w);

Tensor concat_channels(std::span<const Tensor* const> inputs);
Tensor concat_channels(std::initializer_list<const Tensor*> inputs);
std::vector<Tensor> concat_channels_backward(const Tensor& upstream_grad,
                                             std::span<const int> channels);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& upstream_grad);

Tensor add(const Tensor& a, const Tensor& b);
void add_inplace(Tensor& a, const Tensor& b);
// a + alpha * b
Tensor scale_add(const Tensor& a, const Tensor& b, double alpha);

// While alive, records on this thread every piecewise decision taken by
// relu (sign), maxpool2 (argmax) and anything reporting through
// note_kink_decision, as a running hash. Two evaluations with equal
// fingerprints ran on the same smooth piece. Used to keep finite-difference
// checks from straddling kinks.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t fingerprint() const { return hash_; }
  void reset() { hash_ = kSeed; }

 private:
  static constexpr std::uint64_t kSeed = 1469598103934665603ull;
  std::uint64_t hash_ = kSeed;
  std::uint64_t* previous_;
};

// Folds a decision into the active KinkMonitor, if any.
void note_kink_decision(std::uint64_t decision);

// Reflect-pads the bottom/right so both spatial dims are multiples of `m`.
Tensor pad_to_multiple(const Tensor& input, int m);

}  // namespace dafe
