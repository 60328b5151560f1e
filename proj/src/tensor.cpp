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

#include "dafe/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dafe/error.hpp"

namespace dafe {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

void check_shape(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError("tensor dimensions must be >= 1, got " + to_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(detail::concat(op, ": shape mismatch ", to_string(a),
                                    " vs ", to_string(b)));
  }
}

bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 &&
         spec.padding == 0;
}

// Unfolds one image (C, H, W) into a (C*kh*kw, Ho*Wo) column matrix.
void im2col(const double* image, const Shape& in, const ConvSpec& spec,
            int out_h, int out_w, double* col) {
  const int kh = spec.kernel_h;
  const int kw = spec.kernel_w;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < in.c; ++c) {
    const double* src = image + static_cast<std::size_t>(c) * in.h * in.w;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* dst = col + ((static_cast<std::size_t>(c) * kh + i) * kw + j) *
                                plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int y = oy * spec.stride - spec.padding + i * spec.dilation;
          double* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (y < 0 || y >= in.h) {
            std::fill(row, row + out_w, 0.0);
            continue;
          }
          const double* src_row = src + static_cast<std::size_t>(y) * in.w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int x = ox * spec.stride - spec.padding + j * spec.dilation;
            row[ox] = (x >= 0 && x < in.w) ? src_row[x] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a column matrix back onto an image.
void col2im(const double* col, const Shape& in, const ConvSpec& spec,
            int out_h, int out_w, double* image) {
  const int kh = spec.kernel_h;
  const int kw = spec.kernel_w;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < in.c; ++c) {
    double* dst = image + static_cast<std::size_t>(c) * in.h * in.w;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* src =
            col + ((static_cast<std::size_t>(c) * kh + i) * kw + j) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int y = oy * spec.stride - spec.padding + i * spec.dilation;
          if (y < 0 || y >= in.h) continue;
          const double* row = src + static_cast<std::size_t>(oy) * out_w;
          double* dst_row = dst + static_cast<std::size_t>(y) * in.w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int x = ox * spec.stride - spec.padding + j * spec.dilation;
            if (x >= 0 && x < in.w) dst_row[x] += row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::string to_string(const Shape& s) {
  return detail::concat(s.n, "x", s.c, "x", s.h, "x", s.w);
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  check_shape(shape_);
  data_.assign(shape_.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), data_(values.begin(), values.end()) {
  check_shape(shape_);
  if (data_.size() != shape_.numel()) {
    throw ShapeError(detail::concat("tensor of shape ", to_string(shape_),
                                    " needs ", shape_.numel(),
                                    " values, got ", data_.size()));
  }
}

void Tensor::ensure_grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
}

void Tensor::zero_grad() {
  std::fill(grad_.begin(), grad_.end(), 0.0);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Tensor::sum() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0);
}

ConvSpec ConvSpec::make(int in, int out, int kernel, int stride, int padding,
                        int dilation) {
  ConvSpec spec;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.kernel_h = kernel;
  spec.kernel_w = kernel;
  spec.stride = stride;
  spec.padding = padding;
  spec.dilation = dilation;
  spec.weights = Tensor(Shape{out, in, kernel, kernel});
  spec.bias.assign(static_cast<std::size_t>(out), 0.0);
  return spec;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1 || kernel_h < 1 || kernel_w < 1 ||
      stride < 1 || padding < 0 || dilation < 1) {
    throw ValueError(detail::concat(
        "invalid conv spec: in=", in_channels, " out=", out_channels,
        " kernel=", kernel_h, "x", kernel_w, " stride=", stride,
        " padding=", padding, " dilation=", dilation));
  }
  const Shape expected{out_channels, in_channels, kernel_h, kernel_w};
  if (!(weights.shape() == expected) || weights.empty()) {
    throw ShapeError("conv weights have shape " + to_string(weights.shape()) +
                     ", expected " + to_string(expected));
  }
  if (bias.size() != static_cast<std::size_t>(out_channels)) {
    throw ShapeError(detail::concat("conv bias has length ", bias.size(),
                                    ", expected ", out_channels));
  }
}

Shape ConvSpec::output_shape(const Shape& in) const {
  if (in.c != in_channels) {
    throw ShapeError(detail::concat("conv2d: input ", to_string(in), " has ",
                                    in.c, " channels, weights ",
                                    to_string(weights.shape()), " expect ",
                                    in_channels));
  }
  const int ext_h = dilation * (kernel_h - 1) + 1;
  const int ext_w = dilation * (kernel_w - 1) + 1;
  if (ext_h > in.h + 2 * padding || ext_w > in.w + 2 * padding) {
    throw ShapeError(detail::concat(
        "conv2d: effective kernel ", ext_h, "x", ext_w,
        " exceeds padded input of ", to_string(in), " (padding ", padding,
        ")"));
  }
  return Shape{in.n, out_channels, (in.h + 2 * padding - ext_h) / stride + 1,
               (in.w + 2 * padding - ext_w) / stride + 1};
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec) {
  spec.validate();
  const Shape in = input.shape();
  const Shape out = spec.output_shape(in);
  Tensor result(out);

  const int k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const int p = out.h * out.w;
  ConstMatrixMap weights(spec.weights.data().data(), spec.out_channels, k);
  Buffer col;
  if (!is_pointwise(spec)) col.resize(static_cast<std::size_t>(k) * p);

  const std::size_t in_stride = static_cast<std::size_t>(in.c) * in.h * in.w;
  const std::size_t out_stride = static_cast<std::size_t>(out.c) * p;
  for (int n = 0; n < in.n; ++n) {
    const double* src = input.data().data() + n * in_stride;
    if (!col.empty()) {
      im2col(src, in, spec, out.h, out.w, col.data());
      src = col.data();
    }
    MatrixMap dst(result.data().data() + n * out_stride, spec.out_channels,
                  p);
    dst.noalias() = weights * ConstMatrixMap(src, k, p);
    for (int o = 0; o < spec.out_channels; ++o) {
      dst.row(o).array() += spec.bias[static_cast<std::size_t>(o)];
    }
  }
  return result;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvSpec& spec,
                          const Tensor& upstream_grad, bool need_input_grad) {
  spec.validate();
  const Shape in = input.shape();
  const Shape out = spec.output_shape(in);
  require_same(upstream_grad.shape(), out, "conv2d_backward");

  ConvGrads grads;
  grads.weight_grad = Tensor(spec.weights.shape());
  grads.bias_grad.assign(static_cast<std::size_t>(spec.out_channels), 0.0);
  if (need_input_grad) grads.input_grad = Tensor(in);

  const int k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  const int p = out.h * out.w;
  const bool pointwise = is_pointwise(spec);
  ConstMatrixMap weights(spec.weights.data().data(), spec.out_channels, k);
  MatrixMap weight_grad(grads.weight_grad.data().data(), spec.out_channels, k);
  Buffer col;
  std::vector<double> col_grad;
  if (!pointwise) {
    col.resize(static_cast<std::size_t>(k) * p);
    if (need_input_grad) col_grad.resize(col.size());
  }

  const std::size_t in_stride = static_cast<std::size_t>(in.c) * in.h * in.w;
  const std::size_t out_stride = static_cast<std::size_t>(out.c) * p;
  for (int n = 0; n < in.n; ++n) {
    const double* src = input.data().data() + n * in_stride;
    if (!pointwise) {
      im2col(src, in, spec, out.h, out.w, col.data());
      src = col.data();
    }
    ConstMatrixMap upstream(upstream_grad.data().data() + n * out_stride,
                            spec.out_channels, p);
    weight_grad.noalias() += upstream * ConstMatrixMap(src, k, p).transpose();
    for (int o = 0; o < spec.out_channels; ++o) {
      grads.bias_grad[static_cast<std::size_t>(o)] += upstream.row(o).sum();
    }
    if (!need_input_grad) continue;
    double* dst = grads.input_grad.data().data() + n * in_stride;
    if (pointwise) {
      MatrixMap(dst, k, p).noalias() = weights.transpose() * upstream;
    } else {
      MatrixMap(col_grad.data(), k, p).noalias() =
          weights.transpose() * upstream;
      col2im(col_grad.data(), in, spec, out.h, out.w, dst);
    }
  }
  return grads;
}

namespace {
thread_local std::uint64_t* g_kink_hash = nullptr;
}  // namespace

KinkMonitor::KinkMonitor() : previous_(g_kink_hash) { g_kink_hash = &hash_; }

KinkMonitor::~KinkMonitor() { g_kink_hash = previous_; }

void note_kink_decision(std::uint64_t decision) {
  if (g_kink_hash) *g_kink_hash = (*g_kink_hash ^ decision) * 1099511628211ull;
}

Tensor maxpool2(const Tensor& input) {
  const Shape in = input.shape();
  const Shape out{in.n, in.c, (in.h + 1) / 2, (in.w + 1) / 2};
  Tensor result(out);
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int oy = 0; oy < out.h; ++oy) {
        for (int ox = 0; ox < out.w; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          int arg = 0;
          for (int dy = 0; dy < 2; ++dy) {
            const int y = 2 * oy + dy;
            if (y >= in.h) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int x = 2 * ox + dx;
              if (x >= in.w) continue;
              const double v = input.at(n, c, y, x);
              if (v > best) {
                best = v;
                arg = 2 * dy + dx;
              }
            }
          }
          if (g_kink_hash) note_kink_decision(static_cast<std::uint64_t>(arg));
          result.at(n, c, oy, ox) = best;
        }
      }
    }
  }
  return result;
}

Tensor maxpool2_backward(const Tensor& input, const Tensor& upstream_grad) {
  const Shape in = input.shape();
  const Shape out{in.n, in.c, (in.h + 1) / 2, (in.w + 1) / 2};
  require_same(upstream_grad.shape(), out, "maxpool2_backward");
  Tensor grad(in);
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int oy = 0; oy < out.h; ++oy) {
        for (int ox = 0; ox < out.w; ++ox) {
          int best_y = -1;
          int best_x = -1;
          double best = -std::numeric_limits<double>::infinity();
          for (int dy = 0; dy < 2; ++dy) {
            const int y = 2 * oy + dy;
            if (y >= in.h) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int x = 2 * ox + dx;
              if (x >= in.w) continue;
              const double v = input.at(n, c, y, x);
              if (best_y < 0 || v > best) {
                best = v;
                best_y = y;
                best_x = x;
              }
            }
          }
          grad.at(n, c, best_y, best_x) += upstream_grad.at(n, c, oy, ox);
        }
      }
    }
  }
  return grad;
}

namespace {

struct LerpTap {
  int lo;
  int hi;
  double frac;
};

std::vector<LerpTap> lerp_taps(int in, int out) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(out));
  for (int d = 0; d < out; ++d) {
    if (in == 1 || out == 1) {
      taps[static_cast<std::size_t>(d)] = {0, 0, 0.0};
      continue;
    }
    const double src = static_cast<double>(d) * (in - 1) / (out - 1);
    int lo = static_cast<int>(src);
    lo = std::min(lo, in - 1);
    const int hi = std::min(lo + 1, in - 1);
    taps[static_cast<std::size_t>(d)] = {lo, hi, src - lo};
  }
  return taps;
}

}  // namespace

Tensor bilinear_upsample(const Tensor& input, int out_h, int out_w) {
  const Shape in = input.shape();
  if (out_h < in.h || out_w < in.w) {
    throw ShapeError(detail::concat("bilinear_upsample: cannot downsample ",
                                    to_string(in), " to ", out_h, "x",
                                    out_w));
  }
  const auto ty = lerp_taps(in.h, out_h);
  const auto tx = lerp_taps(in.w, out_w);
  Tensor result(Shape{in.n, in.c, out_h, out_w});
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int y = 0; y < out_h; ++y) {
        const LerpTap& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < out_w; ++x) {
          const LerpTap& b = tx[static_cast<std::size_t>(x)];
          const double top = input.at(n, c, a.lo, b.lo) * (1.0 - b.frac) +
                             input.at(n, c, a.lo, b.hi) * b.frac;
          const double bottom = input.at(n, c, a.hi, b.lo) * (1.0 - b.frac) +
                                input.at(n, c, a.hi, b.hi) * b.frac;
          result.at(n, c, y, x) = top * (1.0 - a.frac) + bottom * a.frac;
        }
      }
    }
  }
  return result;
}

Tensor bilinear_upsample_backward(const Tensor& upstream_grad, int in_h,
                                  int in_w) {
  const Shape up = upstream_grad.shape();
  if (up.h < in_h || up.w < in_w) {
    throw ShapeError(detail::concat("bilinear_upsample_backward: upstream ",
                                    to_string(up), " smaller than input ",
                                    in_h, "x", in_w));
  }
  const auto ty = lerp_taps(in_h, up.h);
  const auto tx = lerp_taps(in_w, up.w);
  Tensor grad(Shape{up.n, up.c, in_h, in_w});
  for (int n = 0; n < up.n; ++n) {
    for (int c = 0; c < up.c; ++c) {
      for (int y = 0; y < up.h; ++y) {
        const LerpTap& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < up.w; ++x) {
          const LerpTap& b = tx[static_cast<std::size_t>(x)];
          const double g = upstream_grad.at(n, c, y, x);
          grad.at(n, c, a.lo, b.lo) += g * (1.0 - a.frac) * (1.0 - b.frac);
          grad.at(n, c, a.lo, b.hi) += g * (1.0 - a.frac) * b.frac;
          grad.at(n, c, a.hi, b.lo) += g * a.frac * (1.0 - b.frac);
          grad.at(n, c, a.hi, b.hi) += g * a.frac * b.frac;
        }
      }
    }
  }
  return grad;
}

Tensor concat_channels(std::span<const Tensor* const> inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape first = inputs.front()->shape();
  int channels = 0;
  for (const Tensor* t : inputs) {
    const Shape s = t->shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: shape mismatch " + to_string(first) +
                       " vs " + to_string(s));
    }
    channels += s.c;
  }
  Tensor result(Shape{first.n, channels, first.h, first.w});
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
  double* dst = result.data().data();
  for (int n = 0; n < first.n; ++n) {
    for (const Tensor* t : inputs) {
      const std::size_t block = plane * t->c();
      const double* src = t->data().data() + n * block;
      dst = std::copy(src, src + block, dst);
    }
  }
  return result;
}

Tensor concat_channels(std::initializer_list<const Tensor*> inputs) {
  return concat_channels(std::span<const Tensor* const>(inputs.begin(),
                                                        inputs.size()));
}

std::vector<Tensor> concat_channels_backward(const Tensor& upstream_grad,
                                             std::span<const int> channels) {
  const Shape up = upstream_grad.shape();
  const int total = std::accumulate(channels.begin(), channels.end(), 0);
  if (total != up.c) {
    throw ShapeError(detail::concat("concat_channels_backward: upstream ",
                                    to_string(up), " has ", up.c,
                                    " channels, parts sum to ", total));
  }
  std::vector<Tensor> parts;
  parts.reserve(channels.size());
  for (int c : channels) parts.emplace_back(Shape{up.n, c, up.h, up.w});
  const std::size_t plane = static_cast<std::size_t>(up.h) * up.w;
  const double* src = upstream_grad.data().data();
  for (int n = 0; n < up.n; ++n) {
    for (Tensor& part : parts) {
      const std::size_t block = plane * part.c();
      std::copy(src, src + block, part.data().data() + n * block);
      src += block;
    }
  }
  return parts;
}

Tensor relu(const Tensor& input) {
  Tensor result(input.shape());
  auto src = input.data();
  auto dst = result.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
  if (g_kink_hash) {
    for (double v : src) note_kink_decision(v > 0.0 ? 1 : 2);
  }
  return result;
}

Tensor relu_backward(const Tensor& input, const Tensor& upstream_grad) {
  require_same(input.shape(), upstream_grad.shape(), "relu_backward");
  Tensor grad(input.shape());
  auto x = input.data();
  auto g = upstream_grad.data();
  auto dst = grad.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = x[i] > 0.0 ? g[i] : 0.0;
  return grad;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor result = a;
  add_inplace(result, b);
  return result;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same(a.shape(), b.shape(), "add");
  auto dst = a.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor scale_add(const Tensor& a, const Tensor& b, double alpha) {
  require_same(a.shape(), b.shape(), "scale_add");
  Tensor result = a;
  auto dst = result.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
  return result;
}

namespace {

int reflect(int i, int size) {
  if (size == 1) return 0;
  const int period = 2 * (size - 1);
  i %= period;
  return i < size ? i : period - i;
}

}  // namespace

Tensor pad_to_multiple(const Tensor& input, int m) {
  if (m < 1) throw ValueError("pad_to_multiple: multiple must be >= 1");
  const Shape in = input.shape();
  const int h = (in.h + m - 1) / m * m;
  const int w = (in.w + m - 1) / m * m;
  if (h == in.h && w == in.w) return input;
  Tensor result(Shape{in.n, in.c, h, w});
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      for (int y = 0; y < h; ++y) {
        const int sy = reflect(y, in.h);
        for (int x = 0; x < w; ++x) {
          result.at(n, c, y, x) = input.at(n, c, sy, reflect(x, in.w));
        }
      }
    }
  }
  return result;
}

}  // namespace dafe
