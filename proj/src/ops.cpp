#include "ghostprobe/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace ghostprobe {

namespace {

using i64 = std::int64_t;

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const Mat<T>>;

std::size_t sz(i64 v) { return static_cast<std::size_t>(v); }

void require(bool ok, const std::string& message) {
  if (!ok) throw DimensionError(message);
}

i64 normalize_axis(i64 axis, i64 rank) {
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank, "axis out of range");
  return axis;
}

// Builds an op output; records the backward closure only when some input
// participates in the graph and recording is enabled.
template <typename T, typename Backward>
BasicTensor<T> make_result(const char* op, Shape shape, Buffer<T> data,
                           std::initializer_list<const BasicTensor<T>*> inputs, Backward&& fn) {
  BasicTensor<T> out(std::move(shape), std::move(data), false);
  auto& node = *out.node();
  node.op = op;
  bool needs_grad = false;
  for (const auto* in : inputs) needs_grad = needs_grad || in->requires_grad();
  if (needs_grad && grad_enabled()) {
    node.requires_grad = true;
    for (const auto* in : inputs) node.parents.push_back(in->node());
    node.backward_fn = std::forward<Backward>(fn);
  }
  return out;
}

template <typename T>
bool wants_grad(const TensorNode<T>& self, std::size_t parent) {
  return self.parents[parent]->requires_grad;
}

template <typename T>
void im2col(const T* x, i64 channels, i64 height, i64 width, i64 kh, i64 kw, int stride,
            int pad, i64 out_h, i64 out_w, T* cols) {
  for (i64 c = 0; c < channels; ++c) {
    for (i64 ki = 0; ki < kh; ++ki) {
      for (i64 kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * out_h * out_w;
        for (i64 oy = 0; oy < out_h; ++oy) {
          const i64 iy = oy * stride - pad + ki;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, T{0});
            continue;
          }
          const T* src = x + (c * height + iy) * width;
          for (i64 ox = 0; ox < out_w; ++ox) {
            const i64 ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, i64 channels, i64 height, i64 width, i64 kh, i64 kw, int stride,
                int pad, i64 out_h, i64 out_w, T* dx) {
  for (i64 c = 0; c < channels; ++c) {
    for (i64 ki = 0; ki < kh; ++ki) {
      for (i64 kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * out_h * out_w;
        for (i64 oy = 0; oy < out_h; ++oy) {
          const i64 iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= height) continue;
          T* dst = dx + (c * height + iy) * width;
          const T* src = row + oy * out_w;
          for (i64 ox = 0; ox < out_w; ++ox) {
            const i64 ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvLayer<T>& layer) {
  require(x.rank() == 4, "conv2d expects [B,C,H,W], got " + shape_str(x.shape()));
  const auto& w = layer.weight;
  require(w.rank() == 4, "conv2d weight must be [O,C,kh,kw]");
  const i64 batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  const i64 out_ch = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  require(w.dim(1) == channels, "conv2d channel mismatch: input " + std::to_string(channels) +
                                    ", weight " + shape_str(w.shape()));
  require(kh >= 1 && kh <= 3 && kw >= 1 && kw <= 3, "conv2d kernel must be 1..3");
  require(layer.bias.rank() == 1 && layer.bias.dim(0) == out_ch, "conv2d bias mismatch");
  const int stride = layer.stride, pad = layer.padding;
  require(stride >= 1 && pad >= 0, "conv2d invalid stride/padding");
  require(height + 2 * pad >= kh && width + 2 * pad >= kw, "conv2d input smaller than kernel");
  const i64 out_h = (height + 2 * pad - kh) / stride + 1;
  const i64 out_w = (width + 2 * pad - kw) / stride + 1;
  const i64 patch = channels * kh * kw, pixels = out_h * out_w;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  Buffer<T> out(sz(batch * out_ch * pixels));
  Buffer<T> cols(pointwise ? 0 : sz(patch * pixels));
  CMapMat<T> wm(w.data().data(), out_ch, patch);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(layer.bias.data().data(), out_ch);
  for (i64 b = 0; b < batch; ++b) {
    const T* xb = x.data().data() + b * channels * height * width;
    if (!pointwise) {
      im2col(xb, channels, height, width, kh, kw, stride, pad, out_h, out_w, cols.data());
    }
    CMapMat<T> cm(pointwise ? xb : cols.data(), patch, pixels);
    MapMat<T> ym(out.data() + b * out_ch * pixels, out_ch, pixels);
    ym.noalias() = wm * cm;
    ym.colwise() += bias;
  }

  return make_result<T>(
      "conv2d", Shape{batch, out_ch, out_h, out_w}, std::move(out), {&x, &layer.weight, &layer.bias},
      [=](TensorNode<T>& self) {
        const auto& xn = *self.parents[0];
        const auto& wn = *self.parents[1];
        Buffer<T> scratch(pointwise ? 0 : sz(patch * pixels));
        CMapMat<T> wmat(wn.data.data(), out_ch, patch);
        for (i64 b = 0; b < batch; ++b) {
          CMapMat<T> dy(self.grad.data() + b * out_ch * pixels, out_ch, pixels);
          const T* xb = xn.data.data() + b * channels * height * width;
          if (wants_grad(self, 1)) {
            if (!pointwise) {
              im2col(xb, channels, height, width, kh, kw, stride, pad, out_h, out_w,
                     scratch.data());
            }
            CMapMat<T> cm(pointwise ? xb : scratch.data(), patch, pixels);
            MapMat<T> dw(self.parents[1]->grad.data(), out_ch, patch);
            dw.noalias() += dy * cm.transpose();
          }
          if (wants_grad(self, 2)) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(self.parents[2]->grad.data(),
                                                               out_ch);
            db += dy.rowwise().sum();
          }
          if (wants_grad(self, 0)) {
            T* dxb = self.parents[0]->grad.data() + b * channels * height * width;
            if (pointwise) {
              MapMat<T> dx(dxb, patch, pixels);
              dx.noalias() += wmat.transpose() * dy;
            } else {
              MapMat<T> dcols(scratch.data(), patch, pixels);
              dcols.noalias() = wmat.transpose() * dy;
              col2im_add(scratch.data(), channels, height, width, kh, kw, stride, pad, out_h,
                         out_w, dxb);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> transpose_conv2x2(const BasicTensor<T>& x, const ConvLayer<T>& layer) {
  require(x.rank() == 4, "transpose_conv2x2 expects [B,C,H,W]");
  const auto& w = layer.weight;
  require(w.rank() == 4 && w.dim(2) == 2 && w.dim(3) == 2,
          "transpose_conv2x2 weight must be [C,O,2,2]");
  const i64 batch = x.dim(0), channels = x.dim(1), height = x.dim(2), width = x.dim(3);
  require(w.dim(0) == channels, "transpose_conv2x2 channel mismatch: input " +
                                    std::to_string(channels) + ", weight " + shape_str(w.shape()));
  const i64 out_ch = w.dim(1);
  require(layer.bias.rank() == 1 && layer.bias.dim(0) == out_ch, "transpose_conv2x2 bias mismatch");
  const i64 pixels = height * width, out_h = 2 * height, out_w = 2 * width;
  const i64 taps = out_ch * 4;

  Buffer<T> out(sz(batch * out_ch * out_h * out_w));
  Mat<T> y(taps, pixels);
  CMapMat<T> wm(w.data().data(), channels, taps);
  for (i64 b = 0; b < batch; ++b) {
    CMapMat<T> xm(x.data().data() + b * channels * pixels, channels, pixels);
    y.noalias() = wm.transpose() * xm;
    T* ob = out.data() + b * out_ch * out_h * out_w;
    for (i64 o = 0; o < out_ch; ++o) {
      const T bias = layer.bias.data()[sz(o)];
      for (i64 t = 0; t < 4; ++t) {
        const i64 di = t / 2, dj = t % 2;
        const T* src = y.data() + (o * 4 + t) * pixels;
        for (i64 i = 0; i < height; ++i) {
          T* dst = ob + (o * out_h + 2 * i + di) * out_w + dj;
          for (i64 j = 0; j < width; ++j) dst[2 * j] = src[i * width + j] + bias;
        }
      }
    }
  }

  return make_result<T>(
      "transpose_conv2x2", Shape{batch, out_ch, out_h, out_w}, std::move(out),
      {&x, &layer.weight, &layer.bias}, [=](TensorNode<T>& self) {
        Mat<T> dy(taps, pixels);
        CMapMat<T> wmat(self.parents[1]->data.data(), channels, taps);
        for (i64 b = 0; b < batch; ++b) {
          const T* gb = self.grad.data() + b * out_ch * out_h * out_w;
          for (i64 o = 0; o < out_ch; ++o) {
            for (i64 t = 0; t < 4; ++t) {
              const i64 di = t / 2, dj = t % 2;
              T* dst = dy.data() + (o * 4 + t) * pixels;
              for (i64 i = 0; i < height; ++i) {
                const T* src = gb + (o * out_h + 2 * i + di) * out_w + dj;
                for (i64 j = 0; j < width; ++j) dst[i * width + j] = src[2 * j];
              }
            }
          }
          if (wants_grad(self, 1)) {
            CMapMat<T> xm(self.parents[0]->data.data() + b * channels * pixels, channels, pixels);
            MapMat<T> dw(self.parents[1]->grad.data(), channels, taps);
            dw.noalias() += xm * dy.transpose();
          }
          if (wants_grad(self, 2)) {
            T* db = self.parents[2]->grad.data();
            for (i64 o = 0; o < out_ch; ++o) db[o] += dy.middleRows(o * 4, 4).sum();
          }
          if (wants_grad(self, 0)) {
            MapMat<T> dx(self.parents[0]->grad.data() + b * channels * pixels, channels, pixels);
            dx.noalias() += wmat * dy;
          }
        }
      });
}

template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x) {
  require(x.rank() == 4, "maxpool2x2 expects [B,C,H,W]");
  const i64 planes = x.dim(0) * x.dim(1), height = x.dim(2), width = x.dim(3);
  require(height % 2 == 0 && width % 2 == 0,
          "maxpool2x2 requires even spatial extents, got " + shape_str(x.shape()));
  const i64 oh = height / 2, ow = width / 2;
  Buffer<T> out(sz(planes * oh * ow));
  std::vector<std::int32_t> argmax(out.size());
  const T* xd = x.data().data();
  for (i64 p = 0; p < planes; ++p) {
    for (i64 i = 0; i < oh; ++i) {
      for (i64 j = 0; j < ow; ++j) {
        const i64 base = (p * height + 2 * i) * width + 2 * j;
        const i64 cand[4] = {base, base + 1, base + width, base + width + 1};
        i64 best = cand[0];
        for (int t = 1; t < 4; ++t) {
          if (xd[cand[t]] > xd[best]) best = cand[t];
        }
        const i64 o = (p * oh + i) * ow + j;
        out[sz(o)] = xd[best];
        argmax[sz(o)] = static_cast<std::int32_t>(best);
      }
    }
  }
  return make_result<T>("maxpool2x2", Shape{x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                        [argmax = std::move(argmax)](TensorNode<T>& self) {
                          T* dx = self.parents[0]->grad.data();
                          for (std::size_t o = 0; o < argmax.size(); ++o) {
                            dx[argmax[o]] += self.grad[o];
                          }
                        });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  Buffer<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v < T{0} ? T{0} : v;  // NaN passes through
  return make_result<T>("relu", x.shape(), std::move(out), {&x}, [](TensorNode<T>& self) {
    const auto& in = self.parents[0]->data;
    auto& dx = self.parents[0]->grad;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > T{0}) dx[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  Buffer<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    // Branch keeps exp() from overflowing for large |v|.
    out[i] = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  }
  return make_result<T>("sigmoid", x.shape(), std::move(out), {&x}, [](TensorNode<T>& self) {
    auto& dx = self.parents[0]->grad;
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T s = self.data[i];
      dx[i] += self.grad[i] * s * (T{1} - s);
    }
  });
}

template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b, std::int64_t axis) {
  require(a.rank() == b.rank(), "concat rank mismatch");
  axis = normalize_axis(axis, a.rank());
  Shape shape = a.shape();
  for (i64 d = 0; d < a.rank(); ++d) {
    require(d == axis || a.dim(d) == b.dim(d), "concat extent mismatch: " + shape_str(a.shape()) +
                                                   " vs " + shape_str(b.shape()));
  }
  shape[sz(axis)] += b.dim(axis);
  i64 outer = 1, inner = 1;
  for (i64 d = 0; d < axis; ++d) outer *= a.dim(d);
  for (i64 d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  const i64 ca = a.dim(axis) * inner, cb = b.dim(axis) * inner;
  Buffer<T> out(sz(outer * (ca + cb)));
  for (i64 o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * ca, ca, out.data() + o * (ca + cb));
    std::copy_n(b.data().data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
  }
  return make_result<T>("concat", std::move(shape), std::move(out), {&a, &b},
                        [=](TensorNode<T>& self) {
                          for (i64 o = 0; o < outer; ++o) {
                            const T* g = self.grad.data() + o * (ca + cb);
                            if (wants_grad(self, 0)) {
                              T* da = self.parents[0]->grad.data() + o * ca;
                              for (i64 i = 0; i < ca; ++i) da[i] += g[i];
                            }
                            if (wants_grad(self, 1)) {
                              T* db = self.parents[1]->grad.data() + o * cb;
                              for (i64 i = 0; i < cb; ++i) db[i] += g[ca + i];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::int64_t axis, std::int64_t begin,
                     std::int64_t end) {
  axis = normalize_axis(axis, x.rank());
  require(0 <= begin && begin <= end && end <= x.dim(axis), "slice range out of bounds");
  Shape shape = x.shape();
  shape[sz(axis)] = end - begin;
  i64 outer = 1, inner = 1;
  for (i64 d = 0; d < axis; ++d) outer *= x.dim(d);
  for (i64 d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const i64 src_stride = x.dim(axis) * inner, len = (end - begin) * inner, off = begin * inner;
  Buffer<T> out(sz(outer * len));
  for (i64 o = 0; o < outer; ++o) {
    std::copy_n(x.data().data() + o * src_stride + off, len, out.data() + o * len);
  }
  return make_result<T>("slice", std::move(shape), std::move(out), {&x}, [=](TensorNode<T>& self) {
    for (i64 o = 0; o < outer; ++o) {
      T* dx = self.parents[0]->grad.data() + o * src_stride + off;
      const T* g = self.grad.data() + o * len;
      for (i64 i = 0; i < len; ++i) dx[i] += g[i];
    }
  });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes size");
  Buffer<T> out(x.data().begin(), x.data().end());
  return make_result<T>("reshape", std::move(shape), std::move(out), {&x},
                        [](TensorNode<T>& self) {
                          auto& dx = self.parents[0]->grad;
                          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i];
                        });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 2 || a.rank() == 3, "matmul lhs must be rank 2 or 3");
  require(b.rank() == 2 || (b.rank() == 3 && a.rank() == 3), "matmul rhs rank unsupported");
  const bool batched_rhs = b.rank() == 3;
  const i64 batch = a.rank() == 3 ? a.dim(0) : 1;
  const i64 rows = a.dim(-2), inner = a.dim(-1), cols = b.dim(-1);
  require(b.dim(-2) == inner, "matmul inner extent mismatch: " + shape_str(a.shape()) + " x " +
                                  shape_str(b.shape()));
  if (batched_rhs) require(b.dim(0) == batch, "matmul batch mismatch");
  // A shared rhs is applied to all batch rows at once.
  const i64 groups = batched_rhs ? batch : 1;
  const i64 group_rows = batched_rhs ? rows : batch * rows;
  Buffer<T> out(sz(batch * rows * cols));
  for (i64 g = 0; g < groups; ++g) {
    CMapMat<T> am(a.data().data() + g * group_rows * inner, group_rows, inner);
    CMapMat<T> bm(b.data().data() + (batched_rhs ? g * inner * cols : 0), inner, cols);
    MapMat<T> cm(out.data() + g * group_rows * cols, group_rows, cols);
    cm.noalias() = am * bm;
  }
  Shape shape = a.rank() == 3 ? Shape{batch, rows, cols} : Shape{rows, cols};
  return make_result<T>("matmul", std::move(shape), std::move(out), {&a, &b},
                        [=](TensorNode<T>& self) {
                          for (i64 g = 0; g < groups; ++g) {
                            const i64 boff = batched_rhs ? g * inner * cols : 0;
                            CMapMat<T> dc(self.grad.data() + g * group_rows * cols, group_rows,
                                          cols);
                            if (wants_grad(self, 0)) {
                              CMapMat<T> bm(self.parents[1]->data.data() + boff, inner, cols);
                              MapMat<T> da(self.parents[0]->grad.data() + g * group_rows * inner,
                                           group_rows, inner);
                              da.noalias() += dc * bm.transpose();
                            }
                            if (wants_grad(self, 1)) {
                              CMapMat<T> am(self.parents[0]->data.data() + g * group_rows * inner,
                                            group_rows, inner);
                              MapMat<T> db(self.parents[1]->grad.data() + boff, inner, cols);
                              db.noalias() += am.transpose() * dc;
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> transpose_last2(const BasicTensor<T>& x) {
  require(x.rank() >= 2, "transpose_last2 needs rank >= 2");
  const i64 rows = x.dim(-2), cols = x.dim(-1), batch = x.numel() / (rows * cols);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Buffer<T> out(x.data().size());
  for (i64 b = 0; b < batch; ++b) {
    CMapMat<T> src(x.data().data() + b * rows * cols, rows, cols);
    MapMat<T> dst(out.data() + b * rows * cols, cols, rows);
    dst = src.transpose();
  }
  return make_result<T>("transpose", std::move(shape), std::move(out), {&x},
                        [=](TensorNode<T>& self) {
                          for (i64 b = 0; b < batch; ++b) {
                            CMapMat<T> g(self.grad.data() + b * rows * cols, cols, rows);
                            MapMat<T> dx(self.parents[0]->grad.data() + b * rows * cols, rows,
                                         cols);
                            dx += g.transpose();
                          }
                        });
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x) {
  require(x.rank() >= 1, "softmax_rows needs rank >= 1");
  const i64 n = x.dim(-1), rows = x.numel() / std::max<i64>(n, 1);
  require(n >= 1, "softmax_rows over empty axis");
  Buffer<T> out(x.data().size());
  for (i64 r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * n;
    T* dst = out.data() + r * n;
    const T peak = *std::max_element(src, src + n);
    T total{0};
    for (i64 i = 0; i < n; ++i) {
      dst[i] = std::exp(src[i] - peak);
      total += dst[i];
    }
    for (i64 i = 0; i < n; ++i) dst[i] /= total;
  }
  return make_result<T>("softmax_rows", x.shape(), std::move(out), {&x},
                        [=](TensorNode<T>& self) {
                          for (i64 r = 0; r < rows; ++r) {
                            const T* y = self.data.data() + r * n;
                            const T* g = self.grad.data() + r * n;
                            T dot{0};
                            for (i64 i = 0; i < n; ++i) dot += g[i] * y[i];
                            T* dx = self.parents[0]->grad.data() + r * n;
                            for (i64 i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
                          }
                        });
}

template <typename T>
BasicTensor<T> flatten_spatial(const BasicTensor<T>& x) {
  require(x.rank() == 4, "flatten_spatial expects [B,C,H,W]");
  const i64 batch = x.dim(0), channels = x.dim(1), pixels = x.dim(2) * x.dim(3);
  Buffer<T> out(x.data().size());
  for (i64 b = 0; b < batch; ++b) {
    CMapMat<T> src(x.data().data() + b * channels * pixels, channels, pixels);
    MapMat<T> dst(out.data() + b * channels * pixels, pixels, channels);
    dst = src.transpose();
  }
  return make_result<T>("flatten_spatial", Shape{batch, pixels, channels}, std::move(out), {&x},
                        [=](TensorNode<T>& self) {
                          for (i64 b = 0; b < batch; ++b) {
                            CMapMat<T> g(self.grad.data() + b * channels * pixels, pixels,
                                         channels);
                            MapMat<T> dx(self.parents[0]->grad.data() + b * channels * pixels,
                                         channels, pixels);
                            dx += g.transpose();
                          }
                        });
}

template <typename T>
BasicTensor<T> unflatten_spatial(const BasicTensor<T>& x, std::int64_t height,
                                 std::int64_t width) {
  require(x.rank() == 3 && x.dim(1) == height * width,
          "unflatten_spatial expects [B,H*W,C], got " + shape_str(x.shape()));
  const i64 batch = x.dim(0), channels = x.dim(2), pixels = height * width;
  Buffer<T> out(x.data().size());
  for (i64 b = 0; b < batch; ++b) {
    CMapMat<T> src(x.data().data() + b * channels * pixels, pixels, channels);
    MapMat<T> dst(out.data() + b * channels * pixels, channels, pixels);
    dst = src.transpose();
  }
  return make_result<T>("unflatten_spatial", Shape{batch, channels, height, width},
                        std::move(out), {&x}, [=](TensorNode<T>& self) {
                          for (i64 b = 0; b < batch; ++b) {
                            CMapMat<T> g(self.grad.data() + b * channels * pixels, channels,
                                         pixels);
                            MapMat<T> dx(self.parents[0]->grad.data() + b * channels * pixels,
                                         pixels, channels);
                            dx += g.transpose();
                          }
                        });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearLayer<T>& layer) {
  const auto& w = layer.weight;
  require(w.rank() == 2, "linear weight must be [in,out]");
  const i64 in = w.dim(0), outw = w.dim(1);
  require(x.rank() >= 1 && x.dim(-1) == in, "linear input width " + shape_str(x.shape()) +
                                                " does not match weight " + shape_str(w.shape()));
  const bool has_bias = layer.bias.defined();
  if (has_bias) require(layer.bias.rank() == 1 && layer.bias.dim(0) == outw, "linear bias mismatch");
  const i64 rows = x.numel() / in;
  Buffer<T> out(sz(rows * outw));
  CMapMat<T> xm(x.data().data(), rows, in);
  CMapMat<T> wm(w.data().data(), in, outw);
  MapMat<T> ym(out.data(), rows, outw);
  ym.noalias() = xm * wm;
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(layer.bias.data().data(), outw);
    ym.rowwise() += bias;
  }
  Shape shape = x.shape();
  shape.back() = outw;
  auto backward = [=](TensorNode<T>& self) {
    CMapMat<T> dy(self.grad.data(), rows, outw);
    if (wants_grad(self, 0)) {
      CMapMat<T> wmat(self.parents[1]->data.data(), in, outw);
      MapMat<T> dx(self.parents[0]->grad.data(), rows, in);
      dx.noalias() += dy * wmat.transpose();
    }
    if (wants_grad(self, 1)) {
      CMapMat<T> xmat(self.parents[0]->data.data(), rows, in);
      MapMat<T> dw(self.parents[1]->grad.data(), in, outw);
      dw.noalias() += xmat.transpose() * dy;
    }
    if (self.parents.size() > 2 && wants_grad(self, 2)) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(self.parents[2]->grad.data(), outw);
      db += dy.colwise().sum();
    }
  };
  if (has_bias) {
    return make_result<T>("linear", std::move(shape), std::move(out), {&x, &w, &layer.bias},
                          backward);
  }
  return make_result<T>("linear", std::move(shape), std::move(out), {&x, &w}, backward);
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "add shape mismatch");
  Buffer<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& d = self.parents[p]->grad;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.shape() == b.shape(), "mul shape mismatch");
  Buffer<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](TensorNode<T>& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (wants_grad(self, 0)) {
      auto& d = self.parents[0]->grad;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * bv[i];
    }
    if (wants_grad(self, 1)) {
      auto& d = self.parents[1]->grad;
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * av[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  Buffer<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result<T>("scale", x.shape(), std::move(out), {&x}, [factor](TensorNode<T>& self) {
    auto& d = self.parents[0]->grad;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total{0};
  for (const T v : x.data()) total += v;
  return make_result<T>("sum", Shape{}, Buffer<T>{total}, {&x}, [](TensorNode<T>& self) {
    auto& d = self.parents[0]->grad;
    for (auto& v : d) v += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x) {
  require(x.numel() > 0, "mean of empty tensor");
  const T n = static_cast<T>(x.numel());
  T total{0};
  for (const T v : x.data()) total += v;
  return make_result<T>("mean", Shape{}, Buffer<T>{total / n}, {&x},
                        [n](TensorNode<T>& self) {
                          auto& d = self.parents[0]->grad;
                          for (auto& v : d) v += self.grad[0] / n;
                        });
}

template <typename T>
BasicTensor<T> max_reduce(const BasicTensor<T>& x, std::int64_t axis) {
  axis = normalize_axis(axis, x.rank());
  const i64 extent = x.dim(axis);
  require(extent >= 1, "max_reduce over empty axis");
  i64 outer = 1, inner = 1;
  for (i64 d = 0; d < axis; ++d) outer *= x.dim(d);
  for (i64 d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  Buffer<T> out(sz(outer * inner));
  std::vector<std::int64_t> argmax(out.size());
  const T* xd = x.data().data();
  for (i64 o = 0; o < outer; ++o) {
    for (i64 i = 0; i < inner; ++i) {
      i64 best = o * extent * inner + i;
      for (i64 e = 1; e < extent; ++e) {
        const i64 idx = (o * extent + e) * inner + i;
        if (xd[idx] > xd[best]) best = idx;
      }
      out[sz(o * inner + i)] = xd[best];
      argmax[sz(o * inner + i)] = best;
    }
  }
  return make_result<T>("max_reduce", std::move(shape), std::move(out), {&x},
                        [argmax = std::move(argmax)](TensorNode<T>& self) {
                          T* dx = self.parents[0]->grad.data();
                          for (std::size_t o = 0; o < argmax.size(); ++o) {
                            dx[argmax[o]] += self.grad[o];
                          }
                        });
}

template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& x, std::span<const std::int64_t> indices,
                      const Shape& index_shape) {
  require(x.rank() == 3, "gather expects [B,N,D]");
  require(!index_shape.empty() && index_shape[0] == x.dim(0), "gather batch mismatch");
  require(shape_numel(index_shape) == static_cast<i64>(indices.size()), "gather index size");
  const i64 batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  const i64 per_batch = static_cast<i64>(indices.size()) / batch;
  for (const auto v : indices) require(v >= 0 && v < n, "gather index out of range");
  Shape shape = index_shape;
  shape.push_back(d);
  Buffer<T> out(indices.size() * sz(d));
  std::vector<std::int64_t> rows(indices.size());
  for (i64 b = 0; b < batch; ++b) {
    for (i64 m = 0; m < per_batch; ++m) {
      const i64 flat = b * per_batch + m;
      rows[sz(flat)] = b * n + indices[sz(flat)];
      std::copy_n(x.data().data() + rows[sz(flat)] * d, d, out.data() + flat * d);
    }
  }
  return make_result<T>("gather", std::move(shape), std::move(out), {&x},
                        [rows = std::move(rows), d](TensorNode<T>& self) {
                          T* dx = self.parents[0]->grad.data();
                          for (std::size_t r = 0; r < rows.size(); ++r) {
                            const T* g = self.grad.data() + static_cast<i64>(r) * d;
                            T* dst = dx + rows[r] * d;
                            for (i64 j = 0; j < d; ++j) dst[j] += g[j];
                          }
                        });
}

template <typename T>
BasicTensor<T> weighted_gather(const BasicTensor<T>& x, std::span<const std::int64_t> indices,
                               std::span<const T> weights, std::int64_t m, std::int64_t k) {
  require(x.rank() == 3, "weighted_gather expects [B,N,D]");
  const i64 batch = x.dim(0), n = x.dim(1), d = x.dim(2);
  require(static_cast<i64>(indices.size()) == batch * m * k &&
              static_cast<i64>(weights.size()) == batch * m * k,
          "weighted_gather index/weight size mismatch");
  for (const auto v : indices) require(v >= 0 && v < n, "weighted_gather index out of range");
  Buffer<T> out(sz(batch * m * d), T{0});
  for (i64 b = 0; b < batch; ++b) {
    for (i64 r = 0; r < m; ++r) {
      T* dst = out.data() + (b * m + r) * d;
      for (i64 j = 0; j < k; ++j) {
        const i64 e = (b * m + r) * k + j;
        const T* src = x.data().data() + (b * n + indices[sz(e)]) * d;
        const T w = weights[sz(e)];
        for (i64 c = 0; c < d; ++c) dst[c] += w * src[c];
      }
    }
  }
  std::vector<std::int64_t> idx(indices.begin(), indices.end());
  Buffer<T> wts(weights.begin(), weights.end());
  return make_result<T>(
      "weighted_gather", Shape{batch, m, d}, std::move(out), {&x},
      [=, idx = std::move(idx), wts = std::move(wts)](TensorNode<T>& self) {
        T* dx = self.parents[0]->grad.data();
        for (i64 b = 0; b < batch; ++b) {
          for (i64 r = 0; r < m; ++r) {
            const T* g = self.grad.data() + (b * m + r) * d;
            for (i64 j = 0; j < k; ++j) {
              const i64 e = (b * m + r) * k + j;
              T* dst = dx + (b * n + idx[sz(e)]) * d;
              for (i64 c = 0; c < d; ++c) dst[c] += wts[sz(e)] * g[c];
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  require(pred.shape() == target.shape(), "bce_loss shape mismatch: " + shape_str(pred.shape()) +
                                              " vs " + shape_str(target.shape()));
  require(pred.numel() > 0, "bce_loss on empty tensor");
  const T eps = static_cast<T>(kBceEpsilon);
  const T n = static_cast<T>(pred.numel());
  T total{0};
  for (std::size_t i = 0; i < pred.data().size(); ++i) {
    const T p = pred.data()[i], t = target.data()[i];
    // a NaN prediction flows into the loss so the trainer can name where it started
    if (p < T{0} || p > T{1}) throw DomainError("bce_loss prediction outside [0,1]");
    if (!(t >= T{0} && t <= T{1})) throw DomainError("bce_loss target outside [0,1]");
    const T pc = std::clamp(p, eps, T{1} - eps);
    total -= t * std::log(pc) + (T{1} - t) * std::log(T{1} - pc);
  }
  return make_result<T>("bce_loss", Shape{}, Buffer<T>{total / n}, {&pred, &target},
                        [eps, n](TensorNode<T>& self) {
                          if (!wants_grad(self, 0)) return;
                          const auto& p = self.parents[0]->data;
                          const auto& t = self.parents[1]->data;
                          auto& dp = self.parents[0]->grad;
                          const T g = self.grad[0] / n;
                          for (std::size_t i = 0; i < p.size(); ++i) {
                            if (p[i] < eps || p[i] > T{1} - eps) continue;
                            dp[i] += g * (p[i] - t[i]) / (p[i] * (T{1} - p[i]));
                          }
                        });
}

#define GHOSTPROBE_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const ConvLayer<T>&);                      \
  template BasicTensor<T> transpose_conv2x2(const BasicTensor<T>&, const ConvLayer<T>&);           \
  template BasicTensor<T> maxpool2x2(const BasicTensor<T>&);                                       \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                             \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                          \
  template BasicTensor<T> concat(const BasicTensor<T>&, const BasicTensor<T>&, std::int64_t);      \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::int64_t, std::int64_t, std::int64_t);  \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                   \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template BasicTensor<T> transpose_last2(const BasicTensor<T>&);                                  \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                                     \
  template BasicTensor<T> flatten_spatial(const BasicTensor<T>&);                                  \
  template BasicTensor<T> unflatten_spatial(const BasicTensor<T>&, std::int64_t, std::int64_t);    \
  template BasicTensor<T> linear(const BasicTensor<T>&, const LinearLayer<T>&);                    \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                         \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                              \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                             \
  template BasicTensor<T> max_reduce(const BasicTensor<T>&, std::int64_t);                         \
  template BasicTensor<T> gather(const BasicTensor<T>&, std::span<const std::int64_t>,             \
                                 const Shape&);                                                    \
  template BasicTensor<T> weighted_gather(const BasicTensor<T>&, std::span<const std::int64_t>,    \
                                          std::span<const T>, std::int64_t, std::int64_t);         \
  template BasicTensor<T> bce_loss(const BasicTensor<T>&, const BasicTensor<T>&);

GHOSTPROBE_INSTANTIATE_OPS(float)
GHOSTPROBE_INSTANTIATE_OPS(double)

#undef GHOSTPROBE_INSTANTIATE_OPS

}  // namespace ghostprobe
