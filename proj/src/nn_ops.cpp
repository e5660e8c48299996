#include "posefuse/nn_ops.hpp"

#include <algorithm>
#include <cmath>

#include "posefuse/error.hpp"

namespace posefuse::nn {

namespace {

struct AxisMap {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

AxisMap corner_aligned_axis(int in, int out) {
  AxisMap m;
  m.lo.resize(out);
  m.hi.resize(out);
  m.frac.resize(out);
  for (int u = 0; u < out; ++u) {
    const double src = out == 1 ? 0.0 : static_cast<double>(u) * (in - 1) / (out - 1);
    int lo = static_cast<int>(std::floor(src));
    lo = std::clamp(lo, 0, in - 1);
    m.lo[u] = lo;
    m.hi[u] = std::min(lo + 1, in - 1);
    m.frac[u] = src - lo;
  }
  return m;
}

}  // namespace

Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
              int out_channels, int kernel) {
  const int in_channels = x.channels();
  const int h = x.height();
  const int w = x.width();
  const int pad = kernel / 2;
  if (weight.size() != static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel ||
      bias.size() != static_cast<std::size_t>(out_channels)) {
    throw ShapeMismatch("conv2d weight/bias do not match the input channels");
  }
  Tensor y({out_channels, h, w});
  for (int o = 0; o < out_channels; ++o) {
    auto yo = y.channel(o);
    std::fill(yo.begin(), yo.end(), bias[o]);
    for (int i = 0; i < in_channels; ++i) {
      const auto xi = x.channel(i);
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const double wv = weight[((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx];
          const int dy = ky - pad;
          const int dx = kx - pad;
          const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          for (int yy = y0; yy < y1; ++yy) {
            double* out_row = yo.data() + static_cast<std::size_t>(yy) * w;
            const double* in_row = xi.data() + static_cast<std::size_t>(yy + dy) * w + dx;
            for (int xx = x0; xx < x1; ++xx) out_row[xx] += wv * in_row[xx];
          }
        }
      }
    }
  }
  return y;
}

void conv2d_backward(const Tensor& x, const Tensor& dy, std::span<const double> weight,
                     int kernel, std::span<double> dweight, std::span<double> dbias, Tensor* dx) {
  const int in_channels = x.channels();
  const int out_channels = dy.channels();
  const int h = x.height();
  const int w = x.width();
  const int pad = kernel / 2;
  for (int o = 0; o < out_channels; ++o) {
    const auto go = dy.channel(o);
    double sum = 0.0;
    for (double g : go) sum += g;
    dbias[o] += sum;
    for (int i = 0; i < in_channels; ++i) {
      const auto xi = x.channel(i);
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const std::size_t widx =
              ((static_cast<std::size_t>(o) * in_channels + i) * kernel + ky) * kernel + kx;
          const int oy = ky - pad;
          const int ox = kx - pad;
          const int y0 = std::max(0, -oy), y1 = std::min(h, h - oy);
          const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
          double acc = 0.0;
          for (int yy = y0; yy < y1; ++yy) {
            const double* g_row = go.data() + static_cast<std::size_t>(yy) * w;
            const double* in_row = xi.data() + static_cast<std::size_t>(yy + oy) * w + ox;
            for (int xx = x0; xx < x1; ++xx) acc += g_row[xx] * in_row[xx];
          }
          dweight[widx] += acc;
          if (dx != nullptr) {
            const double wv = weight[widx];
            auto dxi = dx->channel(i);
            for (int yy = y0; yy < y1; ++yy) {
              const double* g_row = go.data() + static_cast<std::size_t>(yy) * w;
              double* dx_row = dxi.data() + static_cast<std::size_t>(yy + oy) * w + ox;
              for (int xx = x0; xx < x1; ++xx) dx_row[xx] += wv * g_row[xx];
            }
          }
        }
      }
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& pre_activation, const Tensor& dy) {
  Tensor dx = dy;
  const auto pre = pre_activation.values();
  auto out = dx.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(pre[i] > 0.0)) out[i] = 0.0;
  }
  return dx;
}

Tensor upsample(const Tensor& x, int target) {
  if (x.height() < 1 || x.width() < 1) throw InvalidArgument("upsample input must be non-empty");
  if (target < 1) throw InvalidArgument("upsample target must be positive");
  if (x.height() == target && x.width() == target) return x;
  const AxisMap ys = corner_aligned_axis(x.height(), target);
  const AxisMap xs = corner_aligned_axis(x.width(), target);
  Tensor y({x.channels(), target, target});
  for (int c = 0; c < x.channels(); ++c) {
    for (int u = 0; u < target; ++u) {
      const double fy = ys.frac[u];
      for (int v = 0; v < target; ++v) {
        const double fx = xs.frac[v];
        const double top = x.at(c, ys.lo[u], xs.lo[v]) * (1.0 - fx) + x.at(c, ys.lo[u], xs.hi[v]) * fx;
        const double bottom = x.at(c, ys.hi[u], xs.lo[v]) * (1.0 - fx) + x.at(c, ys.hi[u], xs.hi[v]) * fx;
        y.at(c, u, v) = top * (1.0 - fy) + bottom * fy;
      }
    }
  }
  return y;
}

Tensor upsample_backward(const Tensor& dy, const Shape3& input_shape) {
  const int target = dy.height();
  if (input_shape.height == target && input_shape.width == target) return dy;
  const AxisMap ys = corner_aligned_axis(input_shape.height, target);
  const AxisMap xs = corner_aligned_axis(input_shape.width, target);
  Tensor dx(input_shape);
  for (int c = 0; c < input_shape.channels; ++c) {
    for (int u = 0; u < target; ++u) {
      const double fy = ys.frac[u];
      for (int v = 0; v < target; ++v) {
        const double fx = xs.frac[v];
        const double g = dy.at(c, u, v);
        dx.at(c, ys.lo[u], xs.lo[v]) += g * (1.0 - fy) * (1.0 - fx);
        dx.at(c, ys.lo[u], xs.hi[v]) += g * (1.0 - fy) * fx;
        dx.at(c, ys.hi[u], xs.lo[v]) += g * fy * (1.0 - fx);
        dx.at(c, ys.hi[u], xs.hi[v]) += g * fy * fx;
      }
    }
  }
  return dx;
}

std::vector<double> global_average_pool(const Tensor& x) {
  std::vector<double> out(x.channels());
  const double inv = 1.0 / static_cast<double>(x.shape().plane());
  for (int c = 0; c < x.channels(); ++c) {
    double sum = 0.0;
    for (double v : x.channel(c)) sum += v;
    out[c] = sum * inv;
  }
  return out;
}

std::vector<double> affine(std::span<const double> x, std::span<const double> weight,
                           std::span<const double> bias, int out) {
  const std::size_t in = x.size();
  if (weight.size() != in * out || bias.size() != static_cast<std::size_t>(out)) {
    throw ShapeMismatch("affine weight/bias do not match the input size");
  }
  std::vector<double> y(out);
  for (int o = 0; o < out; ++o) {
    double acc = bias[o];
    const double* row = weight.data() + static_cast<std::size_t>(o) * in;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

std::vector<double> affine_backward(std::span<const double> x, std::span<const double> dy,
                                    std::span<const double> weight, std::span<double> dweight,
                                    std::span<double> dbias) {
  const std::size_t in = x.size();
  std::vector<double> dx(in, 0.0);
  for (std::size_t o = 0; o < dy.size(); ++o) {
    dbias[o] += dy[o];
    const double* row = weight.data() + o * in;
    double* drow = dweight.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      drow[i] += dy[o] * x[i];
      dx[i] += dy[o] * row[i];
    }
  }
  return dx;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  const double peak = *std::max_element(out.begin(), out.end());
  double sum = 0.0;
  for (auto& v : out) {
    v = std::exp(v - peak);
    sum += v;
  }
  for (auto& v : out) v /= sum;
  return out;
}

}  // namespace posefuse::nn
