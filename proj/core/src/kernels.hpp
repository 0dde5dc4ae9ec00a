#pragma once

// Single-image convolution kernels in CHW layout with "same" padding
// (pad = K/2). Backward passes accumulate into their outputs.

#include <algorithm>

namespace compactnet::kernels {

struct ConvGeometry {
  int in_channels;
  int out_channels;
  int height;  // input
  int width;
  int kernel;
  int stride;
  int out_height;
  int out_width;

  int pad() const { return kernel / 2; }
};

// Output columns ox with 0 <= ox*stride + kx - pad < width.
inline void column_range(const ConvGeometry& g, int kx, int& lo, int& hi) {
  const int shift = kx - g.pad();
  lo = shift >= 0 ? 0 : (-shift + g.stride - 1) / g.stride;
  const int last = g.width - 1 - shift;
  hi = last < 0 ? -1 : std::min(g.out_width - 1, last / g.stride);
}

inline void conv_forward(const double* in, const double* weight,
                         const double* bias, const ConvGeometry& g,
                         double* out) {
  const int plane = g.out_height * g.out_width;
  const int k = g.kernel;
  for (int co = 0; co < g.out_channels; ++co) {
    std::fill(out + co * plane, out + (co + 1) * plane, bias[co]);
  }
  for (int co = 0; co < g.out_channels; ++co) {
    double* out_plane = out + co * plane;
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const double* in_plane = in + ci * g.height * g.width;
      const double* w = weight + (co * g.in_channels + ci) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = w[ky * k + kx];
          int lo, hi;
          column_range(g, kx, lo, hi);
          const int shift = kx - g.pad();
          for (int oy = 0; oy < g.out_height; ++oy) {
            const int iy = oy * g.stride + ky - g.pad();
            if (iy < 0 || iy >= g.height) continue;
            const double* irow = in_plane + iy * g.width;
            double* orow = out_plane + oy * g.out_width;
            for (int ox = lo; ox <= hi; ++ox) {
              orow[ox] += wv * irow[ox * g.stride + shift];
            }
          }
        }
      }
    }
  }
}

// din may be null when the input gradient is not needed.
inline void conv_backward(const double* in, const double* weight,
                          const double* dout, const ConvGeometry& g,
                          double* dweight, double* dbias, double* din) {
  const int plane = g.out_height * g.out_width;
  const int k = g.kernel;
  for (int co = 0; co < g.out_channels; ++co) {
    const double* d = dout + co * plane;
    double sum = 0.0;
    for (int p = 0; p < plane; ++p) sum += d[p];
    dbias[co] += sum;
  }
  for (int co = 0; co < g.out_channels; ++co) {
    const double* d_plane = dout + co * plane;
    for (int ci = 0; ci < g.in_channels; ++ci) {
      const double* in_plane = in + ci * g.height * g.width;
      double* din_plane = din ? din + ci * g.height * g.width : nullptr;
      const double* w = weight + (co * g.in_channels + ci) * k * k;
      double* dw = dweight + (co * g.in_channels + ci) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = w[ky * k + kx];
          int lo, hi;
          column_range(g, kx, lo, hi);
          const int shift = kx - g.pad();
          double acc = 0.0;
          for (int oy = 0; oy < g.out_height; ++oy) {
            const int iy = oy * g.stride + ky - g.pad();
            if (iy < 0 || iy >= g.height) continue;
            const double* irow = in_plane + iy * g.width;
            const double* drow = d_plane + oy * g.out_width;
            for (int ox = lo; ox <= hi; ++ox) {
              acc += drow[ox] * irow[ox * g.stride + shift];
            }
            if (din_plane) {
              double* dirow = din_plane + iy * g.width;
              for (int ox = lo; ox <= hi; ++ox) {
                dirow[ox * g.stride + shift] += wv * drow[ox];
              }
            }
          }
          dw[ky * k + kx] += acc;
        }
      }
    }
  }
}

// Depthwise: in_channels == out_channels, weight is (C, K, K).
inline void depthwise_forward(const double* in, const double* weight,
                              const double* bias, const ConvGeometry& g,
                              double* out) {
  const int plane = g.out_height * g.out_width;
  const int k = g.kernel;
  for (int c = 0; c < g.out_channels; ++c) {
    double* out_plane = out + c * plane;
    std::fill(out_plane, out_plane + plane, bias[c]);
    const double* in_plane = in + c * g.height * g.width;
    const double* w = weight + c * k * k;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double wv = w[ky * k + kx];
        int lo, hi;
        column_range(g, kx, lo, hi);
        const int shift = kx - g.pad();
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride + ky - g.pad();
          if (iy < 0 || iy >= g.height) continue;
          const double* irow = in_plane + iy * g.width;
          double* orow = out_plane + oy * g.out_width;
          for (int ox = lo; ox <= hi; ++ox) {
            orow[ox] += wv * irow[ox * g.stride + shift];
          }
        }
      }
    }
  }
}

inline void depthwise_backward(const double* in, const double* weight,
                               const double* dout, const ConvGeometry& g,
                               double* dweight, double* dbias, double* din) {
  const int plane = g.out_height * g.out_width;
  const int k = g.kernel;
  for (int c = 0; c < g.out_channels; ++c) {
    const double* d_plane = dout + c * plane;
    double sum = 0.0;
    for (int p = 0; p < plane; ++p) sum += d_plane[p];
    dbias[c] += sum;
    const double* in_plane = in + c * g.height * g.width;
    double* din_plane = din + c * g.height * g.width;
    const double* w = weight + c * k * k;
    double* dw = dweight + c * k * k;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double wv = w[ky * k + kx];
        int lo, hi;
        column_range(g, kx, lo, hi);
        const int shift = kx - g.pad();
        double acc = 0.0;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride + ky - g.pad();
          if (iy < 0 || iy >= g.height) continue;
          const double* irow = in_plane + iy * g.width;
          double* dirow = din_plane + iy * g.width;
          const double* drow = d_plane + oy * g.out_width;
          for (int ox = lo; ox <= hi; ++ox) {
            acc += drow[ox] * irow[ox * g.stride + shift];
            dirow[ox * g.stride + shift] += wv * drow[ox];
          }
        }
        dw[ky * k + kx] += acc;
      }
    }
  }
}

// out[c] = relu(out[c]) in place.
inline void relu(double* data, int n) {
  for (int i = 0; i < n; ++i) data[i] = data[i] > 0.0 ? data[i] : 0.0;
}

// grad[i] *= (activated[i] > 0).
inline void relu_backward(const double* activated, double* grad, int n) {
  for (int i = 0; i < n; ++i) {
    if (!(activated[i] > 0.0)) grad[i] = 0.0;
  }
}

}  // namespace compactnet::kernels
