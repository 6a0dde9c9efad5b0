#include "evstereo/ref_kernels.hpp"

#include <cmath>

namespace evstereo::ref {

void conv2d_fwd(const double* x, const double* w, const double* b, double* y, const Conv2Dims& d) {
  for (int64_t co = 0; co < d.cout; ++co)
    for (int64_t oy = 0; oy < d.oh; ++oy)
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        double acc = b ? b[co] : 0.0;
        for (int64_t ci = 0; ci < d.cin; ++ci)
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t iy = oy * d.sy - d.py + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t ix = ox * d.sx - d.px + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += x[(ci * d.h + iy) * d.w + ix] * w[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
            }
          }
        y[(co * d.oh + oy) * d.ow + ox] = acc;
      }
}

void conv2d_bwd_input(const double* gy, const double* w, double* gx, const Conv2Dims& d) {
  for (int64_t ci = 0; ci < d.cin; ++ci)
    for (int64_t iy = 0; iy < d.h; ++iy)
      for (int64_t ix = 0; ix < d.w; ++ix) {
        double acc = 0.0;
        for (int64_t co = 0; co < d.cout; ++co)
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t ty = iy + d.py - ky;
            if (ty < 0 || ty % d.sy != 0) continue;
            int64_t oy = ty / d.sy;
            if (oy >= d.oh) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t tx = ix + d.px - kx;
              if (tx < 0 || tx % d.sx != 0) continue;
              int64_t ox = tx / d.sx;
              if (ox >= d.ow) continue;
              acc += gy[(co * d.oh + oy) * d.ow + ox] *
                     w[((co * d.cin + ci) * d.kh + ky) * d.kw + kx];
            }
          }
        gx[(ci * d.h + iy) * d.w + ix] = acc;
      }
}

void conv2d_bwd_weight(const double* gy, const double* x, double* gw, const Conv2Dims& d) {
  for (int64_t co = 0; co < d.cout; ++co)
    for (int64_t ci = 0; ci < d.cin; ++ci)
      for (int64_t ky = 0; ky < d.kh; ++ky)
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          double acc = 0.0;
          for (int64_t oy = 0; oy < d.oh; ++oy) {
            int64_t iy = oy * d.sy - d.py + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t ox = 0; ox < d.ow; ++ox) {
              int64_t ix = ox * d.sx - d.px + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += gy[(co * d.oh + oy) * d.ow + ox] * x[(ci * d.h + iy) * d.w + ix];
            }
          }
          gw[((co * d.cin + ci) * d.kh + ky) * d.kw + kx] = acc;
        }
}

void conv3d_fwd(const double* x, const double* w, const double* b, double* y, const Conv3Dims& d) {
  for (int64_t co = 0; co < d.cout; ++co)
    for (int64_t o0 = 0; o0 < d.o0; ++o0)
      for (int64_t o1 = 0; o1 < d.o1; ++o1)
        for (int64_t o2 = 0; o2 < d.o2; ++o2) {
          double acc = b ? b[co] : 0.0;
          for (int64_t ci = 0; ci < d.cin; ++ci)
            for (int64_t k0 = 0; k0 < d.k0; ++k0) {
              int64_t i0 = o0 * d.s0 - d.p0 + k0;
              if (i0 < 0 || i0 >= d.d0) continue;
              for (int64_t k1 = 0; k1 < d.k1; ++k1) {
                int64_t i1 = o1 * d.s1 - d.p1 + k1;
                if (i1 < 0 || i1 >= d.d1) continue;
                for (int64_t k2 = 0; k2 < d.k2; ++k2) {
                  int64_t i2 = o2 * d.s2 - d.p2 + k2;
                  if (i2 < 0 || i2 >= d.d2) continue;
                  acc += x[((ci * d.d0 + i0) * d.d1 + i1) * d.d2 + i2] *
                         w[(((co * d.cin + ci) * d.k0 + k0) * d.k1 + k1) * d.k2 + k2];
                }
              }
            }
          y[((co * d.o0 + o0) * d.o1 + o1) * d.o2 + o2] = acc;
        }
}

void matmul_fwd(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m) {
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * m + j];
      c[i * m + j] = acc;
    }
}

namespace {

// Shares the corner order and weight arithmetic of the parallel kernels so
// results are bitwise equal.
inline double sample_one(const double* plane, int64_t h, int64_t w, double u, double v,
                         double scale) {
  if (!std::isfinite(u) || !std::isfinite(v) || std::fabs(u) > 1e15 || std::fabs(v) > 1e15)
    return 0.0;
  double fx0 = std::floor(u), fy0 = std::floor(v);
  int64_t x0 = int64_t(fx0), y0 = int64_t(fy0);
  int64_t x1 = x0 + 1, y1 = y0 + 1;
  if (x1 < 0 || x0 >= w || y1 < 0 || y0 >= h) return 0.0;
  double ax = u - fx0, ay = v - fy0;
  double acc = 0.0;
  if (y0 >= 0 && x0 >= 0) acc += scale * ((1.0 - ay) * (1.0 - ax)) * plane[y0 * w + x0];
  if (y0 >= 0 && x1 < w) acc += scale * ((1.0 - ay) * ax) * plane[y0 * w + x1];
  if (y1 < h && x0 >= 0) acc += scale * (ay * (1.0 - ax)) * plane[y1 * w + x0];
  if (y1 < h && x1 < w) acc += scale * (ay * ax) * plane[y1 * w + x1];
  return acc;
}

}  // namespace

void bilinear_gather(const double* img, int64_t c, int64_t h, int64_t w, const double* coords,
                     int64_t npts, double* out) {
  for (int64_t i = 0; i < npts; ++i)
    for (int64_t ch = 0; ch < c; ++ch)
      out[ch * npts + i] = sample_one(img + ch * h * w, h, w, coords[i], coords[npts + i], 1.0);
}

void trilinear_gather(const double* vol, int64_t c, int64_t dd, int64_t h, int64_t w,
                      const double* coords, int64_t npts, double* out) {
  for (int64_t i = 0; i < npts; ++i) {
    double u = coords[i], v = coords[npts + i], dc = coords[2 * npts + i];
    for (int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      if (std::isfinite(dc) && std::fabs(dc) <= 1e15) {
        double fd = std::floor(dc);
        int64_t d0 = int64_t(fd);
        double ad = dc - fd;
        for (int rep = 0; rep < 2; ++rep) {
          int64_t dz = d0 + rep;
          if (dz < 0 || dz >= dd) continue;
          double wz = rep ? ad : 1.0 - ad;
          acc += sample_one(vol + (ch * dd + dz) * h * w, h, w, u, v, wz);
        }
      }
      out[ch * npts + i] = acc;
    }
  }
}

void voxel_splat(const int32_t* u, const int32_t* v, const int8_t* p, const double* bstar,
                 int64_t n, int64_t bins, int64_t h, int64_t w, double* out) {
  for (int64_t i = 0; i < bins * h * w; ++i) out[i] = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double b = bstar[i];
    int64_t b0 = int64_t(std::floor(b));
    double f = b - double(b0);
    double w_lo = 1.0 - f;
    double w_hi = 1.0 - w_lo;
    double pol = double(p[i]);
    int64_t base = int64_t(v[i]) * w + int64_t(u[i]);
    if (b0 >= 0 && b0 < bins) out[b0 * h * w + base] += pol * w_lo;
    if (b0 + 1 >= 0 && b0 + 1 < bins && w_hi != 0.0) out[(b0 + 1) * h * w + base] += pol * w_hi;
  }
}

}  // namespace evstereo::ref
