#include "evstereo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace evstereo::kernels {

void conv2d_fwd(const double* x, const double* w, const double* b, double* y, const Conv2Dims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < d.cout; ++co) {
    for (int64_t oy = 0; oy < d.oh; ++oy) {
      for (int64_t ox = 0; ox < d.ow; ++ox) {
        double acc = b ? b[co] : 0.0;
        for (int64_t ci = 0; ci < d.cin; ++ci) {
          const double* xp = x + (ci * d.h) * d.w;
          const double* wp = w + ((co * d.cin + ci) * d.kh) * d.kw;
          for (int64_t ky = 0; ky < d.kh; ++ky) {
            int64_t iy = oy * d.sy - d.py + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t kx = 0; kx < d.kw; ++kx) {
              int64_t ix = ox * d.sx - d.px + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += xp[iy * d.w + ix] * wp[ky * d.kw + kx];
            }
          }
        }
        y[(co * d.oh + oy) * d.ow + ox] = acc;
      }
    }
  }
}

void conv2d_bwd_input(const double* gy, const double* w, double* gx, const Conv2Dims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    for (int64_t iy = 0; iy < d.h; ++iy) {
      for (int64_t ix = 0; ix < d.w; ++ix) {
        double acc = 0.0;
        for (int64_t co = 0; co < d.cout; ++co) {
          const double* gp = gy + (co * d.oh) * d.ow;
          const double* wp = w + ((co * d.cin + ci) * d.kh) * d.kw;
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
              acc += gp[oy * d.ow + ox] * wp[ky * d.kw + kx];
            }
          }
        }
        gx[(ci * d.h + iy) * d.w + ix] = acc;
      }
    }
  }
}

void conv2d_bwd_weight(const double* gy, const double* x, double* gw, const Conv2Dims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < d.cout; ++co) {
    for (int64_t ci = 0; ci < d.cin; ++ci) {
      for (int64_t ky = 0; ky < d.kh; ++ky) {
        for (int64_t kx = 0; kx < d.kw; ++kx) {
          double acc = 0.0;
          const double* gp = gy + (co * d.oh) * d.ow;
          const double* xp = x + (ci * d.h) * d.w;
          for (int64_t oy = 0; oy < d.oh; ++oy) {
            int64_t iy = oy * d.sy - d.py + ky;
            if (iy < 0 || iy >= d.h) continue;
            for (int64_t ox = 0; ox < d.ow; ++ox) {
              int64_t ix = ox * d.sx - d.px + kx;
              if (ix < 0 || ix >= d.w) continue;
              acc += gp[oy * d.ow + ox] * xp[iy * d.w + ix];
            }
          }
          gw[((co * d.cin + ci) * d.kh + ky) * d.kw + kx] = acc;
        }
      }
    }
  }
}

void conv2d_bwd_bias(const double* gy, double* gb, const Conv2Dims& d) {
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    const double* gp = gy + (co * d.oh) * d.ow;
    for (int64_t i = 0; i < d.oh * d.ow; ++i) acc += gp[i];
    gb[co] = acc;
  }
}

void conv3d_fwd(const double* x, const double* w, const double* b, double* y, const Conv3Dims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < d.cout; ++co) {
    for (int64_t o0 = 0; o0 < d.o0; ++o0) {
      for (int64_t o1 = 0; o1 < d.o1; ++o1) {
        for (int64_t o2 = 0; o2 < d.o2; ++o2) {
          double acc = b ? b[co] : 0.0;
          for (int64_t ci = 0; ci < d.cin; ++ci) {
            const double* xp = x + ((ci * d.d0) * d.d1) * d.d2;
            const double* wp = w + (((co * d.cin + ci) * d.k0) * d.k1) * d.k2;
            for (int64_t k0 = 0; k0 < d.k0; ++k0) {
              int64_t i0 = o0 * d.s0 - d.p0 + k0;
              if (i0 < 0 || i0 >= d.d0) continue;
              for (int64_t k1 = 0; k1 < d.k1; ++k1) {
                int64_t i1 = o1 * d.s1 - d.p1 + k1;
                if (i1 < 0 || i1 >= d.d1) continue;
                for (int64_t k2 = 0; k2 < d.k2; ++k2) {
                  int64_t i2 = o2 * d.s2 - d.p2 + k2;
                  if (i2 < 0 || i2 >= d.d2) continue;
                  acc += xp[(i0 * d.d1 + i1) * d.d2 + i2] * wp[(k0 * d.k1 + k1) * d.k2 + k2];
                }
              }
            }
          }
          y[((co * d.o0 + o0) * d.o1 + o1) * d.o2 + o2] = acc;
        }
      }
    }
  }
}

void conv3d_bwd_input(const double* gy, const double* w, double* gx, const Conv3Dims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t ci = 0; ci < d.cin; ++ci) {
    for (int64_t i0 = 0; i0 < d.d0; ++i0) {
      for (int64_t i1 = 0; i1 < d.d1; ++i1) {
        for (int64_t i2 = 0; i2 < d.d2; ++i2) {
          double acc = 0.0;
          for (int64_t co = 0; co < d.cout; ++co) {
            const double* gp = gy + ((co * d.o0) * d.o1) * d.o2;
            const double* wp = w + (((co * d.cin + ci) * d.k0) * d.k1) * d.k2;
            for (int64_t k0 = 0; k0 < d.k0; ++k0) {
              int64_t t0 = i0 + d.p0 - k0;
              if (t0 < 0 || t0 % d.s0 != 0) continue;
              int64_t o0 = t0 / d.s0;
              if (o0 >= d.o0) continue;
              for (int64_t k1 = 0; k1 < d.k1; ++k1) {
                int64_t t1 = i1 + d.p1 - k1;
                if (t1 < 0 || t1 % d.s1 != 0) continue;
                int64_t o1 = t1 / d.s1;
                if (o1 >= d.o1) continue;
                for (int64_t k2 = 0; k2 < d.k2; ++k2) {
                  int64_t t2 = i2 + d.p2 - k2;
                  if (t2 < 0 || t2 % d.s2 != 0) continue;
                  int64_t o2 = t2 / d.s2;
                  if (o2 >= d.o2) continue;
                  acc += gp[(o0 * d.o1 + o1) * d.o2 + o2] * wp[(k0 * d.k1 + k1) * d.k2 + k2];
                }
              }
            }
          }
          gx[((ci * d.d0 + i0) * d.d1 + i1) * d.d2 + i2] = acc;
        }
      }
    }
  }
}

void conv3d_bwd_weight(const double* gy, const double* x, double* gw, const Conv3Dims& d) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < d.cout; ++co) {
    for (int64_t ci = 0; ci < d.cin; ++ci) {
      for (int64_t k0 = 0; k0 < d.k0; ++k0) {
        for (int64_t k1 = 0; k1 < d.k1; ++k1) {
          for (int64_t k2 = 0; k2 < d.k2; ++k2) {
            double acc = 0.0;
            const double* gp = gy + ((co * d.o0) * d.o1) * d.o2;
            const double* xp = x + ((ci * d.d0) * d.d1) * d.d2;
            for (int64_t o0 = 0; o0 < d.o0; ++o0) {
              int64_t i0 = o0 * d.s0 - d.p0 + k0;
              if (i0 < 0 || i0 >= d.d0) continue;
              for (int64_t o1 = 0; o1 < d.o1; ++o1) {
                int64_t i1 = o1 * d.s1 - d.p1 + k1;
                if (i1 < 0 || i1 >= d.d1) continue;
                for (int64_t o2 = 0; o2 < d.o2; ++o2) {
                  int64_t i2 = o2 * d.s2 - d.p2 + k2;
                  if (i2 < 0 || i2 >= d.d2) continue;
                  acc += gp[(o0 * d.o1 + o1) * d.o2 + o2] * xp[(i0 * d.d1 + i1) * d.d2 + i2];
                }
              }
            }
            gw[(((co * d.cin + ci) * d.k0 + k0) * d.k1 + k1) * d.k2 + k2] = acc;
          }
        }
      }
    }
  }
}

void conv3d_bwd_bias(const double* gy, double* gb, const Conv3Dims& d) {
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    const double* gp = gy + ((co * d.o0) * d.o1) * d.o2;
    for (int64_t i = 0; i < d.o0 * d.o1 * d.o2; ++i) acc += gp[i];
    gb[co] = acc;
  }
}

void matmul_fwd(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    double* row = c + i * m;
    for (int64_t j = 0; j < m; ++j) row[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
      double aip = a[i * k + p];
      const double* bp = b + p * m;
      for (int64_t j = 0; j < m; ++j) row[j] += aip * bp[j];
    }
  }
}

void matmul_bwd_a(const double* gc, const double* b, double* ga, int64_t n, int64_t k, int64_t m) {
  // ga = gc . b^T
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t p = 0; p < k; ++p) {
      double acc = 0.0;
      const double* gr = gc + i * m;
      const double* br = b + p * m;
      for (int64_t j = 0; j < m; ++j) acc += gr[j] * br[j];
      ga[i * k + p] = acc;
    }
  }
}

void matmul_bwd_b(const double* gc, const double* a, double* gb, int64_t n, int64_t k, int64_t m) {
  // gb = a^T . gc
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < k; ++p) {
    double* row = gb + p * m;
    for (int64_t j = 0; j < m; ++j) row[j] = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double api = a[i * k + p];
      const double* gr = gc + i * m;
      for (int64_t j = 0; j < m; ++j) row[j] += api * gr[j];
    }
  }
}

namespace {

struct BilinearTaps {
  int64_t x0, x1, y0, y1;
  double w00, w01, w10, w11;  // (y,x) order: w[y][x]
  bool any = false;
};

inline BilinearTaps bilinear_taps(double u, double v, int64_t h, int64_t w) {
  BilinearTaps t{};
  // The magnitude guard also keeps the int64 conversions below defined.
  if (!std::isfinite(u) || !std::isfinite(v) || std::fabs(u) > 1e15 || std::fabs(v) > 1e15)
    return t;
  double fx0 = std::floor(u), fy0 = std::floor(v);
  t.x0 = int64_t(fx0);
  t.y0 = int64_t(fy0);
  t.x1 = t.x0 + 1;
  t.y1 = t.y0 + 1;
  if (t.x1 < 0 || t.x0 >= w || t.y1 < 0 || t.y0 >= h) return t;
  double ax = u - fx0, ay = v - fy0;
  t.w00 = (1.0 - ay) * (1.0 - ax);
  t.w01 = (1.0 - ay) * ax;
  t.w10 = ay * (1.0 - ax);
  t.w11 = ay * ax;
  t.any = true;
  return t;
}

}  // namespace

void bilinear_gather(const double* img, int64_t c, int64_t h, int64_t w, const double* coords,
                     int64_t npts, double* out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < npts; ++i) {
    BilinearTaps t = bilinear_taps(coords[i], coords[npts + i], h, w);
    if (!t.any) {
      for (int64_t ch = 0; ch < c; ++ch) out[ch * npts + i] = 0.0;
      continue;
    }
    bool x0ok = t.x0 >= 0, x1ok = t.x1 < w, y0ok = t.y0 >= 0, y1ok = t.y1 < h;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = img + (ch * h) * w;
      double acc = 0.0;
      if (y0ok && x0ok) acc += t.w00 * p[t.y0 * w + t.x0];
      if (y0ok && x1ok) acc += t.w01 * p[t.y0 * w + t.x1];
      if (y1ok && x0ok) acc += t.w10 * p[t.y1 * w + t.x0];
      if (y1ok && x1ok) acc += t.w11 * p[t.y1 * w + t.x1];
      out[ch * npts + i] = acc;
    }
  }
}

void bilinear_scatter(const double* gout, int64_t c, int64_t h, int64_t w, const double* coords,
                      int64_t npts, double* gimg) {
  // Parallel over channels: each channel scatters its points in order, so the
  // per-pixel accumulation order is fixed regardless of thread count.
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch) {
    double* p = gimg + (ch * h) * w;
    for (int64_t i = 0; i < npts; ++i) {
      BilinearTaps t = bilinear_taps(coords[i], coords[npts + i], h, w);
      if (!t.any) continue;
      double g = gout[ch * npts + i];
      if (t.y0 >= 0 && t.x0 >= 0) p[t.y0 * w + t.x0] += t.w00 * g;
      if (t.y0 >= 0 && t.x1 < w) p[t.y0 * w + t.x1] += t.w01 * g;
      if (t.y1 < h && t.x0 >= 0) p[t.y1 * w + t.x0] += t.w10 * g;
      if (t.y1 < h && t.x1 < w) p[t.y1 * w + t.x1] += t.w11 * g;
    }
  }
}

namespace {

struct TrilinearTaps {
  BilinearTaps uv;
  int64_t d0, d1;
  double wd0, wd1;
  bool any = false;
};

inline TrilinearTaps trilinear_taps(double u, double v, double dc, int64_t dd, int64_t h,
                                    int64_t w) {
  TrilinearTaps t{};
  if (!std::isfinite(dc) || std::fabs(dc) > 1e15) return t;
  t.uv = bilinear_taps(u, v, h, w);
  if (!t.uv.any) return t;
  double fd = std::floor(dc);
  t.d0 = int64_t(fd);
  t.d1 = t.d0 + 1;
  if (t.d1 < 0 || t.d0 >= dd) return t;
  double ad = dc - fd;
  t.wd0 = 1.0 - ad;
  t.wd1 = ad;
  t.any = true;
  return t;
}

}  // namespace

void trilinear_gather(const double* vol, int64_t c, int64_t dd, int64_t h, int64_t w,
                      const double* coords, int64_t npts, double* out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < npts; ++i) {
    TrilinearTaps t = trilinear_taps(coords[i], coords[npts + i], coords[2 * npts + i], dd, h, w);
    if (!t.any) {
      for (int64_t ch = 0; ch < c; ++ch) out[ch * npts + i] = 0.0;
      continue;
    }
    const BilinearTaps& b = t.uv;
    bool x0ok = b.x0 >= 0, x1ok = b.x1 < w, y0ok = b.y0 >= 0, y1ok = b.y1 < h;
    bool d0ok = t.d0 >= 0, d1ok = t.d1 < dd;
    for (int64_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (int rep = 0; rep < 2; ++rep) {
        int64_t dz = rep == 0 ? t.d0 : t.d1;
        double wz = rep == 0 ? t.wd0 : t.wd1;
        if ((rep == 0 && !d0ok) || (rep == 1 && !d1ok)) continue;
        const double* p = vol + ((ch * dd + dz) * h) * w;
        double sub = 0.0;
        if (y0ok && x0ok) sub += wz * b.w00 * p[b.y0 * w + b.x0];
        if (y0ok && x1ok) sub += wz * b.w01 * p[b.y0 * w + b.x1];
        if (y1ok && x0ok) sub += wz * b.w10 * p[b.y1 * w + b.x0];
        if (y1ok && x1ok) sub += wz * b.w11 * p[b.y1 * w + b.x1];
        acc += sub;
      }
      out[ch * npts + i] = acc;
    }
  }
}

void bilinear_scatter_coords(const double* gout, const double* img, int64_t c, int64_t h,
                             int64_t w, const double* coords, int64_t npts, double* gcoords) {
  // Parallel over points: each point owns two output slots.
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < npts; ++i) {
    gcoords[i] = 0.0;
    gcoords[npts + i] = 0.0;
    BilinearTaps t = bilinear_taps(coords[i], coords[npts + i], h, w);
    if (!t.any) continue;
    double ax = coords[i] - std::floor(coords[i]);
    double ay = coords[npts + i] - std::floor(coords[npts + i]);
    double gu = 0.0, gv = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      const double* p = img + (ch * h) * w;
      double p00 = (t.y0 >= 0 && t.x0 >= 0) ? p[t.y0 * w + t.x0] : 0.0;
      double p01 = (t.y0 >= 0 && t.x1 < w) ? p[t.y0 * w + t.x1] : 0.0;
      double p10 = (t.y1 < h && t.x0 >= 0) ? p[t.y1 * w + t.x0] : 0.0;
      double p11 = (t.y1 < h && t.x1 < w) ? p[t.y1 * w + t.x1] : 0.0;
      double g = gout[ch * npts + i];
      gu += g * ((1.0 - ay) * (p01 - p00) + ay * (p11 - p10));
      gv += g * ((1.0 - ax) * (p10 - p00) + ax * (p11 - p01));
    }
    gcoords[i] = gu;
    gcoords[npts + i] = gv;
  }
}

void trilinear_scatter(const double* gout, int64_t c, int64_t dd, int64_t h, int64_t w,
                       const double* coords, int64_t npts, double* gvol) {
#pragma omp parallel for schedule(static)
  for (int64_t ch = 0; ch < c; ++ch) {
    for (int64_t i = 0; i < npts; ++i) {
      TrilinearTaps t = trilinear_taps(coords[i], coords[npts + i], coords[2 * npts + i], dd, h, w);
      if (!t.any) continue;
      const BilinearTaps& b = t.uv;
      double g = gout[ch * npts + i];
      for (int rep = 0; rep < 2; ++rep) {
        int64_t dz = rep == 0 ? t.d0 : t.d1;
        double wz = rep == 0 ? t.wd0 : t.wd1;
        if ((rep == 0 && t.d0 < 0) || (rep == 1 && t.d1 >= dd)) continue;
        double* p = gvol + ((ch * dd + dz) * h) * w;
        if (b.y0 >= 0 && b.x0 >= 0) p[b.y0 * w + b.x0] += wz * b.w00 * g;
        if (b.y0 >= 0 && b.x1 < w) p[b.y0 * w + b.x1] += wz * b.w01 * g;
        if (b.y1 < h && b.x0 >= 0) p[b.y1 * w + b.x0] += wz * b.w10 * g;
        if (b.y1 < h && b.x1 < w) p[b.y1 * w + b.x1] += wz * b.w11 * g;
      }
    }
  }
}

void trilinear_scatter_coords(const double* gout, const double* vol, int64_t c, int64_t dd,
                              int64_t h, int64_t w, const double* coords, int64_t npts,
                              double* gcoords) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < npts; ++i) {
    gcoords[i] = 0.0;
    gcoords[npts + i] = 0.0;
    gcoords[2 * npts + i] = 0.0;
    TrilinearTaps t = trilinear_taps(coords[i], coords[npts + i], coords[2 * npts + i], dd, h, w);
    if (!t.any) continue;
    const BilinearTaps& b = t.uv;
    double ax = coords[i] - std::floor(coords[i]);
    double ay = coords[npts + i] - std::floor(coords[npts + i]);
    double gu = 0.0, gv = 0.0, gd = 0.0;
    for (int64_t ch = 0; ch < c; ++ch) {
      double g = gout[ch * npts + i];
      double lerp[2];  // bilinear value per depth layer, OOB layers read zero
      double du_part = 0.0, dv_part = 0.0;
      for (int rep = 0; rep < 2; ++rep) {
        int64_t dz = rep == 0 ? t.d0 : t.d1;
        double wz = rep == 0 ? t.wd0 : t.wd1;
        lerp[rep] = 0.0;
        if (dz < 0 || dz >= dd) continue;
        const double* p = vol + ((ch * dd + dz) * h) * w;
        double p00 = (b.y0 >= 0 && b.x0 >= 0) ? p[b.y0 * w + b.x0] : 0.0;
        double p01 = (b.y0 >= 0 && b.x1 < w) ? p[b.y0 * w + b.x1] : 0.0;
        double p10 = (b.y1 < h && b.x0 >= 0) ? p[b.y1 * w + b.x0] : 0.0;
        double p11 = (b.y1 < h && b.x1 < w) ? p[b.y1 * w + b.x1] : 0.0;
        lerp[rep] = b.w00 * p00 + b.w01 * p01 + b.w10 * p10 + b.w11 * p11;
        du_part += wz * ((1.0 - ay) * (p01 - p00) + ay * (p11 - p10));
        dv_part += wz * ((1.0 - ax) * (p10 - p00) + ax * (p11 - p01));
      }
      gu += g * du_part;
      gv += g * dv_part;
      gd += g * (lerp[1] - lerp[0]);
    }
    gcoords[i] = gu;
    gcoords[npts + i] = gv;
    gcoords[2 * npts + i] = gd;
  }
}

void voxel_splat(const int32_t* u, const int32_t* v, const int8_t* p, const double* bstar,
                 int64_t n, int64_t bins, int64_t h, int64_t w, double* out) {
  const int64_t cells = bins * h * w;
  const int64_t chunk = 16384;
  const int64_t nchunks = n == 0 ? 0 : (n + chunk - 1) / chunk;

  auto splat_range = [&](int64_t lo, int64_t hi, double* grid) {
    for (int64_t i = lo; i < hi; ++i) {
      double b = bstar[i];
      int64_t b0 = int64_t(std::floor(b));
      double f = b - double(b0);
      // w_lo + w_hi == 1 exactly: w_hi is the exact complement of w_lo.
      double w_lo = 1.0 - f;
      double w_hi = 1.0 - w_lo;
      double pol = double(p[i]);
      int64_t base = int64_t(v[i]) * w + int64_t(u[i]);
      if (b0 >= 0 && b0 < bins) grid[b0 * h * w + base] += pol * w_lo;
      if (b0 + 1 >= 0 && b0 + 1 < bins && w_hi != 0.0) grid[(b0 + 1) * h * w + base] += pol * w_hi;
    }
  };

  if (nchunks <= 1) {
    for (int64_t i = 0; i < cells; ++i) out[i] = 0.0;
    splat_range(0, n, out);
    return;
  }

  std::vector<double> partial(size_t(nchunks * cells), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < nchunks; ++c) {
    splat_range(c * chunk, std::min(n, (c + 1) * chunk), partial.data() + c * cells);
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < cells; ++i) {
    double acc = 0.0;
    for (int64_t c = 0; c < nchunks; ++c) acc += partial[size_t(c * cells + i)];
    out[i] = acc;
  }
}

void softmax_mid(const double* x, double* y, int64_t outer, int64_t axis, int64_t inner) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const double* xp = x + o * axis * inner + i;
      double* yp = y + o * axis * inner + i;
      double mx = xp[0];
      for (int64_t a = 1; a < axis; ++a) mx = std::max(mx, xp[a * inner]);
      double sum = 0.0;
      for (int64_t a = 0; a < axis; ++a) {
        double e = std::exp(xp[a * inner] - mx);
        yp[a * inner] = e;
        sum += e;
      }
      for (int64_t a = 0; a < axis; ++a) yp[a * inner] /= sum;
    }
  }
}

}  // namespace evstereo::kernels
