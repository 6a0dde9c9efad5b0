#pragma once
#include <cstdint>

namespace evstereo::kernels {

// Dimension bundles are validated once at op-record time (tape.cpp); the raw
// kernels below assume consistent sizes.

struct Conv2Dims {
  int64_t cin, h, w;       // input (cin, h, w)
  int64_t cout, kh, kw;    // weight (cout, cin, kh, kw)
  int64_t sy, sx, py, px;  // stride / zero padding
  int64_t oh, ow;          // output (cout, oh, ow)
};

struct Conv3Dims {
  int64_t cin, d0, d1, d2;
  int64_t cout, k0, k1, k2;
  int64_t s0, s1, s2, p0, p1, p2;
  int64_t o0, o1, o2;
};

// Every kernel is parallelized over disjoint output elements (or disjoint
// channel slices for scatter-style backwards), so results are bitwise
// independent of the thread count. Serial twins live in evstereo::ref.

void conv2d_fwd(const double* x, const double* w, const double* b, double* y, const Conv2Dims& d);
void conv2d_bwd_input(const double* gy, const double* w, double* gx, const Conv2Dims& d);
void conv2d_bwd_weight(const double* gy, const double* x, double* gw, const Conv2Dims& d);
void conv2d_bwd_bias(const double* gy, double* gb, const Conv2Dims& d);

void conv3d_fwd(const double* x, const double* w, const double* b, double* y, const Conv3Dims& d);
void conv3d_bwd_input(const double* gy, const double* w, double* gx, const Conv3Dims& d);
void conv3d_bwd_weight(const double* gy, const double* x, double* gw, const Conv3Dims& d);
void conv3d_bwd_bias(const double* gy, double* gb, const Conv3Dims& d);

// c[n,m] = sum_k a[n,k] * b[k,m]; gradients accumulate in ascending-k order.
void matmul_fwd(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m);
void matmul_bwd_a(const double* gc, const double* b, double* ga, int64_t n, int64_t k, int64_t m);
void matmul_bwd_b(const double* gc, const double* a, double* gb, int64_t n, int64_t k, int64_t m);

// coords layout (2, npts): row 0 = u (width axis), row 1 = v (height axis).
// Out-of-range or non-finite coordinates contribute zero (zero padding).
void bilinear_gather(const double* img, int64_t c, int64_t h, int64_t w, const double* coords,
                     int64_t npts, double* out);
void bilinear_scatter(const double* gout, int64_t c, int64_t h, int64_t w, const double* coords,
                      int64_t npts, double* gimg);
// Gradient of the gathered values with respect to the coordinates themselves
// (the interpolation is piecewise linear in u and v). gcoords has shape
// (2, npts) and is overwritten.
void bilinear_scatter_coords(const double* gout, const double* img, int64_t c, int64_t h,
                             int64_t w, const double* coords, int64_t npts, double* gcoords);

// coords layout (3, npts): u, v, d (depth index). Linear in d, bilinear in (u, v).
void trilinear_gather(const double* vol, int64_t c, int64_t dd, int64_t h, int64_t w,
                      const double* coords, int64_t npts, double* out);
void trilinear_scatter(const double* gout, int64_t c, int64_t dd, int64_t h, int64_t w,
                       const double* coords, int64_t npts, double* gvol);
// As bilinear_scatter_coords, for (u, v, d) coordinates; gcoords is (3, npts).
void trilinear_scatter_coords(const double* gout, const double* vol, int64_t c, int64_t dd,
                              int64_t h, int64_t w, const double* coords, int64_t npts,
                              double* gcoords);

// Event scatter into a (bins, h, w) grid. Events carry integer pixels and a
// fractional bin coordinate bstar; the two bin weights sum to exactly 1.
// Accumulation is chunked with a fixed chunk size and partials are combined in
// chunk order, so the result does not depend on the thread count.
void voxel_splat(const int32_t* u, const int32_t* v, const int8_t* p, const double* bstar,
                 int64_t n, int64_t bins, int64_t h, int64_t w, double* out);

// softmax along the middle axis of a logically (outer, axis, inner) tensor.
void softmax_mid(const double* x, double* y, int64_t outer, int64_t axis, int64_t inner);

}  // namespace evstereo::kernels
