#pragma once
#include "evstereo/kernels.hpp"

// Serial reference implementations of the parallel kernels, kept for tests and
// the bench_kernels comparison tool. Per-output accumulation order matches the
// parallel kernels, so results are bitwise equal except voxel_splat, which
// accumulates in plain event order (the parallel version combines fixed-size
// chunks; both are deterministic, they differ by float association only).
namespace evstereo::ref {

using kernels::Conv2Dims;
using kernels::Conv3Dims;

void conv2d_fwd(const double* x, const double* w, const double* b, double* y, const Conv2Dims& d);
void conv2d_bwd_input(const double* gy, const double* w, double* gx, const Conv2Dims& d);
void conv2d_bwd_weight(const double* gy, const double* x, double* gw, const Conv2Dims& d);

void conv3d_fwd(const double* x, const double* w, const double* b, double* y, const Conv3Dims& d);

void matmul_fwd(const double* a, const double* b, double* c, int64_t n, int64_t k, int64_t m);

void bilinear_gather(const double* img, int64_t c, int64_t h, int64_t w, const double* coords,
                     int64_t npts, double* out);
void trilinear_gather(const double* vol, int64_t c, int64_t dd, int64_t h, int64_t w,
                      const double* coords, int64_t npts, double* out);

void voxel_splat(const int32_t* u, const int32_t* v, const int8_t* p, const double* bstar,
                 int64_t n, int64_t bins, int64_t h, int64_t w, double* out);

}  // namespace evstereo::ref
