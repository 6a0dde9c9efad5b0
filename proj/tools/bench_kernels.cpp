// Times the OpenMP kernels against their serial reference twins on
// forward-pass-sized problems and verifies agreement. All kernels must match
// bitwise except voxel_splat, whose chunked reduction reassociates the sums
// (compared within 1e-12 instead).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "evstereo/kernels.hpp"
#include "evstereo/ref_kernels.hpp"
#include "evstereo/rng.hpp"

using namespace evstereo;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<double> rand_vec(int64_t n, DetRng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

int failures = 0;

void report(const char* name, double serial_ms, double parallel_ms, double max_abs_diff,
            double tolerance) {
  bool ok = max_abs_diff <= tolerance;
  if (!ok) ++failures;
  std::printf("%-18s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   max diff %.3g %s\n",
              name, serial_ms, parallel_ms, serial_ms / parallel_ms, max_abs_diff,
              ok ? "" : "MISMATCH");
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

int main() {
  DetRng rng(1234);
  const int reps = 5;

  {
    kernels::Conv2Dims d{16, 96, 128, 32, 3, 3, 1, 1, 1, 1, 96, 128};
    auto x = rand_vec(d.cin * d.h * d.w, rng);
    auto w = rand_vec(d.cout * d.cin * d.kh * d.kw, rng);
    auto b = rand_vec(d.cout, rng);
    std::vector<double> ys(size_t(d.cout * d.oh * d.ow)), yp(ys.size());
    double ts = time_ms([&] { ref::conv2d_fwd(x.data(), w.data(), b.data(), ys.data(), d); }, reps);
    double tp =
        time_ms([&] { kernels::conv2d_fwd(x.data(), w.data(), b.data(), yp.data(), d); }, reps);
    report("conv2d_fwd", ts, tp, max_diff(ys, yp), 0.0);

    auto gy = rand_vec(d.cout * d.oh * d.ow, rng);
    std::vector<double> gxs(x.size()), gxp(x.size());
    ts = time_ms([&] { ref::conv2d_bwd_input(gy.data(), w.data(), gxs.data(), d); }, reps);
    tp = time_ms([&] { kernels::conv2d_bwd_input(gy.data(), w.data(), gxp.data(), d); }, reps);
    report("conv2d_bwd_input", ts, tp, max_diff(gxs, gxp), 0.0);

    std::vector<double> gws(w.size()), gwp(w.size());
    ts = time_ms([&] { ref::conv2d_bwd_weight(gy.data(), x.data(), gws.data(), d); }, reps);
    tp = time_ms([&] { kernels::conv2d_bwd_weight(gy.data(), x.data(), gwp.data(), d); }, reps);
    report("conv2d_bwd_weight", ts, tp, max_diff(gws, gwp), 0.0);
  }

  {
    kernels::Conv3Dims d{16, 24, 32, 40, 8, 3, 3, 3, 1, 1, 1, 1, 1, 1, 24, 32, 40};
    auto x = rand_vec(d.cin * d.d0 * d.d1 * d.d2, rng);
    auto w = rand_vec(d.cout * d.cin * d.k0 * d.k1 * d.k2, rng);
    auto b = rand_vec(d.cout, rng);
    std::vector<double> ys(size_t(d.cout * d.o0 * d.o1 * d.o2)), yp(ys.size());
    double ts = time_ms([&] { ref::conv3d_fwd(x.data(), w.data(), b.data(), ys.data(), d); }, reps);
    double tp =
        time_ms([&] { kernels::conv3d_fwd(x.data(), w.data(), b.data(), yp.data(), d); }, reps);
    report("conv3d_fwd", ts, tp, max_diff(ys, yp), 0.0);
  }

  {
    const int64_t n = 256, k = 384, m = 256;
    auto a = rand_vec(n * k, rng);
    auto b = rand_vec(k * m, rng);
    std::vector<double> cs(size_t(n * m)), cp(cs.size());
    double ts = time_ms([&] { ref::matmul_fwd(a.data(), b.data(), cs.data(), n, k, m); }, reps);
    double tp = time_ms([&] { kernels::matmul_fwd(a.data(), b.data(), cp.data(), n, k, m); }, reps);
    report("matmul_fwd", ts, tp, max_diff(cs, cp), 0.0);
  }

  {
    const int64_t c = 16, h = 96, w = 128, npts = 50000;
    auto img = rand_vec(c * h * w, rng);
    std::vector<double> coords(size_t(2 * npts));
    for (int64_t i = 0; i < npts; ++i) {
      coords[size_t(i)] = rng.uniform(-2.0, double(w) + 1.0);
      coords[size_t(npts + i)] = rng.uniform(-2.0, double(h) + 1.0);
    }
    std::vector<double> os(size_t(c * npts)), op(os.size());
    double ts = time_ms(
        [&] { ref::bilinear_gather(img.data(), c, h, w, coords.data(), npts, os.data()); }, reps);
    double tp = time_ms(
        [&] { kernels::bilinear_gather(img.data(), c, h, w, coords.data(), npts, op.data()); },
        reps);
    report("bilinear_gather", ts, tp, max_diff(os, op), 0.0);
  }

  {
    const int64_t c = 8, dd = 24, h = 48, w = 64, npts = 50000;
    auto vol = rand_vec(c * dd * h * w, rng);
    std::vector<double> coords(size_t(3 * npts));
    for (int64_t i = 0; i < npts; ++i) {
      coords[size_t(i)] = rng.uniform(-1.0, double(w));
      coords[size_t(npts + i)] = rng.uniform(-1.0, double(h));
      coords[size_t(2 * npts + i)] = rng.uniform(-1.0, double(dd));
    }
    std::vector<double> os(size_t(c * npts)), op(os.size());
    double ts = time_ms(
        [&] { ref::trilinear_gather(vol.data(), c, dd, h, w, coords.data(), npts, os.data()); },
        reps);
    double tp = time_ms(
        [&] {
          kernels::trilinear_gather(vol.data(), c, dd, h, w, coords.data(), npts, op.data());
        },
        reps);
    report("trilinear_gather", ts, tp, max_diff(os, op), 0.0);
  }

  {
    const int64_t n = 500000, bins = 5, h = 480, w = 640;
    std::vector<int32_t> u(static_cast<size_t>(n)), v(static_cast<size_t>(n));
    std::vector<int8_t> p(static_cast<size_t>(n));
    std::vector<double> bstar(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      u[size_t(i)] = int32_t(rng.uniform_int(w));
      v[size_t(i)] = int32_t(rng.uniform_int(h));
      p[size_t(i)] = rng.uniform() < 0.5 ? int8_t(-1) : int8_t(1);
      bstar[size_t(i)] = rng.uniform(0.0, double(bins - 1));
    }
    std::vector<double> os(size_t(bins * h * w)), op(os.size());
    double ts = time_ms(
        [&] {
          std::fill(os.begin(), os.end(), 0.0);
          ref::voxel_splat(u.data(), v.data(), p.data(), bstar.data(), n, bins, h, w, os.data());
        },
        reps);
    double tp = time_ms(
        [&] {
          std::fill(op.begin(), op.end(), 0.0);
          kernels::voxel_splat(u.data(), v.data(), p.data(), bstar.data(), n, bins, h, w,
                               op.data());
        },
        reps);
    report("voxel_splat", ts, tp, max_diff(os, op), 1e-12);
  }

  if (failures) {
    std::printf("%d kernel(s) disagree with the serial reference\n", failures);
    return 1;
  }
  return 0;
}
