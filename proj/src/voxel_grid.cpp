#include "evstereo/voxel_grid.hpp"

#include "evstereo/errors.hpp"
#include "evstereo/kernels.hpp"

namespace evstereo {

Tensor build_voxel_grid(const EventStream& s, int bins) {
  contract(bins >= 1, "voxel grid needs at least one bin");
  contract(s.width > 0 && s.height > 0, "voxel grid needs a positive sensor size");
  Tensor grid = Tensor::zeros({bins, s.height, s.width});
  if (s.events.empty()) return grid;

  const int64_t t0 = s.t_first();
  const int64_t span = s.t_last() - t0;
  const size_t n = s.events.size();

  std::vector<int32_t> us(n), vs(n);
  std::vector<int8_t> ps(n);
  std::vector<double> bs(n);
  for (size_t i = 0; i < n; ++i) {
    const Event& e = s.events[i];
    us[i] = e.u;
    vs[i] = e.v;
    ps[i] = int8_t(e.p);
    // integer differences keep the ratio exact under affine timestamp remaps
    bs[i] = (span == 0 || bins == 1) ? 0.0
                                     : double(bins - 1) * double(e.t_us - t0) / double(span);
  }
  kernels::voxel_splat(us.data(), vs.data(), ps.data(), bs.data(), int64_t(n), bins, s.height,
                       s.width, grid.data());
  return grid;
}

Tensor accumulate_motion_scaled(const EventStream& s, const BlindWindow& w, int bins) {
  contract(w.dtau_us > 0, "lookback duration must be positive");
  contract(w.motion_scale >= 1, "motion_scale must be at least 1");
  EventStream sliced = slice_stream(s, w.tau_us, int64_t(w.motion_scale) * w.dtau_us);
  return build_voxel_grid(sliced, bins);
}

}  // namespace evstereo
