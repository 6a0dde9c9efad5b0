#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace evstereo {

// One sensor event. Timestamps are integer microseconds; polarity is -1 or +1.
struct Event {
  int64_t t_us = 0;
  int32_t u = 0;
  int32_t v = 0;
  int32_t p = 1;
};

// Time-ordered events from one camera.
struct EventStream {
  int32_t width = 0;
  int32_t height = 0;
  std::vector<Event> events;

  bool empty() const { return events.empty(); }
  int64_t t_first() const { return events.front().t_us; }
  int64_t t_last() const { return events.back().t_us; }
};

// Checks coordinate bounds, polarity domain, and non-decreasing timestamps.
// Throws ContractError on violation.
void validate_stream(const EventStream& s);

// Events with tau - dtau <= t < tau, order preserved. dtau must be positive.
EventStream slice_stream(const EventStream& s, int64_t tau_us, int64_t dtau_us);

// Query instants j * span / time_slice past t_active_start for j = 1..time_slice.
// The last instant lands exactly on t_active_end.
std::vector<int64_t> blind_time_instants(int64_t t_active_start, int64_t t_active_end,
                                         int time_slice);

// CSV form: header "t_us,u,v,p", one event per line. Sensor size is not stored
// in the CSV, so the caller supplies it on load.
EventStream load_events_csv(const std::string& path, int32_t width, int32_t height);
void save_events_csv(const std::string& path, const EventStream& s);

// Binary form: magic "EVT1", little-endian header (W: u16, H: u16, count: u64),
// then records (t: u64, u: u16, v: u16, p: i8).
EventStream load_events_evt1(const std::string& path);
void save_events_evt1(const std::string& path, const EventStream& s);

}  // namespace evstereo
