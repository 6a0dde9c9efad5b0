#include "evstereo/events.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "evstereo/errors.hpp"

namespace evstereo {

void validate_stream(const EventStream& s) {
  contract(s.width > 0 && s.height > 0, "stream sensor size must be positive");
  int64_t prev = INT64_MIN;
  for (size_t i = 0; i < s.events.size(); ++i) {
    const Event& e = s.events[i];
    contract(e.u >= 0 && e.u < s.width && e.v >= 0 && e.v < s.height,
             "event " + std::to_string(i) + " outside sensor bounds");
    contract(e.p == -1 || e.p == 1, "event " + std::to_string(i) + " polarity must be -1 or +1");
    contract(e.t_us >= prev, "event timestamps must be non-decreasing at index " +
                                 std::to_string(i));
    prev = e.t_us;
  }
}

EventStream slice_stream(const EventStream& s, int64_t tau_us, int64_t dtau_us) {
  contract(dtau_us > 0, "slice duration must be positive");
  EventStream out;
  out.width = s.width;
  out.height = s.height;
  const int64_t lo = tau_us - dtau_us;
  auto cmp = [](const Event& e, int64_t t) { return e.t_us < t; };
  auto first = std::lower_bound(s.events.begin(), s.events.end(), lo, cmp);
  auto last = std::lower_bound(first, s.events.end(), tau_us, cmp);
  out.events.assign(first, last);
  return out;
}

std::vector<int64_t> blind_time_instants(int64_t t_active_start, int64_t t_active_end,
                                         int time_slice) {
  contract(t_active_end > t_active_start, "active span must be positive");
  contract(time_slice >= 1, "time_slice must be at least 1");
  const int64_t span = t_active_end - t_active_start;
  std::vector<int64_t> out;
  out.reserve(size_t(time_slice));
  for (int j = 1; j <= time_slice; ++j)
    out.push_back(t_active_start + span * int64_t(j) / int64_t(time_slice));
  return out;
}

EventStream load_events_csv(const std::string& path, int32_t width, int32_t height) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open event CSV: " + path);
  EventStream s;
  s.width = width;
  s.height = height;
  std::string line;
  if (!std::getline(in, line)) throw IoError("event CSV is empty: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  contract(line == "t_us,u,v,p", "event CSV header must be 't_us,u,v,p': " + path);
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    Event e;
    long long t;
    int u, v, p;
    if (std::sscanf(line.c_str(), "%lld,%d,%d,%d", &t, &u, &v, &p) != 4)
      throw IoError(path + ":" + std::to_string(lineno) + ": malformed event row");
    e.t_us = t;
    e.u = u;
    e.v = v;
    e.p = p;
    s.events.push_back(e);
  }
  validate_stream(s);
  return s;
}

void save_events_csv(const std::string& path, const EventStream& s) {
  validate_stream(s);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write event CSV: " + path);
  out << "t_us,u,v,p\n";
  for (const Event& e : s.events)
    out << e.t_us << ',' << e.u << ',' << e.v << ',' << e.p << '\n';
  if (!out) throw IoError("write failure on event CSV: " + path);
}

namespace {

template <typename T>
void read_raw(std::istream& in, T* v, const std::string& path) {
  in.read(reinterpret_cast<char*>(v), sizeof(T));
  if (!in) throw IoError("truncated event file: " + path);
}

template <typename T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace

EventStream load_events_evt1(const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "event binary I/O assumes a little-endian host");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "EVT1", 4) != 0)
    throw IoError("bad magic in event file: " + path);
  uint16_t w = 0, h = 0;
  uint64_t count = 0;
  read_raw(in, &w, path);
  read_raw(in, &h, path);
  read_raw(in, &count, path);
  EventStream s;
  s.width = w;
  s.height = h;
  s.events.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    uint64_t t;
    uint16_t u, v;
    int8_t p;
    read_raw(in, &t, path);
    read_raw(in, &u, path);
    read_raw(in, &v, path);
    read_raw(in, &p, path);
    s.events[i] = Event{int64_t(t), int32_t(u), int32_t(v), int32_t(p)};
  }
  validate_stream(s);
  return s;
}

void save_events_evt1(const std::string& path, const EventStream& s) {
  validate_stream(s);
  contract(s.width <= UINT16_MAX && s.height <= UINT16_MAX,
           "sensor size exceeds the event binary format range");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write event file: " + path);
  out.write("EVT1", 4);
  write_raw(out, uint16_t(s.width));
  write_raw(out, uint16_t(s.height));
  write_raw(out, uint64_t(s.events.size()));
  for (const Event& e : s.events) {
    contract(e.t_us >= 0, "event binary format requires non-negative timestamps");
    write_raw(out, uint64_t(e.t_us));
    write_raw(out, uint16_t(e.u));
    write_raw(out, uint16_t(e.v));
    write_raw(out, int8_t(e.p));
  }
  if (!out) throw IoError("write failure on event file: " + path);
}

}  // namespace evstereo
