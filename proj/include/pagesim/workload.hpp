#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pagesim/machine.hpp"
#include "pagesim/rng.hpp"

namespace pagesim {

// ---- fragmentation ----

struct FragmentationSpec {
  double occupied_fraction = 0.7;    // of all frames
  double unmovable_fraction = 0.02;  // of occupied frames
  double clustering = 8;             // mean run length in frames
  std::uint64_t seed = 1;
  // Highest-addressed regions left untouched, like memory the cache never reached.
  std::size_t pristine_regions = 1;
  // Share of the remaining regions that may hold unmovable runs.
  double unmovable_region_fraction = 0.5;
  // 0 gives every touched region the same occupancy; 1 gives a linear
  // gradient with the lowest region densest.
  double region_skew = 0;

  // Throws Config on out-of-range fields.
  void validate() const;
};

struct FragmentationReport {
  std::uint64_t occupied_frames = 0;
  std::uint64_t unmovable_frames = 0;
  std::uint64_t runs = 0;
};

// Fills memory the way a file cache populated by random-offset reads does:
// geometric runs of frames at random offsets, per-region targets following
// the skew. Movable runs become 4KB pages of `cache_pid`, a non-promotable
// process created on demand. Throws SpecInfeasible when the occupancy cannot
// fit in the touched regions.
FragmentationReport fragment_memory(Machine& machine, const FragmentationSpec& spec, Pid cache_pid);

// ---- traces ----

enum class TraceOpKind : std::uint8_t { Reserve, Release, Access, Tick };

struct TraceOp {
  TraceOpKind kind = TraceOpKind::Access;
  Pid pid = 0;
  std::uint64_t address = 0;  // bytes; Reserve/Release start or Access address
  std::uint64_t length = 0;   // bytes for Reserve/Release, access count for Access
  std::uint64_t time_ns = 0;  // Tick only
  std::size_t line = 0;       // source line when parsed; not part of equality

  static TraceOp reserve(Pid pid, std::uint64_t start, std::uint64_t bytes) {
    return {TraceOpKind::Reserve, pid, start, bytes, 0, 0};
  }
  static TraceOp release(Pid pid, std::uint64_t start, std::uint64_t bytes) {
    return {TraceOpKind::Release, pid, start, bytes, 0, 0};
  }
  static TraceOp access(Pid pid, std::uint64_t va, std::uint64_t count = 1) {
    return {TraceOpKind::Access, pid, va, count, 0, 0};
  }
  static TraceOp tick(std::uint64_t time_ns) { return {TraceOpKind::Tick, 0, 0, 0, time_ns, 0}; }

  friend bool operator==(const TraceOp& a, const TraceOp& b) {
    return a.kind == b.kind && a.pid == b.pid && a.address == b.address && a.length == b.length &&
           a.time_ns == b.time_ns;
  }
};

// "R pid start len", "F pid start len", "A pid va count", "T nanos".
std::string format_trace_op(const TraceOp& op);
// nullopt for blank and comment lines. Throws ParseError carrying `line`.
std::optional<TraceOp> parse_trace_line(std::string_view text, std::size_t line);

// Pulls one op at a time from a stream; memory does not grow with trace length.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in) : in_(&in) {}
  // Throws ParseError if the file cannot be opened.
  explicit TraceReader(const std::string& path);

  std::optional<TraceOp> next();
  std::size_t line() const { return line_; }

 private:
  std::ifstream file_;
  std::istream* in_;
  std::string buffer_;
  std::size_t line_ = 0;
};

enum class AccessPattern : std::uint8_t { Sequential, UniformRandom, Zipf };

std::string_view to_string(AccessPattern pattern);
std::optional<AccessPattern> parse_access_pattern(std::string_view text);

// Samples ranks 1..n with probability proportional to rank^-s in constant
// time and memory (rejection-inversion).
class ZipfSampler {
 public:
  ZipfSampler(std::uint64_t n, double s);
  std::uint64_t sample(Rng& rng) const;

 private:
  double h(double x) const;
  double h_integral(double x) const;
  double h_integral_inverse(double x) const;

  std::uint64_t n_;
  double s_;
  double h_integral_x1_;
  double h_integral_n_;
  double threshold_;
};

struct TraceArea {
  std::uint64_t start = 1ull << 30;  // bytes, 4KB aligned
  std::uint64_t bytes = 1ull << 30;
  double weight = 1;  // share of accesses
};

struct TraceSpec {
  AccessPattern pattern = AccessPattern::UniformRandom;
  double zipf_s = 1.0;
  Pid pid = 1;
  std::vector<TraceArea> areas{TraceArea{}};
  std::uint64_t accesses = 1'000'000;
  std::uint64_t seed = 1;
  bool touch_first = false;         // write every page once, in address order, before the random phase
  std::uint64_t tick_every = 0;     // accesses between ticks; 0 for none
  std::uint64_t tick_ns = 1'000'000;

  // Throws Config.
  void validate() const;
};

// Streams the ops of a TraceSpec: the reservations, the optional touch pass,
// then `accesses` single-page accesses interleaved with ticks. A pure function
// of the spec.
class TraceGenerator {
 public:
  explicit TraceGenerator(TraceSpec spec);

  std::optional<TraceOp> next();

 private:
  TraceOp draw();

  TraceSpec spec_;
  Rng rng_;
  std::vector<double> cumulative_;
  std::vector<ZipfSampler> zipf_;
  std::vector<std::uint64_t> seq_cursor_;
  std::size_t reserve_index_ = 0;
  std::size_t touch_area_ = 0;
  std::uint64_t touch_page_ = 0;
  std::uint64_t emitted_ = 0;
  std::uint64_t since_tick_ = 0;
  std::uint64_t ticks_ = 0;
};

// Writes every op of the generator; returns the count.
std::uint64_t write_trace(TraceGenerator& generator, std::ostream& out);

}  // namespace pagesim
