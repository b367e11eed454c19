#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

#include "pagesim/machine.hpp"

namespace pagesim {

struct FaultLatency {
  double fault_1g_sync_ns = 400e6;
  double fault_1g_async_ns = 2.7e6;
  double fault_2m_ns = 850e3;
  double fault_4k_ns = 5e3;
};

struct ZeroPoolConfig {
  bool enabled = true;
  std::size_t capacity = 4;   // 1GB blocks kept zeroed
  std::size_t fill_rate = 1;  // blocks zeroed per tick
};

// Which page sizes a fault may map.
struct FaultSizes {
  bool allow_1g = true;
  bool allow_2m = true;
};

struct FaultOutcome {
  Translation mapping;
  double latency_ns = 0;
  bool attempted_1g = false;
  bool failed_1g = false;
  bool from_zero_pool = false;
};

struct FaultStats {
  std::array<std::uint64_t, 3> faults{};  // by size index
  double latency_ns = 0;
  std::uint64_t attempts_1g = 0;
  std::uint64_t failures_1g = 0;
  std::uint64_t zero_pool_hits = 0;
  std::uint64_t zeroed_blocks = 0;
};

// Page-fault size policy: a fault inside a 1GB window that is fully reserved
// and not yet mapped at all tries a 1GB block (pre-zeroed first), then the
// enclosing 2MB window under the same test, then a single 4KB frame. No
// compaction happens on the fault path.
class FaultHandler {
 public:
  FaultHandler(Machine& machine, FaultSizes sizes = {}, FaultLatency latency = {}, ZeroPoolConfig pool = {});

  // The page must be reserved and unmapped. Throws OutOfMemory when not even a
  // 4KB frame is free, NotReserved or Overlap on a bad address.
  FaultOutcome handle_fault(Pid pid, Vpn vpn);

  // Zero-fills up to fill_rate free 1GB blocks, bounded by capacity. Returns how many.
  std::size_t zero_pool_tick();

  // Whether a fault at vpn would be allowed to try this size right now.
  bool eligible(Pid pid, Vpn vpn, PageSize size) const;

  const FaultStats& stats() const { return stats_; }
  const FaultLatency& latency() const { return latency_; }
  std::uint64_t sequence() const { return seq_; }

 private:
  FaultOutcome finish(Pid pid, Vpn vpn, PageSize size, Pfn pfn, double latency, FaultOutcome out);

  Machine& machine_;
  FaultSizes sizes_;
  FaultLatency latency_;
  ZeroPoolConfig pool_;
  FaultStats stats_;
  std::uint64_t seq_ = 0;
};

}  // namespace pagesim
