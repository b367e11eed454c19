#include "pagesim/fault_handler.hpp"

#include "pagesim/error.hpp"

namespace pagesim {

FaultHandler::FaultHandler(Machine& machine, FaultSizes sizes, FaultLatency latency, ZeroPoolConfig pool)
    : machine_(machine), sizes_(sizes), latency_(latency), pool_(pool) {
  if (!(latency_.fault_1g_sync_ns > 0 && latency_.fault_1g_async_ns > 0 && latency_.fault_2m_ns > 0 &&
        latency_.fault_4k_ns > 0)) {
    fail(Errc::Config, "fault latencies must be positive");
  }
  if (!(latency_.fault_1g_async_ns < latency_.fault_1g_sync_ns)) {
    fail(Errc::Config, "async 1GB fault latency must be below the synchronous one");
  }
}

bool FaultHandler::eligible(Pid pid, Vpn vpn, PageSize size) const {
  const AddressSpace& as = machine_.process(pid);
  const Vpn base = align_down(vpn, frames_of(size));
  return as.areas.covers(base, frames_of(size)) && as.table.mapped_pages(base, size) == 0;
}

FaultOutcome FaultHandler::finish(Pid pid, Vpn vpn, PageSize size, Pfn pfn, double latency, FaultOutcome out) {
  const Vpn base = align_down(vpn, frames_of(size));
  machine_.map_range(pid, base, size, pfn);
  const std::uint64_t seq = seq_++;
  const std::uint64_t n = frames_of(size);
  PhysicalMemory& mem = machine_.memory();
  for (std::uint64_t i = 0; i < n; ++i) mem.set_content(pfn + i, make_content_token(pid, base + i, seq));
  out.mapping = Translation{base, pfn, size};
  out.latency_ns = latency;
  ++stats_.faults[size_index(size)];
  stats_.latency_ns += latency;
  return out;
}

FaultOutcome FaultHandler::handle_fault(Pid pid, Vpn vpn) {
  AddressSpace& as = machine_.process(pid);
  if (!as.areas.covers(vpn, 1)) fail(Errc::NotReserved, "fault outside reserved areas at vpn " + std::to_string(vpn));
  if (as.table.lookup(vpn)) fail(Errc::Overlap, "fault on mapped vpn " + std::to_string(vpn));
  PhysicalMemory& mem = machine_.memory();
  FaultOutcome out;

  if (sizes_.allow_1g && eligible(pid, vpn, PageSize::k1G)) {
    out.attempted_1g = true;
    ++stats_.attempts_1g;
    if (pool_.enabled) {
      for (std::size_t r = 0; r < mem.region_count(); ++r) {
        if (!mem.is_zeroed(r)) continue;
        const Pfn base = static_cast<Pfn>(r) * kRegionFrames;
        if (mem.claim_block(base, kMaxOrder, Movability::Movable)) {
          out.from_zero_pool = true;
          ++stats_.zero_pool_hits;
          return finish(pid, vpn, PageSize::k1G, base, latency_.fault_1g_async_ns, out);
        }
      }
    }
    if (auto p = mem.try_alloc_block(kMaxOrder, Movability::Movable)) {
      return finish(pid, vpn, PageSize::k1G, *p, latency_.fault_1g_sync_ns, out);
    }
    out.failed_1g = true;
    ++stats_.failures_1g;
  }
  if (sizes_.allow_2m && eligible(pid, vpn, PageSize::k2M)) {
    if (auto p = mem.try_alloc_block(order_of(PageSize::k2M), Movability::Movable)) {
      return finish(pid, vpn, PageSize::k2M, *p, latency_.fault_2m_ns, out);
    }
  }
  if (auto p = mem.try_alloc_block(0, Movability::Movable)) {
    return finish(pid, vpn, PageSize::k4K, *p, latency_.fault_4k_ns, out);
  }
  fail(Errc::OutOfMemory, "no free frame for fault at vpn " + std::to_string(vpn));
}

std::size_t FaultHandler::zero_pool_tick() {
  if (!pool_.enabled) return 0;
  PhysicalMemory& mem = machine_.memory();
  std::size_t done = 0;
  for (std::size_t r = 0; r < mem.region_count() && done < pool_.fill_rate; ++r) {
    if (mem.zeroed_count() >= pool_.capacity) break;
    const Pfn base = static_cast<Pfn>(r) * kRegionFrames;
    if (mem.is_zeroed(r) || base + kRegionFrames > mem.frame_count()) continue;
    if (mem.free_block_count(kMaxOrder) == 0) break;
    // Only whole listed 1GB blocks qualify.
    if (mem.is_free_block(base, kMaxOrder)) {
      mem.mark_zeroed(r);
      ++done;
    }
  }
  stats_.zeroed_blocks += done;
  return done;
}

}  // namespace pagesim
