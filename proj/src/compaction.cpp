#include "pagesim/compaction.hpp"

#include <algorithm>

#include "pagesim/error.hpp"

namespace pagesim {

std::string_view to_string(CompactionEngine engine) {
  return engine == CompactionEngine::Smart ? "smart" : "normal";
}

std::string compaction_csv_header() { return "engine,success,frames_copied,wasted_frames,regions_scanned"; }

std::string compaction_csv_row(const CompactionReport& r) {
  return std::string(to_string(r.engine)) + "," + (r.success ? "1" : "0") + "," + std::to_string(r.frames_copied) + "," +
         std::to_string(r.wasted_frames) + "," + std::to_string(r.regions_scanned);
}

Compactor::Compactor(Machine& machine)
    : machine_(machine), target_cursor_(machine.memory().frame_count() - 1) {}

std::optional<Pfn> Compactor::next_target(Pfn window_base, std::uint64_t window_frames) {
  const PhysicalMemory& mem = machine_.memory();
  const std::uint64_t n = mem.frame_count();
  if (mem.free_frames() == 0) return std::nullopt;
  // At most one full sweep, wrapping from frame 0 back to the top.
  Pfn p = std::min(target_cursor_, n - 1);
  std::uint64_t visited = 0;
  while (visited < n) {
    if (p >= window_base && p < window_base + window_frames) {
      visited += p - window_base + 1;
      p = window_base == 0 ? n - 1 : window_base - 1;
      continue;
    }
    if (mem.kind(p) == FrameKind::Free) {
      target_cursor_ = p == 0 ? n - 1 : p - 1;
      return p;
    }
    ++visited;
    p = p == 0 ? n - 1 : p - 1;
  }
  return std::nullopt;
}

CompactionReport Compactor::normal_compact(int order) {
  if (order < 0 || order > kMaxOrder) fail(Errc::InvalidArgument, "compaction order out of range");
  PhysicalMemory& mem = machine_.memory();
  CompactionReport report;
  report.engine = CompactionEngine::Normal;
  if (auto existing = mem.peek_alloc(order)) {
    report.success = true;
    report.freed_block = Block{*existing, order};
    return report;
  }

  const std::uint64_t size = 1ull << order;
  const std::uint64_t windows = mem.frame_count() / size;
  if (windows == 0) return report;
  std::uint64_t start = (source_cursor_ / size) % windows;
  for (std::uint64_t k = 0; k < windows; ++k) {
    const std::uint64_t w = (start + k) % windows;
    const Pfn base = w * size;
    source_cursor_ = base + size >= windows * size ? 0 : base + size;
    ++report.regions_scanned;
    std::uint64_t copies = 0;
    bool aborted = false;
    for (Pfn p = base; p < base + size; ++p) {
      const FrameKind kind = mem.kind(p);
      if (kind == FrameKind::Free) continue;
      auto owner = mem.owner(p);
      if (kind == FrameKind::Unmovable || !owner || mem.map_order(p) >= order) {
        aborted = true;
        break;
      }
      if (mem.map_order(p) != 0) machine_.split_mapping(owner->pid, owner->vpn);
      auto target = next_target(base, size);
      if (!target) {
        aborted = true;
        break;
      }
      if (!mem.claim_block(*target, 0, Movability::Movable)) fail(Errc::InvariantViolation, "target frame vanished");
      machine_.migrate_frame(p, *target);
      ++copies;
    }
    report.frames_copied += copies;
    if (aborted) {
      report.wasted_frames += copies;
      continue;
    }
    report.success = true;
    report.freed_block = Block{base, order};
    return report;
  }
  return report;
}

bool Compactor::region_holds_gigantic_mapping(std::size_t region) const {
  const PhysicalMemory& mem = machine_.memory();
  const Pfn base = static_cast<Pfn>(region) * kRegionFrames;
  return mem.owner(base) && mem.map_order(base) == kMaxOrder;
}

std::optional<std::size_t> Compactor::smart_source() const {
  const PhysicalMemory& mem = machine_.memory();
  std::optional<std::size_t> best;
  std::uint64_t best_free = 0;
  for (std::size_t r = 0; r < mem.region_count(); ++r) {
    if (mem.region_capacity(r) != kRegionFrames) continue;
    const RegionStats s = mem.region_stats(r);
    if (s.unmovable_count != 0 || s.free_count >= kRegionFrames) continue;
    if (region_holds_gigantic_mapping(r)) continue;
    if (!best || s.free_count > best_free) {
      best = r;
      best_free = s.free_count;
    }
  }
  return best;
}

std::vector<std::size_t> Compactor::smart_targets(std::size_t source) const {
  const PhysicalMemory& mem = machine_.memory();
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < mem.region_count(); ++r) {
    if (r != source && mem.region_stats(r).free_count > 0) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
    return mem.region_stats(a).free_count < mem.region_stats(b).free_count;
  });
  return out;
}

CompactionReport Compactor::smart_compact() {
  PhysicalMemory& mem = machine_.memory();
  CompactionReport report;
  report.engine = CompactionEngine::Smart;
  if (auto existing = mem.peek_alloc(kMaxOrder)) {
    report.success = true;
    report.freed_block = Block{*existing, kMaxOrder};
    return report;
  }
  auto source = smart_source();
  if (!source) return report;
  const std::uint64_t occupied = kRegionFrames - mem.region_stats(*source).free_count;
  const std::vector<std::size_t> targets = smart_targets(*source);
  std::uint64_t room = 0;
  for (std::size_t t : targets) room += mem.region_stats(t).free_count;
  report.regions_scanned = 1;
  if (room < occupied) return report;

  std::size_t ti = 0;
  Pfn tp = static_cast<Pfn>(targets[0]) * kRegionFrames;
  const Pfn base = static_cast<Pfn>(*source) * kRegionFrames;
  bool opened = false;
  for (Pfn p = base; p < base + kRegionFrames; ++p) {
    if (mem.kind(p) == FrameKind::Free) continue;
    auto owner = mem.owner(p);
    if (!owner) fail(Errc::InvariantViolation, "movable frame " + std::to_string(p) + " has no owner");
    if (mem.map_order(p) != 0) machine_.split_mapping(owner->pid, owner->vpn);
    // Lowest free frame of the current target; spill to the next when it fills.
    while (true) {
      const std::size_t region = targets[ti];
      const Pfn end = static_cast<Pfn>(region) * kRegionFrames + mem.region_capacity(region);
      while (tp < end && mem.kind(tp) != FrameKind::Free) ++tp;
      if (tp < end) break;
      ++ti;
      tp = static_cast<Pfn>(targets[ti]) * kRegionFrames;
      opened = false;
    }
    if (!opened) {
      ++report.regions_scanned;
      opened = true;
    }
    if (!mem.claim_block(tp, 0, Movability::Movable)) fail(Errc::InvariantViolation, "target frame vanished");
    machine_.migrate_frame(p, tp);
    ++report.frames_copied;
  }
  report.success = true;
  report.freed_block = Block{base, kMaxOrder};
  return report;
}

}  // namespace pagesim
