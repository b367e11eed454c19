#include "pagesim/machine.hpp"

#include <algorithm>

#include "pagesim/error.hpp"

namespace pagesim {

Machine::Machine(std::uint64_t frames, PhysicalMemory::Options options) : mem_(frames, options) {}

AddressSpace& Machine::create_process(Pid pid, bool promotable) {
  if (procs_.count(pid)) fail(Errc::InvalidArgument, "process " + std::to_string(pid) + " already exists");
  AddressSpace& as = procs_[pid];
  as.pid = pid;
  as.promotable = promotable;
  return as;
}

AddressSpace& Machine::process(Pid pid) {
  auto it = procs_.find(pid);
  if (it == procs_.end()) fail(Errc::InvalidArgument, "no process " + std::to_string(pid));
  return it->second;
}

const AddressSpace& Machine::process(Pid pid) const {
  auto it = procs_.find(pid);
  if (it == procs_.end()) fail(Errc::InvalidArgument, "no process " + std::to_string(pid));
  return it->second;
}

std::vector<Pid> Machine::pids() const {
  std::vector<Pid> out;
  for (const auto& [pid, as] : procs_) out.push_back(pid);
  return out;
}

void Machine::reserve_area(Pid pid, Vpn start, std::uint64_t pages) { process(pid).areas.reserve(start, pages); }

void Machine::release_area(Pid pid, Vpn start, std::uint64_t pages) {
  AddressSpace& as = process(pid);
  if (!as.areas.covers(start, pages)) {
    fail(Errc::NotReserved, "release of unreserved range at vpn " + std::to_string(start));
  }
  const Vpn end = start + pages;
  // Large mappings straddling either edge are demoted first.
  for (Vpn edge : {start, end}) {
    if (auto t = as.table.lookup(edge); t && t->size != PageSize::k4K && t->vpn != edge) split_mapping(pid, edge);
  }
  std::vector<Translation> doomed;
  as.table.for_each(start, end, [&](const Translation& t) { doomed.push_back(t); });
  for (const Translation& t : doomed) unmap_range(pid, t.vpn, t.size);
  as.areas.release(start, pages);
}

void Machine::map_range(Pid pid, Vpn vpn, PageSize size, Pfn pfn) {
  AddressSpace& as = process(pid);
  const std::uint64_t n = frames_of(size);
  if (!is_aligned(vpn, n) || !is_aligned(pfn, n)) fail(Errc::Alignment, "unaligned " + std::string(to_string(size)) + " mapping");
  if (!as.areas.covers(vpn, n)) fail(Errc::NotReserved, "vpn " + std::to_string(vpn) + " is outside reserved areas");
  if (pfn + n > mem_.frame_count() || mem_.allocated_order(pfn) != order_of(size)) {
    fail(Errc::UnknownBlock, "pfn " + std::to_string(pfn) + " is not an allocated " + std::string(to_string(size)) + " block");
  }
  if (mem_.owner(pfn)) fail(Errc::Overlap, "pfn " + std::to_string(pfn) + " is already mapped");
  as.table.insert(vpn, size, pfn);
  for (std::uint64_t i = 0; i < n; ++i) mem_.set_owner(pfn + i, OwnerRef{pid, vpn + i}, order_of(size));
}

void Machine::unmap_range(Pid pid, Vpn vpn, PageSize size) {
  AddressSpace& as = process(pid);
  const Pfn pfn = as.table.erase(vpn, size);
  const std::uint64_t n = frames_of(size);
  for (std::uint64_t i = 0; i < n; ++i) mem_.clear_owner(pfn + i);
  mem_.free_block(pfn, order_of(size));
  notify(pid, Translation{vpn, pfn, size});
}

void Machine::split_mapping(Pid pid, Vpn vpn) {
  AddressSpace& as = process(pid);
  auto t = as.table.lookup(vpn);
  if (!t) fail(Errc::NotMapped, "vpn " + std::to_string(vpn) + " is not mapped");
  if (t->size == PageSize::k4K) return;
  const std::uint64_t n = frames_of(t->size);
  as.table.erase(t->vpn, t->size);
  mem_.split_block(t->pfn, order_of(t->size));
  for (std::uint64_t i = 0; i < n; ++i) {
    as.table.insert(t->vpn + i, PageSize::k4K, t->pfn + i);
    mem_.set_map_order(t->pfn + i, 0);
  }
  notify(pid, *t);
}

void Machine::migrate_frame(Pfn from, Pfn to) {
  auto owner = mem_.owner(from);
  if (!owner || mem_.map_order(from) != 0) fail(Errc::InvalidArgument, "frame " + std::to_string(from) + " is not a 4KB mapping");
  if (mem_.allocated_order(to) != 0 || mem_.owner(to)) fail(Errc::InvalidArgument, "frame " + std::to_string(to) + " is not a spare order-0 block");
  AddressSpace& as = process(owner->pid);
  mem_.copy_content(from, to);
  as.table.repoint(owner->vpn, PageSize::k4K, to);
  mem_.set_owner(to, *owner, 0);
  mem_.clear_owner(from);
  mem_.free_block(from, 0);
  notify(owner->pid, Translation{owner->vpn, from, PageSize::k4K});
}

bool Machine::collapse_window(Pid pid, Vpn vpn, PageSize target, Pfn block, bool copy) {
  AddressSpace& as = process(pid);
  const std::uint64_t n = frames_of(target);
  if (!is_aligned(vpn, n) || !is_aligned(block, n)) fail(Errc::Alignment, "unaligned promotion window");
  if (auto t = as.table.lookup(vpn); t && order_of(t->size) >= order_of(target)) return false;
  if (as.table.mapped_pages(vpn, target) != n) {
    fail(Errc::PartialWindow, "window at vpn " + std::to_string(vpn) + " has unmapped pages");
  }
  if (mem_.allocated_order(block) != order_of(target) || mem_.owner(block)) {
    fail(Errc::UnknownBlock, "promotion target " + std::to_string(block) + " is not a spare block");
  }
  std::vector<Translation> old;
  as.table.for_each(vpn, vpn + n, [&](const Translation& t) { old.push_back(t); });
  for (const Translation& t : old) {
    if (copy) {
      const std::uint64_t m = frames_of(t.size);
      for (std::uint64_t i = 0; i < m; ++i) mem_.copy_content(t.pfn + i, block + (t.vpn - vpn) + i);
    }
    unmap_range(pid, t.vpn, t.size);
  }
  map_range(pid, vpn, target, block);
  return true;
}

void Machine::exchange_mappings(Pid pid, Vpn a, Vpn b) {
  AddressSpace& as = process(pid);
  auto ta = as.table.lookup(a);
  auto tb = as.table.lookup(b);
  if (!ta || ta->vpn != a) fail(Errc::NotMapped, "vpn " + std::to_string(a) + " is not a mapping base");
  if (!tb || tb->vpn != b) fail(Errc::NotMapped, "vpn " + std::to_string(b) + " is not a mapping base");
  if (ta->size != tb->size) fail(Errc::InvalidArgument, "exchange between different page sizes");
  if (a == b) return;
  as.table.repoint(a, ta->size, tb->pfn);
  as.table.repoint(b, tb->size, ta->pfn);
  const std::uint64_t n = frames_of(ta->size);
  for (std::uint64_t i = 0; i < n; ++i) {
    mem_.set_owner(tb->pfn + i, OwnerRef{pid, a + i}, order_of(ta->size));
    mem_.set_owner(ta->pfn + i, OwnerRef{pid, b + i}, order_of(ta->size));
  }
  notify(pid, *ta);
  notify(pid, *tb);
}

void Machine::swap_backing(Pfn a, Pfn b, int order) {
  struct Side {
    Pfn base;
    std::optional<OwnerRef> owner;
    std::optional<Translation> old;
  };
  auto inspect = [&](Pfn base) {
    if (mem_.allocated_order(base) != order) {
      fail(Errc::UnknownBlock, "frame " + std::to_string(base) + " is not an allocated block of order " +
                                   std::to_string(order));
    }
    Side side{base, mem_.owner(base), std::nullopt};
    if (side.owner) {
      side.old = lookup(side.owner->pid, side.owner->vpn);
      if (!side.old || side.old->pfn != base || order_of(side.old->size) != order) {
        fail(Errc::InvalidArgument, "block " + std::to_string(base) + " is not exactly one mapping");
      }
    }
    return side;
  };
  if (a == b) return;
  const Side sa = inspect(a);
  const Side sb = inspect(b);
  const std::uint64_t n = 1ull << order;
  auto move = [&](const Side& from, Pfn to) {
    if (from.owner) {
      process(from.owner->pid).table.repoint(from.owner->vpn, from.old->size, to);
      for (std::uint64_t i = 0; i < n; ++i) mem_.set_owner(to + i, OwnerRef{from.owner->pid, from.owner->vpn + i}, order);
    } else {
      for (std::uint64_t i = 0; i < n; ++i) mem_.clear_owner(to + i);
    }
  };
  move(sa, b);
  move(sb, a);
  if (sa.old) notify(sa.owner->pid, *sa.old);
  if (sb.old) notify(sb.owner->pid, *sb.old);
}

std::optional<Translation> Machine::lookup(Pid pid, Vpn vpn) const {
  auto it = procs_.find(pid);
  if (it == procs_.end()) return std::nullopt;
  return it->second.table.lookup(vpn);
}

std::optional<Pfn> Machine::translate(Pid pid, Vpn vpn) const {
  auto t = lookup(pid, vpn);
  if (!t) return std::nullopt;
  return t->pfn + (vpn - t->vpn);
}

ContentToken Machine::read(Pid pid, Vpn vpn) const {
  auto p = translate(pid, vpn);
  return p ? mem_.content(*p) : ContentToken{};
}

void Machine::write(Pid pid, Vpn vpn, ContentToken token) {
  auto p = translate(pid, vpn);
  if (!p) fail(Errc::NotMapped, "write to unmapped vpn " + std::to_string(vpn));
  mem_.set_content(*p, token);
}

std::uint64_t Machine::mappable_bytes(Pid pid, PageSize size) const {
  return process(pid).areas.mappable_windows(size) * bytes_of(size);
}

std::uint64_t Machine::mapped_bytes(PageSize size) const {
  std::uint64_t total = 0;
  for (const auto& [pid, as] : procs_) total += as.table.mapped_bytes(size);
  return total;
}

std::uint64_t Machine::mapped_bytes(Pid pid, PageSize size) const { return process(pid).table.mapped_bytes(size); }

void Machine::check_invariants() const {
  mem_.check_invariants();
  std::uint64_t mapped = 0;
  for (const auto& [pid, as] : procs_) {
    as.table.for_each([&, pid = pid](const Translation& t) {
      const std::uint64_t n = frames_of(t.size);
      if (!as.areas.covers(t.vpn, n)) fail(Errc::InvariantViolation, "mapping outside reserved areas");
      if (mem_.allocated_order(t.pfn) != order_of(t.size)) {
        fail(Errc::InvariantViolation, "mapping at vpn " + std::to_string(t.vpn) + " is not one allocated block");
      }
      for (std::uint64_t i = 0; i < n; ++i) {
        const Pfn p = t.pfn + i;
        auto o = mem_.owner(p);
        if (!o || *o != OwnerRef{pid, t.vpn + i} || mem_.map_order(p) != order_of(t.size) ||
            mem_.kind(p) != FrameKind::Movable) {
          fail(Errc::InvariantViolation, "reverse map disagrees at pfn " + std::to_string(p));
        }
      }
      mapped += n;
    });
  }
  std::uint64_t owned = 0;
  for (Pfn p = 0; p < mem_.frame_count(); ++p) {
    if (mem_.owner(p)) ++owned;
  }
  if (owned != mapped) fail(Errc::InvariantViolation, "owned frames without a mapping");
}

}  // namespace pagesim
