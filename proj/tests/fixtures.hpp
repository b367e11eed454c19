// Helpers for building hand-made memory states in tests.
#pragma once

#include <map>
#include <vector>

#include "pagesim/machine.hpp"
#include "pagesim/rng.hpp"

namespace fixture {

using namespace pagesim;

// A non-promotable process that owns individually placed 4KB frames.
struct Filler {
  Machine& m;
  Pid pid;
  Vpn next = 0;

  Filler(Machine& machine, Pid id, std::uint64_t pages = 1ull << 30) : m(machine), pid(id) {
    m.create_process(pid, false);
    m.reserve_area(pid, 0, pages);
  }

  // Claims frame p as a movable 4KB mapping with a fresh token.
  bool movable(Pfn p) {
    if (!m.memory().claim_block(p, 0, Movability::Movable)) return false;
    m.map_range(pid, next, PageSize::k4K, p);
    m.write(pid, next, make_content_token(pid, next, 0));
    ++next;
    return true;
  }

  bool unmovable(Pfn p) {
    if (!m.memory().claim_block(p, 0, Movability::Unmovable)) return false;
    m.memory().set_content(p, ContentToken{0xdead0000 + p});
    return true;
  }

  // Occupies `count` distinct frames of region r chosen at random.
  void scatter(std::size_t r, std::uint64_t count, Rng& rng) {
    const Pfn base = static_cast<Pfn>(r) * kRegionFrames;
    std::uint64_t placed = 0;
    while (placed < count) {
      if (movable(base + rng.below(kRegionFrames))) ++placed;
    }
  }
};

// Region 0 keeps 256 free frames, region 1 200,000, region 2 50,000, and
// region 3 150,000 plus one unmovable frame. Everything else is movable.
inline void two_engine_state(Filler& cache) {
  const std::uint64_t free_per_region[4] = {256, 200000, 50000, 150000};
  for (std::size_t r = 0; r < 4; ++r) {
    const Pfn base = static_cast<Pfn>(r) * kRegionFrames;
    // Interleave free frames evenly so no large free block survives.
    const std::uint64_t occupied = kRegionFrames - free_per_region[r];
    std::uint64_t placed = 0;
    for (std::uint64_t i = 0; i < kRegionFrames && placed < occupied; ++i) {
      const bool keep_free = (i * free_per_region[r]) / kRegionFrames != ((i + 1) * free_per_region[r]) / kRegionFrames;
      if (keep_free) continue;
      if (r == 3 && placed == 0) cache.unmovable(base + i);
      else cache.movable(base + i);
      ++placed;
    }
  }
}

// Every mapped page of every process and the token it reads.
inline std::map<std::pair<Pid, Vpn>, ContentToken> content_relation(const Machine& m) {
  std::map<std::pair<Pid, Vpn>, ContentToken> out;
  for (const auto& [pid, as] : m.processes()) {
    as.table.for_each([&, pid = pid](const Translation& t) {
      for (std::uint64_t i = 0; i < frames_of(t.size); ++i) out[{pid, t.vpn + i}] = m.memory().content(t.pfn + i);
    });
  }
  return out;
}

}  // namespace fixture
