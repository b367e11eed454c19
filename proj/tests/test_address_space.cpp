#include <map>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "pagesim/error.hpp"
#include "pagesim/machine.hpp"
#include "pagesim/rng.hpp"

using namespace pagesim;

namespace {

constexpr Vpn kGigPages = kRegionFrames;
constexpr Vpn kMegPages = 512;

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const SimError& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::InvalidArgument;
}

// Allocates, maps and stamps a distinct token on every page.
void populate(Machine& m, Pid pid, Vpn vpn, PageSize size) {
  const Pfn p = m.memory().alloc_block(order_of(size), Movability::Movable);
  m.map_range(pid, vpn, size, p);
  for (std::uint64_t i = 0; i < frames_of(size); ++i) m.write(pid, vpn + i, make_content_token(pid, vpn + i, 0));
}

std::map<Pfn, OwnerRef> rebuild_reverse_map(const Machine& m) {
  std::map<Pfn, OwnerRef> out;
  for (const auto& [pid, as] : m.processes()) {
    as.table.for_each([&, pid = pid](const Translation& t) {
      for (std::uint64_t i = 0; i < frames_of(t.size); ++i) out[t.pfn + i] = OwnerRef{pid, t.vpn + i};
    });
  }
  return out;
}

std::map<Pfn, OwnerRef> recorded_reverse_map(const Machine& m) {
  std::map<Pfn, OwnerRef> out;
  for (Pfn p = 0; p < m.memory().frame_count(); ++p) {
    if (auto o = m.memory().owner(p)) out[p] = *o;
  }
  return out;
}

}  // namespace

TEST_CASE("reserve and release round trip frees everything") {
  Machine m(4 * kRegionFrames);
  m.create_process(1);
  m.reserve_area(1, kGigPages, 3 * kGigPages);
  populate(m, 1, kGigPages, PageSize::k1G);
  populate(m, 1, 2 * kGigPages, PageSize::k2M);
  populate(m, 1, 2 * kGigPages + kMegPages + 5, PageSize::k4K);
  m.check_invariants();
  m.release_area(1, kGigPages, 3 * kGigPages);
  CHECK(m.process(1).areas.empty());
  CHECK(m.process(1).table.mapped_pages() == 0);
  CHECK(m.memory().free_frames() == 4 * kRegionFrames);
  m.check_invariants();
}

TEST_CASE("releasing the middle of a 1GB mapping demotes it and keeps the rest") {
  Machine m(2 * kRegionFrames);
  m.create_process(1);
  m.reserve_area(1, 0, kGigPages);
  populate(m, 1, 0, PageSize::k1G);
  const Vpn hole = 100 * kMegPages;
  m.release_area(1, hole, kMegPages);
  CHECK(m.process(1).table.count(PageSize::k1G) == 0);
  CHECK(m.process(1).table.count(PageSize::k4K) == kGigPages - kMegPages);
  CHECK(m.memory().free_frames() == kRegionFrames + kMegPages);
  for (Vpn v = 0; v < kGigPages; v += 97) {
    if (v >= hole && v < hole + kMegPages) {
      CHECK_FALSE(m.translate(1, v));
    } else {
      REQUIRE(m.read(1, v) == make_content_token(1, v, 0));
    }
  }
  m.check_invariants();
}

TEST_CASE("overlapping reservation") {
  Machine m(1024);
  m.create_process(1);
  m.reserve_area(1, 100, 50);
  CHECK(code_of([&] { m.reserve_area(1, 120, 50); }) == Errc::Overlap);
  CHECK(code_of([&] { m.reserve_area(1, 50, 51); }) == Errc::Overlap);
  m.reserve_area(1, 150, 10);  // touching is fine and merges
  CHECK(m.process(1).areas.spans().size() == 1);
  CHECK(code_of([&] { m.release_area(1, 140, 30); }) == Errc::NotReserved);
}

TEST_CASE("mappable extents") {
  Machine m(1024);
  m.create_process(1);
  m.create_process(2);
  m.create_process(3);
  m.reserve_area(1, 0x40000000 >> kFrameShift, 3 * kGigPages);
  CHECK(m.mappable_bytes(1, PageSize::k1G) == 3 * kGiB);
  CHECK(m.mappable_bytes(1, PageSize::k2M) == 3 * kGiB);
  m.reserve_area(2, kGigPages + kMegPages, 2 * kGigPages);
  CHECK(m.mappable_bytes(2, PageSize::k1G) == kGiB);
  CHECK(m.mappable_bytes(2, PageSize::k2M) == 2 * kGiB);
  m.reserve_area(3, 0, 256);
  CHECK(m.mappable_bytes(3, PageSize::k1G) == 0);
  CHECK(m.mappable_bytes(3, PageSize::k2M) == 0);
}

TEST_CASE("mappability on random layouts matches window enumeration") {
  Rng rng(42);
  const std::uint64_t limit = 4 * kGigPages;
  for (int layout = 0; layout < 200; ++layout) {
    AreaSet areas;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
    const int n = 1 + static_cast<int>(rng.below(12));
    for (int i = 0; i < n; ++i) {
      const Vpn start = rng.below(limit);
      const std::uint64_t len = 1 + rng.below(rng.bernoulli(0.5) ? 4 * kMegPages : kGigPages + kGigPages / 2);
      if (start + len > limit) continue;
      try {
        areas.reserve(start, len);
        spans.emplace_back(start, start + len);
      } catch (const SimError&) {
      }
    }
    const std::uint64_t w2 = areas.mappable_windows(PageSize::k2M);
    const std::uint64_t w1 = areas.mappable_windows(PageSize::k1G);
    REQUIRE(w2 == oracle::enumerate_windows(spans, kMegPages, limit));
    REQUIRE(w1 == oracle::enumerate_windows(spans, kGigPages, limit));
    CHECK(w1 * kGiB <= w2 * 2 * kMiB);
    CHECK(w2 * kMegPages <= areas.reserved_pages());
  }
}

TEST_CASE("map then unmap leaves the address space unchanged") {
  Machine m(2 * kRegionFrames);
  m.create_process(1);
  m.reserve_area(1, 0, 2 * kGigPages);
  const Pfn p = m.memory().alloc_block(18, Movability::Movable);
  const std::uint64_t before = m.memory().free_frames();
  m.map_range(1, kGigPages, PageSize::k1G, p);
  CHECK(m.memory().free_frames() == before);
  CHECK(m.memory().free_block_count(18) == 1);
  CHECK(m.mapped_bytes(PageSize::k1G) == kGiB);
  m.unmap_range(1, kGigPages, PageSize::k1G);
  CHECK(m.process(1).table.mapped_pages() == 0);
  CHECK(m.memory().free_block_count(18) == 2);
  m.check_invariants();
}

TEST_CASE("mapping errors") {
  Machine m(kRegionFrames);
  m.create_process(1);
  m.reserve_area(1, 0, 4 * kMegPages);
  const Pfn p = m.memory().alloc_block(9, Movability::Movable);
  CHECK(code_of([&] { m.map_range(1, 3, PageSize::k2M, p); }) == Errc::Alignment);
  CHECK(code_of([&] { m.map_range(1, 8 * kMegPages, PageSize::k2M, p); }) == Errc::NotReserved);
  m.map_range(1, 0, PageSize::k2M, p);
  const Pfn q = m.memory().alloc_block(0, Movability::Movable);
  CHECK(code_of([&] { m.map_range(1, 7, PageSize::k4K, q); }) == Errc::Overlap);
  CHECK(code_of([&] { m.unmap_range(1, kMegPages, PageSize::k2M); }) == Errc::NotMapped);
}

TEST_CASE("reverse map equals a rebuild from the page tables after random mutations") {
  Machine m(2 * kRegionFrames);
  Rng rng(7);
  for (Pid pid = 1; pid <= 3; ++pid) {
    m.create_process(pid);
    m.reserve_area(pid, pid * kGigPages, kGigPages);
  }
  for (int op = 0; op < 600; ++op) {
    const Pid pid = 1 + static_cast<Pid>(rng.below(3));
    const Vpn base = pid * kGigPages;
    const std::uint64_t pick = rng.below(10);
    if (pick < 5) {
      const PageSize size = rng.bernoulli(0.15) ? PageSize::k2M : PageSize::k4K;
      const Vpn v = base + align_down(rng.below(kGigPages), frames_of(size));
      if (m.process(pid).table.mapped_pages(v, size) == 0) {
        if (auto p = m.memory().try_alloc_block(order_of(size), Movability::Movable)) m.map_range(pid, v, size, *p);
      }
    } else if (pick < 8) {
      std::vector<Translation> all;
      m.process(pid).table.for_each([&](const Translation& t) { all.push_back(t); });
      if (!all.empty()) {
        const Translation t = all[rng.below(all.size())];
        if (pick == 7 && t.size != PageSize::k4K) m.split_mapping(pid, t.vpn);
        else m.unmap_range(pid, t.vpn, t.size);
      }
    } else if (pick == 8) {
      std::vector<Translation> small;
      m.process(pid).table.for_each([&](const Translation& t) {
        if (t.size == PageSize::k4K) small.push_back(t);
      });
      if (small.size() >= 2) {
        const Translation a = small[rng.below(small.size())];
        const Translation b = small[rng.below(small.size())];
        m.exchange_mappings(pid, a.vpn, b.vpn);
      }
    } else {
      std::vector<Translation> small;
      m.process(pid).table.for_each([&](const Translation& t) {
        if (t.size == PageSize::k4K) small.push_back(t);
      });
      if (!small.empty()) {
        if (auto to = m.memory().try_alloc_block(0, Movability::Movable)) {
          m.migrate_frame(small[rng.below(small.size())].pfn, *to);
        }
      }
    }
    if (op % 50 == 0) REQUIRE(rebuild_reverse_map(m) == recorded_reverse_map(m));
  }
  CHECK(rebuild_reverse_map(m) == recorded_reverse_map(m));
  m.check_invariants();
}

TEST_CASE("migration and exchange carry contents with the virtual page") {
  Machine m(kRegionFrames);
  m.create_process(1);
  m.reserve_area(1, 0, 4 * kMegPages);
  populate(m, 1, 0, PageSize::k4K);
  populate(m, 1, 1, PageSize::k4K);
  populate(m, 1, kMegPages, PageSize::k2M);
  populate(m, 1, 2 * kMegPages, PageSize::k2M);
  const Pfn to = m.memory().alloc_block(0, Movability::Movable);
  const Pfn from = *m.translate(1, 0);
  m.migrate_frame(from, to);
  CHECK(m.translate(1, 0) == to);
  CHECK(m.read(1, 0) == make_content_token(1, 0, 0));
  CHECK(m.memory().kind(from) == FrameKind::Free);

  const Pfn a = *m.translate(1, kMegPages);
  const Pfn b = *m.translate(1, 2 * kMegPages);
  m.exchange_mappings(1, kMegPages, 2 * kMegPages);
  CHECK(m.translate(1, kMegPages) == b);
  CHECK(m.translate(1, 2 * kMegPages) == a);
  CHECK(m.read(1, kMegPages + 3) == make_content_token(1, 2 * kMegPages + 3, 0));
  CHECK(code_of([&] { m.exchange_mappings(1, 0, kMegPages); }) == Errc::InvalidArgument);
  m.check_invariants();
}

TEST_CASE("collapse_window copies every page to its offset") {
  Machine m(2 * kRegionFrames);
  m.create_process(1);
  m.reserve_area(1, 0, 4 * kMegPages);
  // Scatter 512 4KB mappings across physical memory in reverse order.
  std::vector<Pfn> spare;
  for (int i = 0; i < 1024; ++i) spare.push_back(m.memory().alloc_block(0, Movability::Movable));
  for (Vpn v = 0; v < kMegPages; ++v) {
    const Pfn p = spare[2 * (kMegPages - 1 - v)];
    m.map_range(1, v, PageSize::k4K, p);
    m.write(1, v, make_content_token(1, v, 3));
  }
  const Pfn block = m.memory().alloc_block(9, Movability::Movable);
  CHECK(m.collapse_window(1, 0, PageSize::k2M, block, true));
  CHECK(m.lookup(1, 0) == Translation{0, block, PageSize::k2M});
  for (Vpn v = 0; v < kMegPages; ++v) REQUIRE(m.memory().content(block + v) == make_content_token(1, v, 3));
  const Pfn other = m.memory().alloc_block(9, Movability::Movable);
  CHECK_FALSE(m.collapse_window(1, 0, PageSize::k2M, other, true));

  populate(m, 1, kMegPages, PageSize::k4K);
  CHECK(code_of([&] { m.collapse_window(1, kMegPages, PageSize::k2M, other, true); }) == Errc::PartialWindow);
  m.check_invariants();
}
