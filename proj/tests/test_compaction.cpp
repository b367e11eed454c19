#include <algorithm>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "pagesim/compaction.hpp"

using namespace pagesim;

namespace {

std::uint64_t occupied(const Machine& m, std::size_t r) {
  return kRegionFrames - m.memory().region_stats(r).free_count;
}

// Random state where per-region occupancy is skewed and some regions carry unmovable frames.
void random_state(Machine& m, fixture::Filler& cache, Rng& rng) {
  const std::size_t regions = m.memory().region_count();
  for (std::size_t r = 0; r < regions; ++r) {
    const double fill = 0.3 + 0.65 * rng.unit();
    const Pfn base = static_cast<Pfn>(r) * kRegionFrames;
    const bool dirty = rng.bernoulli(0.4);
    for (Pfn p = base; p < base + kRegionFrames; p += 1 + rng.below(8)) {
      if (!rng.bernoulli(fill)) continue;
      if (dirty && rng.bernoulli(0.001)) cache.unmovable(p);
      else cache.movable(p);
    }
  }
}

}  // namespace

TEST_CASE("normal compaction copies everything but 256 frames out of the first region") {
  Machine m(4 * kRegionFrames);
  fixture::Filler cache(m, 9);
  fixture::two_engine_state(cache);
  REQUIRE(m.memory().region_stats(0).free_count == 256);
  const auto before = fixture::content_relation(m);
  Compactor c(m);
  const CompactionReport r = c.normal_compact(kMaxOrder);
  CHECK(r.success);
  CHECK(r.frames_copied == 261888);
  CHECK(r.bytes_copied() == 261888ull * 4096);
  CHECK(r.wasted_frames == 0);
  CHECK(r.freed_block == Block{0, kMaxOrder});
  CHECK(m.memory().is_free_block(0, kMaxOrder));
  CHECK(fixture::content_relation(m) == before);
  m.check_invariants();
}

TEST_CASE("smart compaction frees the emptiest clean region") {
  Machine m(4 * kRegionFrames);
  fixture::Filler cache(m, 9);
  fixture::two_engine_state(cache);
  const auto before = fixture::content_relation(m);
  Compactor c(m);
  CHECK(c.smart_source() == 1);
  CHECK(c.smart_targets(1) == std::vector<std::size_t>{0, 2, 3});
  const CompactionReport r = c.smart_compact();
  CHECK(r.success);
  CHECK(r.frames_copied == 62144);
  CHECK(r.wasted_frames == 0);
  CHECK(r.freed_block == Block{kRegionFrames, kMaxOrder});
  // The fullest region is filled first.
  CHECK(m.memory().region_stats(0).free_count == 0);
  CHECK(m.memory().region_stats(2).free_count == 0);
  CHECK(m.memory().region_stats(3).free_count == 150000 - (62144 - 256 - 50000));
  CHECK(fixture::content_relation(m) == before);
  CHECK(m.memory().try_alloc_block(kMaxOrder, Movability::Movable) == kRegionFrames);
  m.check_invariants();
}

TEST_CASE("an unmovable frame wastes the copies made before it") {
  Machine m(2 * kRegionFrames);
  fixture::Filler cache(m, 9);
  for (Pfn p = 0; p < 1000; ++p) cache.movable(p);
  cache.unmovable(1000);
  for (Pfn p = kRegionFrames; p < kRegionFrames + 10; ++p) cache.movable(p);
  Compactor c(m);
  const CompactionReport r = c.normal_compact(kMaxOrder);
  CHECK(r.wasted_frames >= 1000);
  CHECK(r.regions_scanned >= 1);
  CHECK(r.wasted_frames <= r.frames_copied);
  m.check_invariants();

  // Stopping at the first window alone: exactly the 1,000 prior copies are wasted.
  Machine m2(2 * kRegionFrames);
  fixture::Filler cache2(m2, 9);
  for (Pfn p = 0; p < 1000; ++p) cache2.movable(p);
  cache2.unmovable(1000);
  cache2.unmovable(kRegionFrames + 3);
  Compactor c2(m2);
  const CompactionReport r2 = c2.normal_compact(kMaxOrder);
  CHECK_FALSE(r2.success);
  CHECK(r2.frames_copied == 1000);
  CHECK(r2.wasted_frames == 1000);
  CHECK(r2.regions_scanned == 2);
}

TEST_CASE("an existing free block needs no copies") {
  Machine m(2 * kRegionFrames);
  fixture::Filler cache(m, 9);
  cache.movable(7);
  Compactor c(m);
  for (const CompactionReport& r : {c.normal_compact(kMaxOrder), c.smart_compact()}) {
    CHECK(r.success);
    CHECK(r.frames_copied == 0);
    CHECK(r.freed_block == Block{kRegionFrames, kMaxOrder});
  }
}

TEST_CASE("smart compaction refuses when every region has an unmovable frame") {
  Machine m(3 * kRegionFrames);
  fixture::Filler cache(m, 9);
  for (std::size_t r = 0; r < 3; ++r) cache.unmovable(static_cast<Pfn>(r) * kRegionFrames + 99);
  Compactor c(m);
  const CompactionReport r = c.smart_compact();
  CHECK_FALSE(r.success);
  CHECK(r.frames_copied == 0);
  CHECK_FALSE(c.smart_source());
}

TEST_CASE("smart compaction fails fast when the targets are too small") {
  Machine m(2 * kRegionFrames);
  fixture::Filler cache(m, 9);
  Rng rng(1);
  cache.scatter(0, 200000, rng);
  cache.scatter(1, 100000, rng);
  Compactor c(m);
  REQUIRE(c.smart_source() == 1);
  const CompactionReport r = c.smart_compact();
  CHECK_FALSE(r.success);
  CHECK(r.frames_copied == 0);
}

TEST_CASE("order-9 normal compaction skips windows holding 2MB pages") {
  Machine m(kRegionFrames);
  fixture::Filler cache(m, 9);
  m.create_process(1);
  m.reserve_area(1, 0, 512);
  // Window 0 is a 2MB mapping; every other window has one movable frame.
  const Pfn big = m.memory().alloc_block(9, Movability::Movable);
  m.map_range(1, 0, PageSize::k2M, big);
  for (Pfn w = 1; w < 512; ++w) cache.movable(w * 512 + 17);
  Compactor c(m);
  const CompactionReport r = c.normal_compact(9);
  CHECK(r.success);
  CHECK(r.freed_block == Block{512, 9});
  CHECK(r.frames_copied == 1);
  CHECK(r.regions_scanned == 2);
  CHECK(m.lookup(1, 0)->size == PageSize::k2M);
}

TEST_CASE("randomized compaction properties") {
  std::uint64_t smart_runs = 0;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    CAPTURE(seed);
    Machine a(6 * kRegionFrames);
    Machine b(6 * kRegionFrames);
    fixture::Filler ca(a, 9);
    fixture::Filler cb(b, 9);
    Rng ra(seed), rb(seed);
    random_state(a, ca, ra);
    random_state(b, cb, rb);
    REQUIRE(a.memory().snapshot_csv() == b.memory().snapshot_csv());

    Compactor smart(a);
    // Brute-force source/target choice from full recounts.
    std::optional<std::size_t> want;
    for (std::size_t r = 0; r < 6; ++r) {
      const RegionStats s = a.memory().recount_region(r);
      if (s.unmovable_count == 0 && s.free_count < kRegionFrames &&
          (!want || s.free_count > a.memory().recount_region(*want).free_count)) {
        want = r;
      }
    }
    REQUIRE(smart.smart_source() == want);
    if (want) {
      std::vector<std::size_t> targets;
      for (std::size_t r = 0; r < 6; ++r) {
        if (r != *want && a.memory().recount_region(r).free_count > 0) targets.push_back(r);
      }
      std::stable_sort(targets.begin(), targets.end(), [&](std::size_t x, std::size_t y) {
        return a.memory().recount_region(x).free_count < a.memory().recount_region(y).free_count;
      });
      REQUIRE(smart.smart_targets(*want) == targets);
    }

    const auto before_a = fixture::content_relation(a);
    const auto before_b = fixture::content_relation(b);
    const std::uint64_t min_occupied = want ? occupied(a, *want) : 0;
    const CompactionReport rs = smart.smart_compact();
    Compactor normal(b);
    const CompactionReport rn = normal.normal_compact(kMaxOrder);
    CHECK(rs.wasted_frames == 0);
    CHECK(rn.wasted_frames <= rn.frames_copied);
    CHECK(fixture::content_relation(a) == before_a);
    CHECK(fixture::content_relation(b) == before_b);
    if (rs.success) {
      ++smart_runs;
      CHECK(rs.frames_copied == min_occupied);
      CHECK(a.memory().try_alloc_block(kMaxOrder, Movability::Movable));
    }
    if (rn.success) {
      CHECK(b.memory().claim_block(rn.freed_block->base, kMaxOrder, Movability::Movable));
      if (rs.success) CHECK(rs.frames_copied <= rn.frames_copied - rn.wasted_frames);
    }
    a.check_invariants();
    b.check_invariants();
  }
  CHECK(smart_runs > 0);
}
