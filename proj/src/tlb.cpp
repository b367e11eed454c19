#include "pagesim/tlb.hpp"

#include "pagesim/error.hpp"

namespace pagesim {

namespace {

void check_geometry(const TlbGeometry& g, const char* name) {
  if (g.entries == 0 || g.ways == 0 || g.entries % g.ways != 0) {
    fail(Errc::Config, std::string("TLB ") + name + ": entries must be a positive multiple of ways");
  }
}

}  // namespace

void TlbConfig::validate() const {
  check_geometry(l1_4k, "l1_4k");
  check_geometry(l1_2m, "l1_2m");
  check_geometry(l1_1g, "l1_1g");
  check_geometry(l2_small, "l2_small");
  check_geometry(l2_1g, "l2_1g");
}

void CostModel::validate() const {
  if (!(memory_access_ns > 0 && l2_hit_ns >= 0 && base_access_ns > 0)) {
    fail(Errc::Config, "cost constants must be positive");
  }
}

TlbArray::TlbArray(TlbGeometry geometry)
    : sets_(geometry.entries / geometry.ways), ways_(geometry.ways), ways_storage_(geometry.entries) {
  check_geometry(geometry, "array");
}

TlbArray::Way* TlbArray::find(std::uint64_t page, PageSize size) {
  const std::uint64_t key = key_of(page, size);
  Way* set = &ways_storage_[(page % sets_) * ways_];
  for (std::size_t w = 0; w < ways_; ++w) {
    if (set[w].stamp != 0 && set[w].key == key) return &set[w];
  }
  return nullptr;
}

bool TlbArray::lookup(std::uint64_t page, PageSize size) {
  Way* way = find(page, size);
  if (!way) return false;
  way->stamp = ++clock_;
  return true;
}

void TlbArray::insert(std::uint64_t page, PageSize size) {
  if (Way* way = find(page, size)) {
    way->stamp = ++clock_;
    return;
  }
  Way* set = &ways_storage_[(page % sets_) * ways_];
  Way* victim = &set[0];
  for (std::size_t w = 0; w < ways_; ++w) {
    if (set[w].stamp < victim->stamp) victim = &set[w];
  }
  victim->key = key_of(page, size);
  victim->stamp = ++clock_;
}

void TlbArray::invalidate(std::uint64_t page, PageSize size) {
  if (Way* way = find(page, size)) *way = Way{};
}

void TlbArray::flush() {
  for (Way& w : ways_storage_) w = Way{};
}

Tlb::Tlb(const TlbConfig& config)
    : l1_{TlbArray(config.l1_4k), TlbArray(config.l1_2m), TlbArray(config.l1_1g)},
      l2_small_(config.l2_small),
      l2_1g_(config.l2_1g) {}

TlbOutcome Tlb::access(Vpn vpn, PageSize size) {
  const std::uint64_t page = vpn >> order_of(size);
  if (l1(size).lookup(page, size)) return TlbOutcome::L1Hit;
  if (l2(size).lookup(page, size)) {
    l1(size).insert(page, size);
    return TlbOutcome::L2Hit;
  }
  l2(size).insert(page, size);
  l1(size).insert(page, size);
  return TlbOutcome::Miss;
}

void Tlb::invalidate(Vpn vpn, PageSize size) {
  const std::uint64_t page = vpn >> order_of(size);
  l1(size).invalidate(page, size);
  l2(size).invalidate(page, size);
}

void Tlb::flush() {
  for (TlbArray& a : l1_) a.flush();
  l2_small_.flush();
  l2_1g_.flush();
}

void AccessStats::record(TlbOutcome outcome, PageSize entry, int walk_refs, const CostModel& cost,
                         std::uint64_t count) {
  const std::size_t i = size_index(entry);
  accesses += count;
  total_time_ns += cost.base_access_ns * static_cast<double>(count);
  switch (outcome) {
    case TlbOutcome::L1Hit:
      l1_hits[i] += count;
      break;
    case TlbOutcome::L2Hit:
      l2_hits[i] += count;
      total_time_ns += cost.l2_hit_ns * static_cast<double>(count);
      break;
    case TlbOutcome::Miss: {
      misses[i] += count;
      walk_accesses += static_cast<std::uint64_t>(walk_refs) * count;
      const double walk = cost.memory_access_ns * walk_refs * static_cast<double>(count);
      walk_time_ns += walk;
      total_time_ns += walk;
      break;
    }
  }
}

double walk_fraction(const AccessStats& stats) {
  if (stats.total_time_ns <= 0) return 0;
  return stats.walk_time_ns / stats.total_time_ns;
}

}  // namespace pagesim
