#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "pagesim/types.hpp"

namespace pagesim {

struct TlbGeometry {
  std::size_t entries = 0;
  std::size_t ways = 0;  // ways == entries means fully associative
  friend bool operator==(const TlbGeometry&, const TlbGeometry&) = default;
};

// Defaults follow a Skylake-class data TLB.
struct TlbConfig {
  TlbGeometry l1_4k{64, 4};
  TlbGeometry l1_2m{32, 4};
  TlbGeometry l1_1g{4, 4};
  TlbGeometry l2_small{1536, 12};  // shared by 4KB and 2MB entries
  TlbGeometry l2_1g{16, 4};

  // Throws Config unless every structure has entries divisible by ways.
  void validate() const;
};

// Set-associative array with exact LRU. Keys are page numbers at the entry's
// own granularity, tagged with the page size; the set index is the page number
// modulo the set count.
class TlbArray {
 public:
  explicit TlbArray(TlbGeometry geometry);

  // True on hit, refreshing recency.
  bool lookup(std::uint64_t page, PageSize size);
  // Installs the entry, evicting the least recently used way of its set.
  void insert(std::uint64_t page, PageSize size);
  void invalidate(std::uint64_t page, PageSize size);
  void flush();

  std::size_t sets() const { return sets_; }
  std::size_t ways() const { return ways_; }

 private:
  struct Way {
    std::uint64_t key = 0;
    std::uint64_t stamp = 0;  // 0 = empty
  };
  static std::uint64_t key_of(std::uint64_t page, PageSize size) {
    return (page << 2) | static_cast<std::uint64_t>(size_index(size));
  }
  Way* find(std::uint64_t page, PageSize size);

  std::size_t sets_;
  std::size_t ways_;
  std::vector<Way> ways_storage_;
  std::uint64_t clock_ = 0;
};

enum class TlbOutcome : std::uint8_t { L1Hit, L2Hit, Miss };

// Two-level TLB: per-size L1 arrays, a shared 4KB/2MB L2 array and a 1GB L2 array.
class Tlb {
 public:
  explicit Tlb(const TlbConfig& config = {});

  // `vpn` is in 4KB units; `size` is the page size of the translation entry.
  // Looks up L1 for that size, then L2; a miss installs into both.
  TlbOutcome access(Vpn vpn, PageSize size);
  void invalidate(Vpn vpn, PageSize size);
  void flush();

 private:
  TlbArray& l1(PageSize size) { return l1_[size_index(size)]; }
  TlbArray& l2(PageSize size) { return size == PageSize::k1G ? l2_1g_ : l2_small_; }

  std::array<TlbArray, 3> l1_;
  TlbArray l2_small_;
  TlbArray l2_1g_;
};

struct CostModel {
  double memory_access_ns = 100;  // one page-walk memory reference
  double l2_hit_ns = 7;           // extra latency of an L2 TLB hit
  double base_access_ns = 1;      // every access

  void validate() const;
};

// Page-walk memory references for a native walk ending at a leaf of this size.
constexpr int native_walk_accesses(PageSize size) { return walk_levels(size); }

// Two-dimensional walk: every guest level's table pointer and the final guest
// physical address each need a host walk.
constexpr int nested_walk_accesses(PageSize guest, PageSize host) {
  const int lg = walk_levels(guest);
  const int lh = walk_levels(host);
  return lg * (lh + 1) + lh;
}

struct AccessStats {
  std::uint64_t accesses = 0;
  std::array<std::uint64_t, 3> l1_hits{};  // by entry size
  std::array<std::uint64_t, 3> l2_hits{};
  std::array<std::uint64_t, 3> misses{};
  std::uint64_t walk_accesses = 0;
  double walk_time_ns = 0;
  double total_time_ns = 0;

  // Charges `count` accesses of one page with the given outcome.
  void record(TlbOutcome outcome, PageSize entry, int walk_refs, const CostModel& cost, std::uint64_t count = 1);
  std::uint64_t total_misses() const { return misses[0] + misses[1] + misses[2]; }
};

// Walk time over total modeled access time; 0 when nothing has run.
double walk_fraction(const AccessStats& stats);

}  // namespace pagesim
