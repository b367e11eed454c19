#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "pagesim/types.hpp"

namespace pagesim {

// Reserved virtual ranges of one process, kept as sorted disjoint spans in
// page units. Touching spans are merged, so a span is a maximal reserved run.
class AreaSet {
 public:
  struct Span {
    Vpn begin = 0;
    Vpn end = 0;  // exclusive
    friend bool operator==(const Span&, const Span&) = default;
  };

  // Throws Overlap if any page is already reserved.
  void reserve(Vpn start, std::uint64_t pages);
  // Throws NotReserved unless every page is reserved.
  void release(Vpn start, std::uint64_t pages);

  bool covers(Vpn start, std::uint64_t pages) const;
  bool empty() const { return spans_.empty(); }
  std::uint64_t reserved_pages() const { return reserved_; }
  std::vector<Span> spans() const;

  // Number of size-aligned, size-long windows lying entirely inside reserved memory.
  std::uint64_t mappable_windows(PageSize size) const;

 private:
  std::map<Vpn, Vpn> spans_;  // begin -> end
  std::uint64_t reserved_ = 0;
};

// One leaf mapping: the aligned base vpn, the base pfn and the page size.
struct Translation {
  Vpn vpn = 0;
  Pfn pfn = 0;
  PageSize size = PageSize::k4K;
  friend bool operator==(const Translation&, const Translation&) = default;
};

// Three-level radix table (1GB slots -> 2MB slots -> 4KB entries) holding
// leaf mappings of every size. Pure bookkeeping; frame ownership lives in Machine.
class PageTable {
 public:
  PageTable() = default;
  PageTable(PageTable&&) = default;
  PageTable& operator=(PageTable&&) = default;

  std::optional<Translation> lookup(Vpn vpn) const;

  // Throws Alignment or Overlap.
  void insert(Vpn vpn, PageSize size, Pfn pfn);
  // Removes exactly this mapping and returns its pfn. Throws NotMapped.
  Pfn erase(Vpn vpn, PageSize size);
  // Repoints an existing mapping. Throws NotMapped.
  void repoint(Vpn vpn, PageSize size, Pfn pfn);

  // 4KB pages mapped inside the size-aligned window containing vpn.
  std::uint64_t mapped_pages(Vpn vpn, PageSize window) const;

  // Mappings whose base lies in [begin, end), in ascending vpn order.
  void for_each(Vpn begin, Vpn end, const std::function<void(const Translation&)>& fn) const;
  void for_each(const std::function<void(const Translation&)>& fn) const;

  std::uint64_t count(PageSize size) const { return counts_[size_index(size)]; }
  std::uint64_t mapped_bytes(PageSize size) const { return count(size) * bytes_of(size); }
  std::uint64_t mapped_pages() const;

  // Base vpn of the first 1GB slot at or after `from` that holds any mapping.
  std::optional<Vpn> next_populated_gigabyte(Vpn from) const;

 private:
  static constexpr Pfn kNone = ~0ull;
  struct Leaf {
    Leaf() { pfn.fill(kNone); }
    std::array<Pfn, 512> pfn;
    std::uint32_t count = 0;
  };
  struct Mid {
    Pfn large = kNone;  // 2MB leaf when set
    std::unique_ptr<Leaf> leaf;
  };
  struct Giga {
    Pfn huge = kNone;
    std::unique_ptr<std::array<Mid, 512>> mids;
    std::uint64_t pages = 0;  // 4KB pages mapped below this slot (excluding a huge leaf)
  };

  Giga* giga(Vpn vpn);
  const Giga* giga(Vpn vpn) const;
  void drop_if_empty(Vpn vpn);

  std::map<Vpn, Giga> gigas_;  // keyed by vpn >> 18
  std::array<std::uint64_t, 3> counts_{};
};

// One process: reserved areas plus its page table.
struct AddressSpace {
  Pid pid = 0;
  bool promotable = true;
  AreaSet areas;
  PageTable table;
};

}  // namespace pagesim
