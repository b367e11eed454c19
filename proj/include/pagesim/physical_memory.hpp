#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pagesim/bit_index.hpp"
#include "pagesim/types.hpp"

namespace pagesim {

enum class FrameKind : std::uint8_t { Free, Movable, Unmovable };

struct RegionStats {
  std::uint64_t free_count = 0;
  std::uint64_t unmovable_count = 0;
  friend bool operator==(const RegionStats&, const RegionStats&) = default;
};

struct Block {
  Pfn base = 0;
  int order = 0;
  friend bool operator==(const Block&, const Block&) = default;
};

// Where frame contents live. Native machines keep them in the frame array; a
// guest machine redirects them to host frames through its nested mapping.
class ContentStore {
 public:
  virtual ~ContentStore() = default;
  virtual ContentToken load(Pfn pfn) const = 0;
  virtual void store(Pfn pfn, ContentToken token) = 0;
};

// Physical memory as an array of 4KB frames, grouped into 1GB regions with
// free/unmovable counters, and a binary buddy allocator whose free lists reach
// order 18 (1GB). Single-threaded; callers serialize mutation.
class PhysicalMemory {
 public:
  struct Options {
    // Recount the touched regions after every mutation. Only for small test memories.
    bool verify_counters = false;
  };

  explicit PhysicalMemory(std::uint64_t frame_count);
  PhysicalMemory(std::uint64_t frame_count, Options options);

  PhysicalMemory(const PhysicalMemory&) = delete;
  PhysicalMemory& operator=(const PhysicalMemory&) = delete;
  PhysicalMemory(PhysicalMemory&&) = default;
  PhysicalMemory& operator=(PhysicalMemory&&) = default;

  std::uint64_t frame_count() const { return frames_.size(); }
  std::uint64_t bytes() const { return frame_count() * kFrameBytes; }
  std::size_t region_count() const { return regions_.size(); }
  // Frames in region `index` (the last region may be partial).
  std::uint64_t region_capacity(std::size_t index) const;
  static std::size_t region_of(Pfn pfn) { return static_cast<std::size_t>(pfn >> kRegionOrder); }

  // ---- buddy allocator ----

  // Smallest sufficient order first, lowest address within that order; on a
  // split the lower half is kept. Throws NoContiguity when nothing fits.
  Pfn alloc_block(int order, Movability movability);
  std::optional<Pfn> try_alloc_block(int order, Movability movability);

  // Allocates exactly [base, base + 2^order) if it is entirely free.
  bool claim_block(Pfn base, int order, Movability movability);

  // Returns a block obtained from alloc/claim with this exact geometry.
  // Throws UnknownBlock otherwise.
  void free_block(Pfn base, int order);

  // Turns an allocated block into 2^order order-0 allocations.
  void split_block(Pfn base, int order);

  // The block alloc_block(order) would hand out, without allocating.
  std::optional<Pfn> peek_alloc(int order) const;
  bool has_free_block(int min_order) const;
  bool is_free_block(Pfn base, int order) const;
  std::uint64_t free_block_count(int order) const { return free_lists_[order].count(); }
  std::vector<Pfn> free_list(int order) const;
  void for_each_free_block(const std::function<void(Block)>& fn) const;
  std::uint64_t free_frames() const { return free_frames_; }

  // Order of the allocated block headed at pfn, if any.
  std::optional<int> allocated_order(Pfn pfn) const;

  // ---- regions ----

  RegionStats region_stats(std::size_t index) const { return regions_[index]; }
  RegionStats recount_region(std::size_t index) const;

  // Zero-fill flags. A flag may only be set on a free region-sized block and is
  // cleared when that block leaves the order-18 free list.
  bool is_zeroed(std::size_t region) const { return zeroed_[region]; }
  void mark_zeroed(std::size_t region);
  std::size_t zeroed_count() const { return zeroed_total_; }

  // ---- frames ----

  FrameKind kind(Pfn pfn) const { return frames_[pfn].kind; }
  std::optional<OwnerRef> owner(Pfn pfn) const;
  // Order of the mapping this frame belongs to (0, 9 or 18); meaningful when owned.
  int map_order(Pfn pfn) const { return frames_[pfn].map_order; }
  void set_owner(Pfn pfn, OwnerRef owner, int map_order);
  void clear_owner(Pfn pfn);
  void set_map_order(Pfn pfn, int map_order) { frames_[pfn].map_order = static_cast<std::uint8_t>(map_order); }

  ContentToken content(Pfn pfn) const;
  void set_content(Pfn pfn, ContentToken token);
  void copy_content(Pfn from, Pfn to) { set_content(to, content(from)); }

  // Non-owning; pass nullptr to restore local storage.
  void set_content_store(ContentStore* store) { store_ = store; }

  // ---- validation ----

  // Full check of counters and free-list structure. Throws InvariantViolation.
  void check_invariants() const;

  // "region_index,free_count,unmovable_count" per line.
  std::string snapshot_csv() const;

 private:
  struct Frame {
    std::uint64_t content = 0;
    std::uint64_t owner = 0;  // pid << 48 | vpn, valid when has_owner
    FrameKind kind = FrameKind::Free;
    std::int8_t head_order = -1;  // order of the allocated block headed here
    std::uint8_t map_order = 0;
    bool has_owner = false;
  };

  bool fits(Pfn base, int order) const { return base + (1ull << order) <= frame_count(); }
  void push_free(Pfn base, int order);
  void pop_free(Pfn base, int order);
  void take(Pfn base, int order, Movability movability);
  void verify_regions(Pfn base, int order) const;

  std::vector<Frame> frames_;
  std::vector<RegionStats> regions_;
  std::array<BitIndex, kMaxOrder + 1> free_lists_;
  std::vector<bool> zeroed_;
  std::size_t zeroed_total_ = 0;
  std::uint64_t free_frames_ = 0;
  Options options_;
  ContentStore* store_ = nullptr;
};

}  // namespace pagesim
