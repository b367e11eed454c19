#include "pagesim/physical_memory.hpp"

#include <algorithm>
#include <sstream>

#include "pagesim/error.hpp"

namespace pagesim {

namespace {

constexpr std::uint64_t kOwnerVpnMask = (1ull << 48) - 1;

std::uint64_t pack_owner(OwnerRef owner) { return (static_cast<std::uint64_t>(owner.pid) << 48) | (owner.vpn & kOwnerVpnMask); }
OwnerRef unpack_owner(std::uint64_t packed) {
  return OwnerRef{static_cast<Pid>(packed >> 48), packed & kOwnerVpnMask};
}

std::string block_name(Pfn base, int order) {
  return "block " + std::to_string(base) + "/" + std::to_string(order);
}

}  // namespace

PhysicalMemory::PhysicalMemory(std::uint64_t frame_count) : PhysicalMemory(frame_count, Options{}) {}

PhysicalMemory::PhysicalMemory(std::uint64_t frame_count, Options options)
    : frames_(frame_count), options_(options) {
  if (frame_count == 0) fail(Errc::InvalidArgument, "physical memory must have at least one frame");
  const std::size_t regions = static_cast<std::size_t>((frame_count + kRegionFrames - 1) / kRegionFrames);
  regions_.resize(regions);
  zeroed_.assign(regions, false);
  for (int order = 0; order <= kMaxOrder; ++order) free_lists_[order] = BitIndex(frame_count >> order);

  // Carve the frame range into maximal aligned blocks.
  Pfn base = 0;
  while (base < frame_count) {
    int order = kMaxOrder;
    while (order > 0 && (!is_aligned(base, 1ull << order) || !fits(base, order))) --order;
    push_free(base, order);
    base += 1ull << order;
  }
  for (std::size_t r = 0; r < regions; ++r) regions_[r].free_count = region_capacity(r);
  free_frames_ = frame_count;
}

std::uint64_t PhysicalMemory::region_capacity(std::size_t index) const {
  const std::uint64_t begin = static_cast<std::uint64_t>(index) * kRegionFrames;
  return std::min<std::uint64_t>(kRegionFrames, frame_count() - begin);
}

void PhysicalMemory::push_free(Pfn base, int order) { free_lists_[order].set(base >> order); }

void PhysicalMemory::pop_free(Pfn base, int order) {
  free_lists_[order].reset(base >> order);
  if (order == kMaxOrder) {
    const std::size_t r = region_of(base);
    if (zeroed_[r]) {
      zeroed_[r] = false;
      --zeroed_total_;
    }
  }
}

void PhysicalMemory::take(Pfn base, int order, Movability movability) {
  const std::uint64_t n = 1ull << order;
  const FrameKind kind = movability == Movability::Unmovable ? FrameKind::Unmovable : FrameKind::Movable;
  for (Pfn p = base; p < base + n; ++p) {
    Frame& f = frames_[p];
    f.kind = kind;
    f.head_order = -1;
  }
  frames_[base].head_order = static_cast<std::int8_t>(order);
  RegionStats& rs = regions_[region_of(base)];
  rs.free_count -= n;
  if (kind == FrameKind::Unmovable) rs.unmovable_count += n;
  free_frames_ -= n;
  if (options_.verify_counters) verify_regions(base, order);
}

std::optional<Pfn> PhysicalMemory::peek_alloc(int order) const {
  if (order < 0 || order > kMaxOrder) return std::nullopt;
  for (int o = order; o <= kMaxOrder; ++o) {
    if (auto idx = free_lists_[o].find_first()) return static_cast<Pfn>(*idx) << o;
  }
  return std::nullopt;
}

std::optional<Pfn> PhysicalMemory::try_alloc_block(int order, Movability movability) {
  if (order < 0 || order > kMaxOrder) fail(Errc::InvalidArgument, "order out of range: " + std::to_string(order));
  for (int o = order; o <= kMaxOrder; ++o) {
    auto idx = free_lists_[o].find_first();
    if (!idx) continue;
    const Pfn base = static_cast<Pfn>(*idx) << o;
    pop_free(base, o);
    // Keep the lower half; list each upper half.
    for (int s = o - 1; s >= order; --s) push_free(base + (1ull << s), s);
    take(base, order, movability);
    return base;
  }
  return std::nullopt;
}

Pfn PhysicalMemory::alloc_block(int order, Movability movability) {
  if (auto base = try_alloc_block(order, movability)) return *base;
  fail(Errc::NoContiguity, "no free block of order >= " + std::to_string(order));
}

bool PhysicalMemory::is_free_block(Pfn base, int order) const {
  if (order < 0 || order > kMaxOrder || !is_aligned(base, 1ull << order) || !fits(base, order)) return false;
  // With maximal coalescing a fully free aligned range always sits inside one
  // listed block of equal or larger order.
  for (int o = order; o <= kMaxOrder; ++o) {
    const Pfn head = align_down(base, 1ull << o);
    if (!fits(head, o)) break;
    if (free_lists_[o].test(head >> o)) return true;
  }
  return false;
}

bool PhysicalMemory::claim_block(Pfn base, int order, Movability movability) {
  if (order < 0 || order > kMaxOrder || !is_aligned(base, 1ull << order) || !fits(base, order)) return false;
  int found = -1;
  for (int o = order; o <= kMaxOrder; ++o) {
    const Pfn head = align_down(base, 1ull << o);
    if (!fits(head, o)) break;
    if (free_lists_[o].test(head >> o)) {
      found = o;
      break;
    }
  }
  if (found < 0) return false;
  Pfn head = align_down(base, 1ull << found);
  pop_free(head, found);
  // Walk down towards the target, listing the half that does not contain it.
  for (int o = found - 1; o >= order; --o) {
    const Pfn upper = head + (1ull << o);
    if (base >= upper) {
      push_free(head, o);
      head = upper;
    } else {
      push_free(upper, o);
    }
  }
  take(base, order, movability);
  return true;
}

void PhysicalMemory::free_block(Pfn base, int order) {
  if (order < 0 || order > kMaxOrder || base >= frame_count() || frames_[base].head_order != order) {
    fail(Errc::UnknownBlock, block_name(base, order) + " is not allocated");
  }
  const std::uint64_t n = 1ull << order;
  RegionStats& rs = regions_[region_of(base)];
  for (Pfn p = base; p < base + n; ++p) {
    Frame& f = frames_[p];
    if (f.kind == FrameKind::Unmovable) --rs.unmovable_count;
    f = Frame{};
  }
  rs.free_count += n;
  free_frames_ += n;

  Pfn head = base;
  int o = order;
  while (o < kMaxOrder) {
    const Pfn buddy = head ^ (1ull << o);
    if (!fits(buddy, o) || !free_lists_[o].test(buddy >> o)) break;
    pop_free(buddy, o);
    head = std::min(head, buddy);
    ++o;
  }
  push_free(head, o);
  if (options_.verify_counters) verify_regions(base, order);
}

void PhysicalMemory::split_block(Pfn base, int order) {
  if (order < 0 || order > kMaxOrder || base >= frame_count() || frames_[base].head_order != order) {
    fail(Errc::UnknownBlock, block_name(base, order) + " is not allocated");
  }
  for (Pfn p = base; p < base + (1ull << order); ++p) frames_[p].head_order = 0;
}

bool PhysicalMemory::has_free_block(int min_order) const {
  for (int o = std::max(min_order, 0); o <= kMaxOrder; ++o) {
    if (free_lists_[o].count() > 0) return true;
  }
  return false;
}

std::vector<Pfn> PhysicalMemory::free_list(int order) const {
  std::vector<Pfn> out;
  out.reserve(free_lists_[order].count());
  for (auto i = free_lists_[order].find_next(0); i; i = free_lists_[order].find_next(*i + 1)) {
    out.push_back(static_cast<Pfn>(*i) << order);
  }
  return out;
}

void PhysicalMemory::for_each_free_block(const std::function<void(Block)>& fn) const {
  for (int o = 0; o <= kMaxOrder; ++o) {
    for (auto i = free_lists_[o].find_next(0); i; i = free_lists_[o].find_next(*i + 1)) {
      fn(Block{static_cast<Pfn>(*i) << o, o});
    }
  }
}

std::optional<int> PhysicalMemory::allocated_order(Pfn pfn) const {
  if (pfn >= frame_count() || frames_[pfn].head_order < 0) return std::nullopt;
  return frames_[pfn].head_order;
}

RegionStats PhysicalMemory::recount_region(std::size_t index) const {
  RegionStats rs;
  const Pfn begin = static_cast<Pfn>(index) * kRegionFrames;
  const Pfn end = begin + region_capacity(index);
  for (Pfn p = begin; p < end; ++p) {
    if (frames_[p].kind == FrameKind::Free) ++rs.free_count;
    else if (frames_[p].kind == FrameKind::Unmovable) ++rs.unmovable_count;
  }
  return rs;
}

void PhysicalMemory::mark_zeroed(std::size_t region) {
  const Pfn base = static_cast<Pfn>(region) * kRegionFrames;
  if (region >= regions_.size() || !fits(base, kMaxOrder) || !free_lists_[kMaxOrder].test(base >> kMaxOrder)) {
    fail(Errc::InvalidArgument, "region " + std::to_string(region) + " is not a free 1GB block");
  }
  if (!zeroed_[region]) {
    zeroed_[region] = true;
    ++zeroed_total_;
  }
}

std::optional<OwnerRef> PhysicalMemory::owner(Pfn pfn) const {
  const Frame& f = frames_[pfn];
  if (!f.has_owner) return std::nullopt;
  return unpack_owner(f.owner);
}

void PhysicalMemory::set_owner(Pfn pfn, OwnerRef owner, int map_order) {
  Frame& f = frames_[pfn];
  f.owner = pack_owner(owner);
  f.has_owner = true;
  f.map_order = static_cast<std::uint8_t>(map_order);
}

void PhysicalMemory::clear_owner(Pfn pfn) {
  Frame& f = frames_[pfn];
  f.owner = 0;
  f.has_owner = false;
  f.map_order = 0;
}

ContentToken PhysicalMemory::content(Pfn pfn) const {
  if (store_) return store_->load(pfn);
  return ContentToken{frames_[pfn].content};
}

void PhysicalMemory::set_content(Pfn pfn, ContentToken token) {
  if (store_) {
    store_->store(pfn, token);
    return;
  }
  frames_[pfn].content = token.value;
}

void PhysicalMemory::verify_regions(Pfn base, int order) const {
  const std::size_t r = region_of(base);
  (void)order;
  if (recount_region(r) != regions_[r]) {
    fail(Errc::InvariantViolation, "region " + std::to_string(r) + " counters disagree with recount");
  }
}

void PhysicalMemory::check_invariants() const {
  std::uint64_t free_total = 0;
  for (std::size_t r = 0; r < regions_.size(); ++r) {
    const RegionStats rs = recount_region(r);
    if (rs != regions_[r]) fail(Errc::InvariantViolation, "region " + std::to_string(r) + " counters disagree with recount");
    if (rs.free_count + rs.unmovable_count > region_capacity(r)) fail(Errc::InvariantViolation, "region over capacity");
    free_total += rs.free_count;
  }
  if (free_total != free_frames_) fail(Errc::InvariantViolation, "free frame total mismatch");

  // Free blocks: aligned, disjoint, covering exactly the Free frames, and maximally coalesced.
  std::vector<bool> covered(frame_count(), false);
  std::uint64_t listed = 0;
  for (int o = 0; o <= kMaxOrder; ++o) {
    for (auto i = free_lists_[o].find_next(0); i; i = free_lists_[o].find_next(*i + 1)) {
      const Pfn base = static_cast<Pfn>(*i) << o;
      if (!fits(base, o)) fail(Errc::InvariantViolation, block_name(base, o) + " exceeds memory");
      for (Pfn p = base; p < base + (1ull << o); ++p) {
        if (covered[p]) fail(Errc::InvariantViolation, block_name(base, o) + " overlaps another free block");
        if (frames_[p].kind != FrameKind::Free) fail(Errc::InvariantViolation, block_name(base, o) + " holds an allocated frame");
        covered[p] = true;
      }
      listed += 1ull << o;
      if (o < kMaxOrder) {
        const Pfn buddy = base ^ (1ull << o);
        if (fits(buddy, o) && free_lists_[o].test(buddy >> o)) {
          fail(Errc::InvariantViolation, block_name(base, o) + " and its buddy are both free");
        }
      }
    }
  }
  if (listed != free_frames_) fail(Errc::InvariantViolation, "free lists do not cover every free frame");
  for (Pfn p = 0; p < frame_count(); ++p) {
    const Frame& f = frames_[p];
    if (f.kind == FrameKind::Free && (f.has_owner || f.content != 0 || f.head_order >= 0)) {
      fail(Errc::InvariantViolation, "free frame " + std::to_string(p) + " carries state");
    }
  }
  for (std::size_t r = 0; r < zeroed_.size(); ++r) {
    if (zeroed_[r] && !free_lists_[kMaxOrder].test(r)) fail(Errc::InvariantViolation, "zeroed region is not free");
  }
}

std::string PhysicalMemory::snapshot_csv() const {
  std::ostringstream out;
  out << "region_index,free_count,unmovable_count\n";
  for (std::size_t r = 0; r < regions_.size(); ++r) {
    out << r << ',' << regions_[r].free_count << ',' << regions_[r].unmovable_count << '\n';
  }
  return out.str();
}

}  // namespace pagesim
