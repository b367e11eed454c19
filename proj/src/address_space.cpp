#include "pagesim/address_space.hpp"

#include <algorithm>

#include "pagesim/error.hpp"

namespace pagesim {

namespace {

constexpr unsigned kMidShift = 9;
constexpr unsigned kGigaShift = 18;
constexpr std::uint64_t kMidMask = 511;

std::string range_text(Vpn start, std::uint64_t pages) {
  return "[" + std::to_string(start) + ", +" + std::to_string(pages) + ")";
}

}  // namespace

// ---- AreaSet ----

void AreaSet::reserve(Vpn start, std::uint64_t pages) {
  if (pages == 0) fail(Errc::InvalidArgument, "empty area");
  const Vpn end = start + pages;
  auto next = spans_.lower_bound(start);
  if (next != spans_.end() && next->first < end) fail(Errc::Overlap, "area " + range_text(start, pages) + " overlaps");
  if (next != spans_.begin()) {
    auto prev = std::prev(next);
    if (prev->second > start) fail(Errc::Overlap, "area " + range_text(start, pages) + " overlaps");
  }

  Vpn begin = start;
  Vpn stop = end;
  if (next != spans_.begin()) {
    auto prev = std::prev(next);
    if (prev->second == start) {
      begin = prev->first;
      spans_.erase(prev);
    }
  }
  if (next != spans_.end() && next->first == end) {
    stop = next->second;
    spans_.erase(next);
  }
  spans_[begin] = stop;
  reserved_ += pages;
}

bool AreaSet::covers(Vpn start, std::uint64_t pages) const {
  auto it = spans_.upper_bound(start);
  if (it == spans_.begin()) return false;
  --it;
  return it->first <= start && start + pages <= it->second;
}

void AreaSet::release(Vpn start, std::uint64_t pages) {
  if (pages == 0) return;
  if (!covers(start, pages)) fail(Errc::NotReserved, "range " + range_text(start, pages) + " is not reserved");
  auto it = std::prev(spans_.upper_bound(start));
  const Vpn begin = it->first;
  const Vpn stop = it->second;
  const Vpn end = start + pages;
  spans_.erase(it);
  if (begin < start) spans_[begin] = start;
  if (end < stop) spans_[end] = stop;
  reserved_ -= pages;
}

std::vector<AreaSet::Span> AreaSet::spans() const {
  std::vector<Span> out;
  out.reserve(spans_.size());
  for (const auto& [b, e] : spans_) out.push_back(Span{b, e});
  return out;
}

std::uint64_t AreaSet::mappable_windows(PageSize size) const {
  const std::uint64_t n = frames_of(size);
  std::uint64_t total = 0;
  for (const auto& [b, e] : spans_) {
    const std::uint64_t first = (b + n - 1) / n;
    const std::uint64_t last = e / n;
    if (last > first) total += last - first;
  }
  return total;
}

// ---- PageTable ----

PageTable::Giga* PageTable::giga(Vpn vpn) {
  auto it = gigas_.find(vpn >> kGigaShift);
  return it == gigas_.end() ? nullptr : &it->second;
}

const PageTable::Giga* PageTable::giga(Vpn vpn) const {
  auto it = gigas_.find(vpn >> kGigaShift);
  return it == gigas_.end() ? nullptr : &it->second;
}

void PageTable::drop_if_empty(Vpn vpn) {
  auto it = gigas_.find(vpn >> kGigaShift);
  if (it != gigas_.end() && it->second.huge == kNone && it->second.pages == 0) gigas_.erase(it);
}

std::optional<Translation> PageTable::lookup(Vpn vpn) const {
  const Giga* g = giga(vpn);
  if (!g) return std::nullopt;
  if (g->huge != kNone) return Translation{align_down(vpn, kRegionFrames), g->huge, PageSize::k1G};
  if (!g->mids) return std::nullopt;
  const Mid& m = (*g->mids)[(vpn >> kMidShift) & kMidMask];
  if (m.large != kNone) return Translation{align_down(vpn, 512), m.large, PageSize::k2M};
  if (!m.leaf) return std::nullopt;
  const Pfn p = m.leaf->pfn[vpn & kMidMask];
  if (p == kNone) return std::nullopt;
  return Translation{vpn, p, PageSize::k4K};
}

void PageTable::insert(Vpn vpn, PageSize size, Pfn pfn) {
  const std::uint64_t n = frames_of(size);
  if (!is_aligned(vpn, n) || !is_aligned(pfn, n)) {
    fail(Errc::Alignment, "mapping " + std::to_string(vpn) + "->" + std::to_string(pfn) + " not aligned to " +
                              std::string(to_string(size)));
  }
  if (mapped_pages(vpn, size) != 0) fail(Errc::Overlap, "vpn " + std::to_string(vpn) + " already mapped");
  Giga& g = gigas_[vpn >> kGigaShift];
  switch (size) {
    case PageSize::k1G:
      g.huge = pfn;
      g.mids.reset();
      break;
    case PageSize::k2M: {
      if (!g.mids) g.mids = std::make_unique<std::array<Mid, 512>>();
      Mid& m = (*g.mids)[(vpn >> kMidShift) & kMidMask];
      m.leaf.reset();
      m.large = pfn;
      g.pages += 512;
      break;
    }
    case PageSize::k4K: {
      if (!g.mids) g.mids = std::make_unique<std::array<Mid, 512>>();
      Mid& m = (*g.mids)[(vpn >> kMidShift) & kMidMask];
      if (!m.leaf) m.leaf = std::make_unique<Leaf>();
      m.leaf->pfn[vpn & kMidMask] = pfn;
      ++m.leaf->count;
      ++g.pages;
      break;
    }
  }
  ++counts_[size_index(size)];
}

Pfn PageTable::erase(Vpn vpn, PageSize size) {
  auto t = lookup(vpn);
  if (!t || t->vpn != vpn || t->size != size) {
    fail(Errc::NotMapped, "no " + std::string(to_string(size)) + " mapping at vpn " + std::to_string(vpn));
  }
  Giga& g = *giga(vpn);
  switch (size) {
    case PageSize::k1G:
      g.huge = kNone;
      break;
    case PageSize::k2M:
      (*g.mids)[(vpn >> kMidShift) & kMidMask].large = kNone;
      g.pages -= 512;
      break;
    case PageSize::k4K: {
      Mid& m = (*g.mids)[(vpn >> kMidShift) & kMidMask];
      m.leaf->pfn[vpn & kMidMask] = kNone;
      if (--m.leaf->count == 0) m.leaf.reset();
      --g.pages;
      break;
    }
  }
  if (g.pages == 0) g.mids.reset();
  --counts_[size_index(size)];
  drop_if_empty(vpn);
  return t->pfn;
}

void PageTable::repoint(Vpn vpn, PageSize size, Pfn pfn) {
  auto t = lookup(vpn);
  if (!t || t->vpn != vpn || t->size != size) {
    fail(Errc::NotMapped, "no " + std::string(to_string(size)) + " mapping at vpn " + std::to_string(vpn));
  }
  if (!is_aligned(pfn, frames_of(size))) fail(Errc::Alignment, "pfn " + std::to_string(pfn) + " misaligned");
  Giga& g = *giga(vpn);
  switch (size) {
    case PageSize::k1G: g.huge = pfn; break;
    case PageSize::k2M: (*g.mids)[(vpn >> kMidShift) & kMidMask].large = pfn; break;
    case PageSize::k4K: (*g.mids)[(vpn >> kMidShift) & kMidMask].leaf->pfn[vpn & kMidMask] = pfn; break;
  }
}

std::uint64_t PageTable::mapped_pages(Vpn vpn, PageSize window) const {
  const Giga* g = giga(vpn);
  if (!g) return 0;
  if (g->huge != kNone) return frames_of(window);
  if (window == PageSize::k1G) return g->pages;
  if (!g->mids) return 0;
  const Mid& m = (*g->mids)[(vpn >> kMidShift) & kMidMask];
  if (m.large != kNone) return frames_of(window);
  if (!m.leaf) return 0;
  if (window == PageSize::k2M) return m.leaf->count;
  return m.leaf->pfn[vpn & kMidMask] != kNone ? 1 : 0;
}

void PageTable::for_each(Vpn begin, Vpn end, const std::function<void(const Translation&)>& fn) const {
  if (begin >= end) return;
  for (auto it = gigas_.lower_bound(begin >> kGigaShift); it != gigas_.end(); ++it) {
    const Vpn gbase = it->first << kGigaShift;
    if (gbase >= end) break;
    const Giga& g = it->second;
    if (g.huge != kNone) {
      if (gbase >= begin) fn(Translation{gbase, g.huge, PageSize::k1G});
      continue;
    }
    if (!g.mids) continue;
    for (std::uint64_t mi = 0; mi < 512; ++mi) {
      const Vpn mbase = gbase + (mi << kMidShift);
      if (mbase + 512 <= begin) continue;
      if (mbase >= end) break;
      const Mid& m = (*g.mids)[mi];
      if (m.large != kNone) {
        if (mbase >= begin) fn(Translation{mbase, m.large, PageSize::k2M});
        continue;
      }
      if (!m.leaf) continue;
      for (std::uint64_t li = 0; li < 512; ++li) {
        const Vpn v = mbase + li;
        if (v < begin) continue;
        if (v >= end) break;
        if (m.leaf->pfn[li] != kNone) fn(Translation{v, m.leaf->pfn[li], PageSize::k4K});
      }
    }
  }
}

void PageTable::for_each(const std::function<void(const Translation&)>& fn) const {
  for_each(0, ~0ull, fn);
}

std::uint64_t PageTable::mapped_pages() const {
  return counts_[0] + counts_[1] * frames_of(PageSize::k2M) + counts_[2] * frames_of(PageSize::k1G);
}

std::optional<Vpn> PageTable::next_populated_gigabyte(Vpn from) const {
  auto it = gigas_.lower_bound(from >> kGigaShift);
  if (it == gigas_.end()) return std::nullopt;
  return it->first << kGigaShift;
}

}  // namespace pagesim
