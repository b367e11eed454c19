#include "pagesim/promotion.hpp"

#include <algorithm>
#include <set>

#include "pagesim/error.hpp"

namespace pagesim {

namespace {

constexpr std::uint64_t kGig = kRegionFrames;
constexpr std::uint64_t kMeg = 512;

}  // namespace

std::string promotion_csv_header() { return "time,process,vpn,from_size,to_size,bytes_copied,mechanism"; }

std::string promotion_csv_row(const PromotionEvent& e) {
  return std::to_string(static_cast<std::uint64_t>(e.time_ns)) + "," + std::to_string(e.pid) + "," +
         std::to_string(e.vpn) + "," + std::string(to_string(e.from)) + "," + std::string(to_string(e.to)) + "," +
         std::to_string(e.bytes_copied) + "," + e.mechanism;
}

bool promote_range(Machine& machine, Pid pid, Vpn vpn, PageSize target, Pfn block) {
  return machine.collapse_window(pid, vpn, target, block, true);
}

Khugepaged::Khugepaged(Machine& machine, Compactor& compactor, PromotionConfig config)
    : machine_(machine), compactor_(compactor), config_(config) {
  if (config_.budget == 0) fail(Errc::Config, "khugepaged budget must be positive");
}

std::optional<Vpn> Khugepaged::next_window(const AddressSpace& as, Vpn from) const {
  for (const AreaSet::Span& s : as.areas.spans()) {
    if (s.end <= from) continue;
    return std::max(from, align_down(s.begin, kGig));
  }
  return std::nullopt;
}

std::vector<PromotionEvent> Khugepaged::step(double now_ns) {
  std::vector<Pid> candidates;
  for (const auto& [pid, as] : machine_.processes()) {
    if (as.promotable) candidates.push_back(pid);
  }
  if (candidates.empty()) return {};
  auto it = last_pid_ ? std::upper_bound(candidates.begin(), candidates.end(), *last_pid_) : candidates.begin();
  if (it == candidates.end()) it = candidates.begin();
  last_pid_ = *it;
  return step(*it, now_ns);
}

std::vector<PromotionEvent> Khugepaged::step(Pid pid, double now_ns) {
  std::vector<PromotionEvent> out;
  defer_1g_ = false;
  defer_2m_ = false;
  Vpn& cursor = cursors_[pid];
  std::set<Vpn> seen;
  bool wrapped = false;
  for (std::size_t examined = 0; examined < config_.budget;) {
    auto w = next_window(machine_.process(pid), cursor);
    if (!w) {
      if (wrapped) break;
      wrapped = true;
      cursor = 0;
      continue;
    }
    if (!seen.insert(*w).second) break;
    cursor = *w + kGig;
    scan_window(pid, *w, now_ns, out);
    ++examined;
    ++stats_.windows_examined;
  }
  return out;
}

std::optional<Pfn> Khugepaged::obtain_block(int order, CompactionEngine engine, bool& deferred) {
  PhysicalMemory& mem = machine_.memory();
  if (auto p = mem.try_alloc_block(order, Movability::Movable)) return p;
  if (!config_.compact || deferred) return std::nullopt;
  CompactionReport report = compactor_.compact(engine, order);
  stats_.compaction_frames_copied += report.frames_copied;
  stats_.compaction_wasted_frames += report.wasted_frames;
  stats_.compaction_latency_ns += static_cast<double>(report.frames_copied) * config_.copy_4k_ns;
  compactions_.push_back(report);
  if (!report.success) {
    deferred = true;
    return std::nullopt;
  }
  if (!mem.claim_block(report.freed_block->base, order, Movability::Movable)) {
    fail(Errc::InvariantViolation, "compaction reported a block that cannot be allocated");
  }
  return report.freed_block->base;
}

void Khugepaged::scan_window(Pid pid, Vpn window, double now_ns, std::vector<PromotionEvent>& out) {
  AddressSpace& as = machine_.process(pid);
  if (auto t = as.table.lookup(window); t && t->size == PageSize::k1G) return;
  const std::uint64_t mapped = as.table.mapped_pages(window, PageSize::k1G);
  if (mapped == 0) return;

  if (config_.allow_1g && mapped == kGig && as.areas.covers(window, kGig)) {
    ++stats_.attempts_1g;
    PageSize smallest = PageSize::k2M;
    if (auto block = obtain_block(kMaxOrder, config_.engine_1g, defer_1g_)) {
      ++stats_.promotions_1g;
      // Compaction may have split pages of this very window, so look after it.
      as.table.for_each(window, window + kGig, [&](const Translation& t) { smallest = smaller_of(smallest, t.size); });
      if (copyless_ && smallest == PageSize::k2M) {
        const CopylessResult r = copyless_->promote(pid, window, *block);
        ++stats_.copyless_1g;
        stats_.bytes_copied += r.bytes_copied;
        stats_.latency_ns += r.latency_ns;
        stats_.hypercalls += r.hypercalls;
        out.push_back(PromotionEvent{now_ns, pid, window, PageSize::k2M, PageSize::k1G, r.bytes_copied, "copyless"});
        return;
      }
      promote_range(machine_, pid, window, PageSize::k1G, *block);
      stats_.bytes_copied += kGiB;
      stats_.latency_ns += static_cast<double>(kGig) * config_.copy_4k_ns;
      out.push_back(PromotionEvent{now_ns, pid, window, smallest, PageSize::k1G, kGiB, "copy"});
      return;
    }
    ++stats_.failures_1g;
  }

  if (!config_.allow_2m) return;
  for (Vpn sub = window; sub < window + kGig; sub += kMeg) {
    if (as.table.mapped_pages(sub, PageSize::k2M) != kMeg || !as.areas.covers(sub, kMeg)) continue;
    if (auto t = as.table.lookup(sub); !t || t->size != PageSize::k4K) continue;
    auto block = obtain_block(order_of(PageSize::k2M), config_.engine_2m, defer_2m_);
    if (!block) break;
    promote_range(machine_, pid, sub, PageSize::k2M, *block);
    ++stats_.promotions_2m;
    stats_.bytes_copied += 2 * kMiB;
    stats_.latency_ns += static_cast<double>(kMeg) * config_.copy_4k_ns;
    out.push_back(PromotionEvent{now_ns, pid, sub, PageSize::k4K, PageSize::k2M, 2 * kMiB, "copy"});
  }
}

}  // namespace pagesim
