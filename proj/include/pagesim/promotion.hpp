#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pagesim/compaction.hpp"
#include "pagesim/machine.hpp"

namespace pagesim {

struct PromotionEvent {
  double time_ns = 0;
  Pid pid = 0;
  Vpn vpn = 0;
  PageSize from = PageSize::k4K;  // smallest page size replaced
  PageSize to = PageSize::k2M;
  std::uint64_t bytes_copied = 0;
  std::string mechanism;  // "copy" or "copyless"
};

// "time,process,vpn,from_size,to_size,bytes_copied,mechanism"
std::string promotion_csv_header();
std::string promotion_csv_row(const PromotionEvent& event);

struct PromotionConfig {
  std::size_t budget = 8;  // 1GB windows examined per step
  bool allow_1g = true;
  bool allow_2m = true;
  CompactionEngine engine_1g = CompactionEngine::Smart;
  CompactionEngine engine_2m = CompactionEngine::Normal;
  bool compact = true;
  double copy_4k_ns = 600e6 / 262144.0;  // cost of copying one 4KB frame
};

// Outcome of promoting a 2MB-mapped window without copying through the guest.
struct CopylessResult {
  double latency_ns = 0;
  std::uint64_t bytes_copied = 0;  // fallback copies
  std::uint64_t hypercalls = 0;
  std::uint64_t failed_entries = 0;
};

// Alternative 1GB promotion path for windows mapped entirely by 2MB pages.
// `block` is an allocated, unowned 1GB block; the promoter must leave the
// window mapped onto it with every page's content intact.
class CopylessPromoter {
 public:
  virtual ~CopylessPromoter() = default;
  virtual CopylessResult promote(Pid pid, Vpn window, Pfn block) = 0;
};

// Copies every page of the target-size window at vpn into `block` (an
// allocated, unowned block of the target order) and remaps the window as one
// page. Returns false and does nothing if the window already has a mapping of
// the target size or larger. Throws PartialWindow on holes.
bool promote_range(Machine& machine, Pid pid, Vpn vpn, PageSize target, Pfn block);

struct PromotionStats {
  std::uint64_t promotions_1g = 0;
  std::uint64_t promotions_2m = 0;
  std::uint64_t copyless_1g = 0;
  std::uint64_t bytes_copied = 0;
  double latency_ns = 0;
  std::uint64_t compaction_frames_copied = 0;
  std::uint64_t compaction_wasted_frames = 0;
  double compaction_latency_ns = 0;
  std::uint64_t hypercalls = 0;
  std::uint64_t windows_examined = 0;
  std::uint64_t attempts_1g = 0;
  std::uint64_t failures_1g = 0;
};

// Background promotion. Each step picks the next promotable process by id and
// scans up to `budget` of its 1GB windows from where the last scan stopped. A
// fully mapped window goes to 1GB (buddy, else compaction); otherwise each of
// its fully 4KB-mapped 2MB sub-windows goes to 2MB.
class Khugepaged {
 public:
  Khugepaged(Machine& machine, Compactor& compactor, PromotionConfig config = {});

  std::vector<PromotionEvent> step(double now_ns);
  std::vector<PromotionEvent> step(Pid pid, double now_ns);

  void set_copyless(CopylessPromoter* promoter) { copyless_ = promoter; }

  const PromotionStats& stats() const { return stats_; }
  const std::vector<CompactionReport>& compactions() const { return compactions_; }
  const PromotionConfig& config() const { return config_; }

 private:
  std::optional<Pfn> obtain_block(int order, CompactionEngine engine, bool& compaction_failed);
  void scan_window(Pid pid, Vpn window, double now_ns, std::vector<PromotionEvent>& out);
  std::optional<Vpn> next_window(const AddressSpace& as, Vpn from) const;

  Machine& machine_;
  Compactor& compactor_;
  PromotionConfig config_;
  CopylessPromoter* copyless_ = nullptr;
  std::map<Pid, Vpn> cursors_;
  std::optional<Pid> last_pid_;
  PromotionStats stats_;
  std::vector<CompactionReport> compactions_;
  // Per-step deferral: after one failed compaction at an order, skip further attempts this step.
  bool defer_1g_ = false;
  bool defer_2m_ = false;
};

}  // namespace pagesim
