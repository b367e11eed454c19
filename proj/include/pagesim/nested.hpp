#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "pagesim/fault_handler.hpp"
#include "pagesim/machine.hpp"
#include "pagesim/promotion.hpp"
#include "pagesim/tlb.hpp"

namespace pagesim {

struct PvLatency {
  double hypercall_ns = 300;
  double per_entry_ns = 1000;            // host PTE update per exchanged entry
  double copy_2m_ns = 600e6 / 512.0;     // guest-side copy of one 2MB page

  void validate() const;
};

enum class ExchangeStatus : std::uint64_t {
  Ok = 0,
  SourceUnmapped = 1,
  TargetUnmapped = 2,
  SizeMismatch = 3,
  Misaligned = 4,
};

inline constexpr std::size_t kBatchCapacity = 512;

// One hypercall worth of exchange requests. Addresses are guest physical byte
// addresses. `page_size` travels as a call argument next to the count: an entry
// succeeds only when both addresses are bases of host mappings of that size.
struct ExchangeBatch {
  PageSize page_size = PageSize::k2M;
  std::vector<std::uint64_t> sources;
  std::vector<std::uint64_t> targets;
  std::vector<ExchangeStatus> results;  // filled by the hypercall

  std::size_t count() const { return sources.size(); }
  // Throws InvalidBatch on length mismatch, overflow, or a repeated address within a list.
  void validate() const;
};

// The two shared pages: 512 little-endian sources then 512 targets. After
// the call each source slot holds that entry's status word.
using SharedPages = std::array<std::uint8_t, 2 * kFrameBytes>;

SharedPages encode_batch(const ExchangeBatch& batch);
ExchangeBatch decode_batch(const SharedPages& pages, std::size_t count, PageSize size);
void encode_results(const ExchangeBatch& batch, SharedPages& pages);
std::vector<ExchangeStatus> decode_results(const SharedPages& pages, std::size_t count);

struct ExchangeResult {
  std::size_t applied = 0;
  std::size_t failed = 0;
  std::uint64_t hypercalls = 0;
  double latency_ns = 0;
};

struct NestedConfig {
  std::uint64_t guest_frames = kRegionFrames;
  std::uint64_t host_frames = 2 * kRegionFrames;
  Pid vm_pid = 1;
  FaultSizes host_sizes{false, true};
  ZeroPoolConfig host_pool{false, 0, 0};
  PvLatency latency;
};

struct NestedTranslation {
  Pfn host_frame = 0;
  PageSize guest_size = PageSize::k4K;
  PageSize host_size = PageSize::k4K;
  int walk_accesses = 0;

  // The size a TLB entry for this translation can cover.
  PageSize entry_size() const { return smaller_of(guest_size, host_size); }
};

// A guest machine whose physical memory is the address space of one host
// process. Guest frame g is host vpn g of `vm_pid`; guest content lives in
// host frames, so a host remap moves data under the guest. Host pages are
// faulted in on first store.
class NestedMap {
 public:
  explicit NestedMap(NestedConfig config = {});
  ~NestedMap();
  NestedMap(const NestedMap&) = delete;
  NestedMap& operator=(const NestedMap&) = delete;

  Machine& guest() { return guest_; }
  const Machine& guest() const { return guest_; }
  Machine& host() { return host_; }
  const Machine& host() const { return host_; }
  FaultHandler& host_faults() { return host_faults_; }
  const NestedConfig& config() const { return config_; }
  Pid vm_pid() const { return config_.vm_pid; }

  // Throws GuestUnmapped or HostUnmapped.
  NestedTranslation translate_nested(Pid pid, Vpn gva) const;

  // Faults in host backing for every unbacked guest frame of the range.
  void back(Pfn gpa, std::uint64_t frames = 1);

  // The exchange hypercall: for each entry whose source and target are both
  // bases of equal-size host mappings, swap their host frames. Other entries
  // are logged and left alone. Fills batch.results.
  ExchangeResult hypercall(ExchangeBatch& batch);

  // Guest-coordinated exchange of guest blocks of one size, split into
  // batches of 512. For every entry the host swapped, the guest swaps which
  // of its mappings uses each block, so every guest virtual page keeps its
  // content. Every block must be allocated at that size and either unowned or
  // one whole guest mapping (InvalidBatch otherwise). Returns per-pair status
  // in input order.
  std::vector<ExchangeStatus> exchange_blocks(const std::vector<std::pair<Pfn, Pfn>>& pairs, PageSize size,
                                              ExchangeResult& summary);

  std::uint64_t hypercalls() const { return hypercalls_; }

 private:
  class Store;

  NestedConfig config_;
  Machine host_;
  FaultHandler host_faults_;
  Machine guest_;
  std::unique_ptr<Store> store_;
  std::uint64_t hypercalls_ = 0;
};

// 1GB promotion of a window of 2MB guest pages by exchanging host mappings
// instead of copying. The target block's range is backed first; each 2MB page
// becomes one exchange entry, and entries the host refuses are copied.
class PvPromoter : public CopylessPromoter {
 public:
  explicit PvPromoter(NestedMap& nested) : nested_(nested) {}

  CopylessResult promote(Pid pid, Vpn window, Pfn block) override;

 private:
  NestedMap& nested_;
};

}  // namespace pagesim
