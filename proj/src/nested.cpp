#include "pagesim/nested.hpp"

#include <algorithm>
#include <unordered_set>

#include "pagesim/error.hpp"

namespace pagesim {

namespace {

void put_le64(std::uint8_t* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint64_t get_le64(const std::uint8_t* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

constexpr std::size_t kTargetOffset = kBatchCapacity * 8;

void check_count(std::size_t count) {
  if (count > kBatchCapacity) fail(Errc::InvalidBatch, "batch of " + std::to_string(count) + " exceeds 512 entries");
}

}  // namespace

void PvLatency::validate() const {
  if (!(hypercall_ns > 0 && per_entry_ns > 0 && copy_2m_ns > 0)) {
    fail(Errc::Config, "paravirtual latency constants must be positive");
  }
}

void ExchangeBatch::validate() const {
  if (sources.size() != targets.size()) fail(Errc::InvalidBatch, "source and target lists differ in length");
  check_count(sources.size());
  for (const auto* list : {&sources, &targets}) {
    std::unordered_set<std::uint64_t> seen;
    for (std::uint64_t a : *list) {
      if (!seen.insert(a).second) fail(Errc::InvalidBatch, "address " + std::to_string(a) + " repeated in a list");
    }
  }
}

SharedPages encode_batch(const ExchangeBatch& batch) {
  batch.validate();
  SharedPages pages{};
  for (std::size_t i = 0; i < batch.count(); ++i) {
    put_le64(&pages[i * 8], batch.sources[i]);
    put_le64(&pages[kTargetOffset + i * 8], batch.targets[i]);
  }
  return pages;
}

ExchangeBatch decode_batch(const SharedPages& pages, std::size_t count, PageSize size) {
  check_count(count);
  ExchangeBatch batch;
  batch.page_size = size;
  for (std::size_t i = 0; i < count; ++i) {
    batch.sources.push_back(get_le64(&pages[i * 8]));
    batch.targets.push_back(get_le64(&pages[kTargetOffset + i * 8]));
  }
  return batch;
}

void encode_results(const ExchangeBatch& batch, SharedPages& pages) {
  for (std::size_t i = 0; i < batch.results.size(); ++i) {
    put_le64(&pages[i * 8], static_cast<std::uint64_t>(batch.results[i]));
  }
}

std::vector<ExchangeStatus> decode_results(const SharedPages& pages, std::size_t count) {
  check_count(count);
  std::vector<ExchangeStatus> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<ExchangeStatus>(get_le64(&pages[i * 8])));
  return out;
}

class NestedMap::Store : public ContentStore {
 public:
  explicit Store(NestedMap& nested) : nested_(nested) {}

  ContentToken load(Pfn gpa) const override {
    const Machine& host = nested_.host_;
    auto h = host.translate(nested_.vm_pid(), gpa);
    return h ? host.memory().content(*h) : ContentToken{};
  }

  void store(Pfn gpa, ContentToken token) override {
    nested_.back(gpa);
    nested_.host_.write(nested_.vm_pid(), gpa, token);
  }

 private:
  NestedMap& nested_;
};

NestedMap::NestedMap(NestedConfig config)
    : config_(config),
      host_(config.host_frames),
      host_faults_(host_, config.host_sizes, FaultLatency{}, config.host_pool),
      guest_(config.guest_frames),
      store_(std::make_unique<Store>(*this)) {
  config_.latency.validate();
  host_.create_process(config_.vm_pid, true);
  host_.reserve_area(config_.vm_pid, 0, config_.guest_frames);
  guest_.memory().set_content_store(store_.get());
}

NestedMap::~NestedMap() { guest_.memory().set_content_store(nullptr); }

NestedTranslation NestedMap::translate_nested(Pid pid, Vpn gva) const {
  auto g = guest_.lookup(pid, gva);
  if (!g) fail(Errc::GuestUnmapped, "guest page " + std::to_string(gva) + " of process " + std::to_string(pid));
  const Pfn gpa = g->pfn + (gva - g->vpn);
  auto h = host_.lookup(config_.vm_pid, gpa);
  if (!h) fail(Errc::HostUnmapped, "guest frame " + std::to_string(gpa));
  NestedTranslation out;
  out.host_frame = h->pfn + (gpa - h->vpn);
  out.guest_size = g->size;
  out.host_size = h->size;
  out.walk_accesses = nested_walk_accesses(g->size, h->size);
  return out;
}

void NestedMap::back(Pfn gpa, std::uint64_t frames) {
  const Pfn end = gpa + frames;
  Pfn p = gpa;
  while (p < end) {
    auto t = host_.lookup(config_.vm_pid, p);
    if (!t) t = host_faults_.handle_fault(config_.vm_pid, p).mapping;
    p = t->vpn + frames_of(t->size);
  }
}

ExchangeResult NestedMap::hypercall(ExchangeBatch& batch) {
  batch.validate();
  auto status_of = [&](std::uint64_t addr, ExchangeStatus unmapped) -> ExchangeStatus {
    if (!is_aligned(addr, bytes_of(batch.page_size))) return ExchangeStatus::Misaligned;
    const Vpn gpa = addr >> kFrameShift;
    auto t = host_.lookup(config_.vm_pid, gpa);
    if (!t) return unmapped;
    if (t->size != batch.page_size) return ExchangeStatus::SizeMismatch;
    return t->vpn == gpa ? ExchangeStatus::Ok : ExchangeStatus::Misaligned;
  };
  ExchangeResult result;
  batch.results.assign(batch.count(), ExchangeStatus::Ok);
  for (std::size_t i = 0; i < batch.count(); ++i) {
    ExchangeStatus st = status_of(batch.sources[i], ExchangeStatus::SourceUnmapped);
    if (st == ExchangeStatus::Ok) st = status_of(batch.targets[i], ExchangeStatus::TargetUnmapped);
    batch.results[i] = st;
    if (st != ExchangeStatus::Ok) {
      ++result.failed;
      continue;
    }
    host_.exchange_mappings(config_.vm_pid, batch.sources[i] >> kFrameShift, batch.targets[i] >> kFrameShift);
    ++result.applied;
  }
  ++hypercalls_;
  result.hypercalls = 1;
  result.latency_ns = config_.latency.hypercall_ns + config_.latency.per_entry_ns * static_cast<double>(batch.count());
  return result;
}

std::vector<ExchangeStatus> NestedMap::exchange_blocks(const std::vector<std::pair<Pfn, Pfn>>& pairs, PageSize size,
                                                       ExchangeResult& summary) {
  const PhysicalMemory& mem = guest_.memory();
  const int order = order_of(size);
  for (const auto& [s, t] : pairs) {
    for (Pfn b : {s, t}) {
      if (mem.allocated_order(b) != order) {
        fail(Errc::InvalidBatch, "guest frame " + std::to_string(b) + " is not an allocated " +
                                     std::string(to_string(size)) + " block");
      }
      if (mem.owner(b) && mem.map_order(b) != order) {
        fail(Errc::InvalidBatch, "guest frame " + std::to_string(b) + " is mapped at another size");
      }
    }
  }
  std::vector<ExchangeStatus> out;
  out.reserve(pairs.size());
  for (std::size_t first = 0; first < pairs.size(); first += kBatchCapacity) {
    const std::size_t last = std::min(pairs.size(), first + kBatchCapacity);
    ExchangeBatch batch;
    batch.page_size = size;
    for (std::size_t i = first; i < last; ++i) {
      batch.sources.push_back(pairs[i].first << kFrameShift);
      batch.targets.push_back(pairs[i].second << kFrameShift);
    }
    const ExchangeResult r = hypercall(batch);
    summary.applied += r.applied;
    summary.failed += r.failed;
    summary.hypercalls += r.hypercalls;
    summary.latency_ns += r.latency_ns;
    for (std::size_t i = first; i < last; ++i) {
      const ExchangeStatus st = batch.results[i - first];
      if (st == ExchangeStatus::Ok) guest_.swap_backing(pairs[i].first, pairs[i].second, order);
      out.push_back(st);
    }
  }
  return out;
}

CopylessResult PvPromoter::promote(Pid pid, Vpn window, Pfn block) {
  Machine& guest = nested_.guest();
  const std::uint64_t step = frames_of(PageSize::k2M);
  const std::uint64_t pages = frames_of(PageSize::k1G) / step;
  nested_.back(block, frames_of(PageSize::k1G));

  ExchangeBatch batch;
  batch.page_size = PageSize::k2M;
  std::vector<Pfn> sources;
  for (std::uint64_t i = 0; i < pages; ++i) {
    auto t = guest.lookup(pid, window + i * step);
    if (!t || t->size != PageSize::k2M) fail(Errc::PartialWindow, "copyless promotion needs a window of 2MB pages");
    sources.push_back(t->pfn);
    batch.sources.push_back(t->pfn << kFrameShift);
    batch.targets.push_back((block + i * step) << kFrameShift);
  }
  const ExchangeResult r = nested_.hypercall(batch);

  CopylessResult out;
  out.hypercalls = r.hypercalls;
  out.latency_ns = r.latency_ns;
  out.failed_entries = r.failed;
  PhysicalMemory& mem = guest.memory();
  for (std::uint64_t i = 0; i < pages; ++i) {
    if (batch.results[i] == ExchangeStatus::Ok) continue;
    for (std::uint64_t j = 0; j < step; ++j) mem.copy_content(sources[i] + j, block + i * step + j);
    out.bytes_copied += bytes_of(PageSize::k2M);
    out.latency_ns += nested_.config().latency.copy_2m_ns;
  }
  guest.collapse_window(pid, window, PageSize::k1G, block, false);
  return out;
}

}  // namespace pagesim
