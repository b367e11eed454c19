#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "pagesim/address_space.hpp"
#include "pagesim/physical_memory.hpp"

namespace pagesim {

// Physical memory plus the processes mapped onto it. Every mapping is backed
// by exactly one allocated buddy block of the same order, and every frame of
// that block records (pid, vpn) as its owner.
class Machine {
 public:
  // Called after a mapping is removed or repointed, with its old geometry.
  using Listener = std::function<void(Pid, const Translation&)>;

  explicit Machine(std::uint64_t frames, PhysicalMemory::Options options = {});

  PhysicalMemory& memory() { return mem_; }
  const PhysicalMemory& memory() const { return mem_; }

  AddressSpace& create_process(Pid pid, bool promotable = true);
  bool has_process(Pid pid) const { return procs_.count(pid) != 0; }
  AddressSpace& process(Pid pid);
  const AddressSpace& process(Pid pid) const;
  const std::map<Pid, AddressSpace>& processes() const { return procs_; }
  std::vector<Pid> pids() const;

  void reserve_area(Pid pid, Vpn start, std::uint64_t pages);
  // Unmaps everything in the range (demoting straddling large mappings) and unreserves it.
  void release_area(Pid pid, Vpn start, std::uint64_t pages);

  // Maps an allocated, unowned block of the matching order. The VA range must be reserved.
  void map_range(Pid pid, Vpn vpn, PageSize size, Pfn pfn);
  // Removes exactly one mapping and frees its block.
  void unmap_range(Pid pid, Vpn vpn, PageSize size);

  // Demotes the large mapping containing vpn into 4KB mappings over the same frames.
  void split_mapping(Pid pid, Vpn vpn);

  // Moves the 4KB-mapped frame `from` to `to`, an allocated unowned order-0
  // block, copying its content and repointing the owner's mapping. Frees `from`.
  void migrate_frame(Pfn from, Pfn to);

  // Replaces every mapping inside the target-size window at vpn by one mapping
  // onto `block`, an allocated unowned block of the target order. With `copy`,
  // each old page's content is copied to its offset in the block. Returns false
  // if the window is already mapped at the target size or larger.
  // Throws PartialWindow if any page of the window is unmapped.
  bool collapse_window(Pid pid, Vpn vpn, PageSize target, Pfn block, bool copy);

  // Swaps the frames behind two equal-size mappings of one process.
  void exchange_mappings(Pid pid, Vpn a, Vpn b);

  // Swaps two allocated blocks of one order between whatever owns them. Each
  // block is either unowned or the whole backing of one mapping of that order,
  // possibly in different processes. Contents stay with the frames.
  void swap_backing(Pfn a, Pfn b, int order);

  std::optional<Translation> lookup(Pid pid, Vpn vpn) const;
  // Frame backing exactly this 4KB page.
  std::optional<Pfn> translate(Pid pid, Vpn vpn) const;
  ContentToken read(Pid pid, Vpn vpn) const;
  void write(Pid pid, Vpn vpn, ContentToken token);

  std::uint64_t mappable_bytes(Pid pid, PageSize size) const;
  std::uint64_t mapped_bytes(PageSize size) const;
  std::uint64_t mapped_bytes(Pid pid, PageSize size) const;

  void set_listener(Listener listener) { listener_ = std::move(listener); }

  // Frame ownership, block geometry and allocator state all agree. Throws InvariantViolation.
  void check_invariants() const;

 private:
  void notify(Pid pid, const Translation& old) {
    if (listener_) listener_(pid, old);
  }

  PhysicalMemory mem_;
  std::map<Pid, AddressSpace> procs_;
  Listener listener_;
};

}  // namespace pagesim
