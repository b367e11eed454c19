#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pagesim/machine.hpp"

namespace pagesim {

enum class CompactionEngine : std::uint8_t { Normal, Smart };

std::string_view to_string(CompactionEngine engine);

struct CompactionReport {
  CompactionEngine engine = CompactionEngine::Normal;
  bool success = false;
  std::optional<Block> freed_block;
  std::uint64_t frames_copied = 0;
  std::uint64_t wasted_frames = 0;  // copies made in windows that were then abandoned
  std::uint64_t regions_scanned = 0;

  std::uint64_t bytes_copied() const { return frames_copied * kFrameBytes; }
};

// "engine,success,frames_copied,wasted_frames,regions_scanned"
std::string compaction_csv_header();
std::string compaction_csv_row(const CompactionReport& report);

// Both compaction engines over one machine. Migration goes through the
// reverse map, so every virtual page keeps its content.
class Compactor {
 public:
  explicit Compactor(Machine& machine);

  // Sequential scan. Candidate windows are order-aligned and visited from a
  // source cursor that persists across calls. Each movable frame moves to the
  // free frame found by a descending target cursor outside the window. An
  // unmovable frame, or one belonging to a mapping of the target order or
  // larger, abandons the window and its copies count as wasted.
  CompactionReport normal_compact(int order);

  // Counter-driven 1GB compaction: frees the clean region with the most free
  // frames by packing its contents into the fullest regions that still have
  // room. Fails without copying when no region qualifies or space is short.
  CompactionReport smart_compact();

  CompactionReport compact(CompactionEngine engine, int order) {
    return engine == CompactionEngine::Smart && order == kMaxOrder ? smart_compact() : normal_compact(order);
  }

  // Region smart compaction would free next, or nullopt.
  std::optional<std::size_t> smart_source() const;
  // Regions smart compaction would fill, in order, excluding the source.
  std::vector<std::size_t> smart_targets(std::size_t source) const;

  Pfn source_cursor() const { return source_cursor_; }
  Pfn target_cursor() const { return target_cursor_; }

 private:
  std::optional<Pfn> next_target(Pfn window_base, std::uint64_t window_frames);
  bool region_holds_gigantic_mapping(std::size_t region) const;

  Machine& machine_;
  Pfn source_cursor_ = 0;
  Pfn target_cursor_;
};

}  // namespace pagesim
