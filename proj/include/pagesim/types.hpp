#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace pagesim {

using Pid = std::uint32_t;
using Pfn = std::uint64_t;  // physical frame number (4KB units)
using Vpn = std::uint64_t;  // virtual page number (4KB units)

inline constexpr unsigned kFrameShift = 12;
inline constexpr std::uint64_t kFrameBytes = 1ull << kFrameShift;
inline constexpr int kMaxOrder = 18;
inline constexpr int kRegionOrder = 18;
inline constexpr std::uint64_t kRegionFrames = 1ull << kRegionOrder;  // 262,144
inline constexpr std::uint64_t kKiB = 1024;
inline constexpr std::uint64_t kMiB = 1024 * kKiB;
inline constexpr std::uint64_t kGiB = 1024 * kMiB;

// The three x86-64 page sizes. The enumerator value is the buddy order.
enum class PageSize : std::uint8_t { k4K = 0, k2M = 9, k1G = 18 };

inline constexpr PageSize kAllPageSizes[] = {PageSize::k4K, PageSize::k2M, PageSize::k1G};

constexpr int order_of(PageSize size) { return static_cast<int>(size); }
constexpr std::uint64_t frames_of(PageSize size) { return 1ull << order_of(size); }
constexpr std::uint64_t bytes_of(PageSize size) { return frames_of(size) * kFrameBytes; }

// Index 0/1/2 for 4K/2M/1G, for per-size counter arrays.
constexpr std::size_t size_index(PageSize size) {
  switch (size) {
    case PageSize::k4K: return 0;
    case PageSize::k2M: return 1;
    case PageSize::k1G: return 2;
  }
  return 0;
}

// Native page-table levels walked to reach a leaf of this size.
constexpr int walk_levels(PageSize size) {
  switch (size) {
    case PageSize::k4K: return 4;
    case PageSize::k2M: return 3;
    case PageSize::k1G: return 2;
  }
  return 4;
}

constexpr PageSize smaller_of(PageSize a, PageSize b) { return order_of(a) < order_of(b) ? a : b; }

std::string_view to_string(PageSize size);
std::optional<PageSize> parse_page_size(std::string_view text);

enum class Movability : std::uint8_t { Movable, Unmovable };

// Opaque identifier of the data held by a frame. Zero means "no content".
struct ContentToken {
  std::uint64_t value = 0;

  explicit operator bool() const { return value != 0; }
  friend auto operator<=>(const ContentToken&, const ContentToken&) = default;
};

// Token for the data first written by `pid` to virtual page `vpn` during fault number `seq`.
constexpr ContentToken make_content_token(Pid pid, Vpn vpn, std::uint64_t seq) {
  return ContentToken{(static_cast<std::uint64_t>(pid + 1) << 48) ^ ((seq & 0xfff) << 36) ^
                      (vpn & ((1ull << 36) - 1))};
}

// Reverse-map entry of a movable frame: which process page maps it.
struct OwnerRef {
  Pid pid = 0;
  Vpn vpn = 0;
  friend bool operator==(const OwnerRef&, const OwnerRef&) = default;
};

constexpr std::uint64_t align_down(std::uint64_t value, std::uint64_t alignment) {
  return value & ~(alignment - 1);
}
constexpr bool is_aligned(std::uint64_t value, std::uint64_t alignment) {
  return (value & (alignment - 1)) == 0;
}

// Parses "8GB", "512MB", "4KB", "0x1000" or a plain byte count.
std::optional<std::uint64_t> parse_bytes(std::string_view text);
std::string format_bytes(std::uint64_t bytes);

}  // namespace pagesim
