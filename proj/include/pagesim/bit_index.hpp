#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace pagesim {

// Two-level bitmap with lowest-set-bit lookup. Backs one buddy free list.
class BitIndex {
 public:
  explicit BitIndex(std::size_t bits = 0)
      : bits_(bits), words_((bits + 63) / 64), summary_((words_.size() + 63) / 64) {}

  std::size_t size() const { return bits_; }
  std::size_t count() const { return count_; }

  bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }

  void set(std::size_t i) {
    std::uint64_t& w = words_[i >> 6];
    const std::uint64_t bit = 1ull << (i & 63);
    if (w & bit) return;
    w |= bit;
    ++count_;
    const std::size_t wi = i >> 6;
    summary_[wi >> 6] |= 1ull << (wi & 63);
    if ((wi >> 6) < hint_) hint_ = wi >> 6;
  }

  void reset(std::size_t i) {
    std::uint64_t& w = words_[i >> 6];
    const std::uint64_t bit = 1ull << (i & 63);
    if (!(w & bit)) return;
    w &= ~bit;
    --count_;
    if (w == 0) {
      const std::size_t wi = i >> 6;
      summary_[wi >> 6] &= ~(1ull << (wi & 63));
    }
  }

  std::optional<std::size_t> find_first() const {
    if (count_ == 0) return std::nullopt;
    for (std::size_t s = hint_; s < summary_.size(); ++s) {
      if (summary_[s] == 0) continue;
      hint_ = s;
      const std::size_t wi = s * 64 + static_cast<std::size_t>(std::countr_zero(summary_[s]));
      return wi * 64 + static_cast<std::size_t>(std::countr_zero(words_[wi]));
    }
    return std::nullopt;
  }

  // Lowest set bit at index >= from.
  std::optional<std::size_t> find_next(std::size_t from) const {
    if (from >= bits_) return std::nullopt;
    std::size_t wi = from >> 6;
    std::uint64_t w = words_[wi] & (~0ull << (from & 63));
    if (w) return wi * 64 + static_cast<std::size_t>(std::countr_zero(w));
    ++wi;
    std::size_t s = wi >> 6;
    if (s >= summary_.size()) return std::nullopt;
    std::uint64_t sw = (wi & 63) ? summary_[s] & (~0ull << (wi & 63)) : summary_[s];
    while (true) {
      if (sw) {
        const std::size_t found = s * 64 + static_cast<std::size_t>(std::countr_zero(sw));
        return found * 64 + static_cast<std::size_t>(std::countr_zero(words_[found]));
      }
      if (++s >= summary_.size()) return std::nullopt;
      sw = summary_[s];
    }
  }

 private:
  std::size_t bits_;
  std::size_t count_ = 0;
  std::vector<std::uint64_t> words_;
  std::vector<std::uint64_t> summary_;
  mutable std::size_t hint_ = 0;  // no summary word below this index is nonzero
};

}  // namespace pagesim
